#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace univla {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDiverged = 4;

inline constexpr const char* kToolkitVersion = "0.1.0";

/// One CLI invocation, already split into a command name and raw string
/// flags (flag name → value, no leading dashes).
struct Invocation {
    std::string command;
    std::map<std::string, std::string> cli;
    std::filesystem::path run_dir;     // output root; empty → default_run_dir()
    std::filesystem::path config_file; // optional key=value file
};

/// $UNIVLA_RUN_DIR if set, else "runs".
std::filesystem::path default_run_dir();

const std::vector<std::string>& command_names();

/// Resolves configuration with precedence CLI > file > defaults (each value's
/// source is logged), hashes the inputs, and either short-circuits — the
/// output directory already holds a manifest for this exact command, config,
/// and inputs, and its contents hash-verify — or acquires the directory lock
/// and runs the command. Returns a process exit code; errors are reported on
/// `err` and mapped to kExitUsage / kExitData / kExitDiverged.
int run_command(const Invocation& inv, std::ostream& log, std::ostream& err);

} // namespace univla
