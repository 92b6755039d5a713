#include "univla/harness.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

struct SubcommandInfo {
    const char* name;
    const char* help;
};

constexpr SubcommandInfo kCommands[] = {
    {"make_data", "Record scripted-expert demonstrations into an episode store"},
    {"fit_codecs", "Fit the action codec, image codebook, and vocabulary on a dataset"},
    {"posttrain", "Stage-1 training on one auxiliary sequence corpus"},
    {"finetune", "Policy fine-tuning, from scratch or from a stage-1 checkpoint"},
    {"eval", "Closed-loop rollout evaluation of a policy checkpoint"},
    {"ablate", "Stage-1 strategy sweep with data-fraction, history, and joint-loss arms"},
};

// Leftover tokens become the command's key=value flag map. Accepted shapes:
// --key=value and --key value.
std::map<std::string, std::string> collect_flags(const std::vector<std::string>& tokens) {
    std::map<std::string, std::string> flags;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (t.rfind("--", 0) != 0 || t.size() <= 2)
            throw CLI::ParseError("expected a --flag, got: " + t, CLI::ExitCodes::ExtrasError);
        const std::string body = t.substr(2);
        const auto eq = body.find('=');
        if (eq != std::string::npos) {
            flags[body.substr(0, eq)] = body.substr(eq + 1);
        } else {
            if (i + 1 == tokens.size())
                throw CLI::ParseError("flag --" + body + " expects a value",
                                      CLI::ExitCodes::ExtrasError);
            flags[body] = tokens[++i];
        }
    }
    return flags;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"univla: demonstration recording, tokenizer fitting, two-stage training,\n"
                 "and closed-loop evaluation for a discrete-token control model"};
    app.set_version_flag("--version", std::string(univla::kToolkitVersion));
    app.require_subcommand(1);

    std::string run_dir;
    std::string config_file;
    std::vector<CLI::App*> subs;
    for (const auto& info : kCommands) {
        CLI::App* sub = app.add_subcommand(info.name, info.help);
        sub->allow_extras();
        sub->add_option("--run-dir", run_dir,
                        "Root for relative paths and outputs (default: $UNIVLA_RUN_DIR or runs)");
        sub->add_option("--config", config_file, "key=value file consulted after CLI flags");
        subs.push_back(sub);
    }

    univla::Invocation inv;
    try {
        app.parse(argc, argv);
        CLI::App* active = nullptr;
        for (CLI::App* sub : subs)
            if (sub->parsed()) active = sub;
        inv.command = active->get_name();
        inv.cli = collect_flags(active->remaining());
        inv.run_dir = run_dir;
        inv.config_file = config_file;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return univla::kExitUsage;
    }

    return univla::run_command(inv, std::cout, std::cerr);
}
