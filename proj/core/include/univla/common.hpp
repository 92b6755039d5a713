#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace univla {

// Error taxonomy. Callers can map these onto process exit codes:
// InvalidArgument -> usage error, NotFoundError/CorruptStream/IoError -> data
// error, TrainingDiverged -> divergence.
struct InvalidArgument : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CorruptStream : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Deterministic random source. All randomness in the library flows through
/// this class so that a given seed yields identical artifacts on every
/// platform: the raw engine is mt19937_64 and every derived distribution
/// (uniform, normal, integer, shuffle) is implemented here rather than with
/// std::*_distribution, whose output is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal();

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t randint(std::uint64_t n);

    /// Fisher-Yates shuffle.
    template <typename T> void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(randint(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Derives an independent stream for a sub-task.
    Rng fork(std::uint64_t stream);

    std::uint64_t raw() { return eng_(); }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Little-endian binary primitives shared by all on-disk formats.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_f32(std::ostream& os, float v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
std::int32_t read_i32(std::istream& is);
float read_f32(std::istream& is);
void write_bytes(std::ostream& os, const void* data, std::size_t n);
void read_bytes(std::istream& is, void* data, std::size_t n);

/// Reads a 4-byte magic and throws CorruptStream if it differs.
void expect_magic(std::istream& is, const char magic[4], const std::string& what);
void write_magic(std::ostream& os, const char magic[4]);

// FNV-1a 64-bit content hashing, used for run manifests and idempotency.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64_str(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull);
std::uint64_t hash_file(const std::filesystem::path& p);
/// Hashes every regular file under a directory, in sorted relative-path
/// order, folding both path and content into one digest.
std::uint64_t hash_tree(const std::filesystem::path& dir);
std::string hash_hex(std::uint64_t h);

// Whole-file helpers.
std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& text);

/// Shortest round-trip decimal form of a double, stable across runs.
std::string format_g17(double v);

} // namespace univla
