#pragma once

#include "univla/vocab.hpp"

#include <Eigen/Dense>
#include <iosfwd>
#include <utility>
#include <vector>

namespace univla {

/// One window of continuous actions: rows are time steps (H), columns are
/// action dimensions (d).
using ActionChunk = Eigen::MatrixXd;

enum class RelativeMode { consecutive, first_frame };

/// Converts an absolute T×d track to relative form. consecutive returns the
/// (T−1)×d finite differences a[t+1]−a[t]; first_frame returns the T×d
/// offsets a[t]−a[0].
ActionChunk to_relative(const ActionChunk& absolute, RelativeMode mode);

/// Per-dimension 1st/99th percentiles of the pooled training actions.
struct NormalizationStats {
    Eigen::VectorXd p1;
    Eigen::VectorXd p99;

    int dims() const { return static_cast<int>(p1.size()); }
    void save(std::ostream& os) const;
    static NormalizationStats load(std::istream& is);
};

/// Percentile of pooled sorted values with linear interpolation, q in [0,1].
double percentile(std::vector<double> values, double q);

NormalizationStats fit_normalizer(const std::vector<ActionChunk>& corpus);

/// Maps x to 2·(x−p1)/(p99−p1)−1 per dimension and clips to [−1,1].
/// Dimensions with p1=p99 map to 0.
ActionChunk normalize(const ActionChunk& chunk, const NormalizationStats& stats);
ActionChunk denormalize(const ActionChunk& chunk, const NormalizationStats& stats);

/// Orthonormal DCT-II along the time axis, independently per dimension.
ActionChunk dct_forward(const ActionChunk& chunk);
ActionChunk dct_inverse(const ActionChunk& coeffs);

/// q = round(γ·c), half away from zero.
Eigen::MatrixXi quantize(const ActionChunk& coeffs, double gamma);
ActionChunk dequantize(const Eigen::MatrixXi& ints, double gamma);

/// Clamps integer coefficients to [lo, hi]; *clamped_count (if given)
/// accumulates how many entries were altered.
Eigen::MatrixXi clamp_ints(const Eigen::MatrixXi& ints, int lo, int hi,
                           long* clamped_count = nullptr);

/// Frequency-major, dimension-minor flattening of an integer coefficient
/// matrix; unflatten inverts it exactly.
std::vector<int> flatten(const Eigen::MatrixXi& ints);
Eigen::MatrixXi unflatten(const std::vector<int>& seq, int h, int d);

/// Byte-pair model over integer coefficient symbols. The base alphabet is the
/// contiguous integer hull [base_min, base_max] observed in the fitting
/// corpus; merged symbols follow in merge order.
struct BpeModel {
    int base_min = 0;
    int base_max = -1;
    std::vector<std::pair<int, int>> merges; // pairs of symbol indices

    int base_size() const { return base_max - base_min + 1; }
    int vocab_size() const { return base_size() + static_cast<int>(merges.size()); }

    /// Integer coefficients to merged-symbol indices. Values outside the base
    /// hull are clamped onto it.
    std::vector<int> encode_ints(const std::vector<int>& ints) const;
    /// Symbol indices back to integer coefficients. Unknown symbols raise
    /// CorruptStream.
    std::vector<int> decode_ints(const std::vector<int>& symbols) const;

    void save(std::ostream& os) const;
    static BpeModel load(std::istream& is);
};

/// Greedy most-frequent-pair merging until the vocabulary reaches target or
/// no pair occurs at least twice. Count ties break by lexicographic pair
/// order.
BpeModel fit_bpe(const std::vector<std::vector<int>>& corpus, int target);

struct ActionCodecConfig {
    double gamma = 128.0;
    int clamp_lo = -512;
    int clamp_hi = 511;
};

struct EncodeStats {
    long clamped = 0; // integer coefficients clipped into the clamp range
};

/// Full pipeline: normalize → DCT → quantize → clamp → flatten → BPE →
/// offset into the vocabulary's action range.
std::vector<int> encode_chunk(const ActionChunk& chunk, const NormalizationStats& stats,
                              const ActionCodecConfig& cfg, const BpeModel& bpe,
                              const Vocabulary& vocab, EncodeStats* enc_stats = nullptr);

/// Inverts encode_chunk up to quantization error. Token count must decode to
/// exactly h·d coefficients.
ActionChunk decode_chunk(const std::vector<int>& tokens, const NormalizationStats& stats,
                         const ActionCodecConfig& cfg, const BpeModel& bpe,
                         const Vocabulary& vocab, int h, int d);

} // namespace univla
