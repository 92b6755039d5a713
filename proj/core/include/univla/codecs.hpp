#pragma once

#include "univla/action_codec.hpp"
#include "univla/sequence_builder.hpp"
#include "univla/sim_env.hpp"
#include "univla/trainer.hpp"
#include "univla/vision_codec.hpp"
#include "univla/vocab.hpp"

#include <filesystem>
#include <vector>

namespace univla {

/// Everything needed to move between episodes and token sequences: the shared
/// vocabulary, the action normalizer + BPE, and the patch codebook.
struct Codecs {
    Vocabulary vocab;
    NormalizationStats stats;
    BpeModel bpe;
    VQCodebook codebook;
    ActionCodecConfig action_cfg;
    int chunk_h = 10;
};

struct FitCodecsConfig {
    int codebook_size = 256;
    int bpe_target = 1152;
    int chunk_h = 10;
    double gamma = 128.0;
    std::uint64_t seed = 0;
};

/// Fits normalizer, BPE, codebook, and vocabulary on a demonstration set.
/// The BPE base alphabet is pinned to the full clamp range so encoding stays
/// lossless for any chunk the quantizer can emit, not just corpus chunks.
Codecs fit_codecs(const std::vector<Episode>& episodes, const FitCodecsConfig& cfg);

void save_codecs(const std::filesystem::path& dir, const Codecs& codecs);
Codecs load_codecs(const std::filesystem::path& dir);

/// Chunk windows start every chunk_h actions; the tail window is zero-padded
/// (no displacement, grip held).
std::vector<int> chunk_starts(const Episode& ep, int h);
ActionChunk chunk_at(const Episode& ep, int start, int h);
std::vector<ActionChunk> episode_chunks(const Episode& ep, int h);

struct PackOptions {
    Strategy strategy = Strategy::policy;
    HistoryConfig history{};
    bool mask_history_actions = false;
    bool supervise_vision = false; // policy sequences also supervise frames
    int wm_frames = 6;             // world-model / video window length
    int wm_hop = 3;                // window start hop
    int t2i_hop = 4;               // frame stride for text-to-image pairs
    int max_len = kDefaultMaxLen;
};

/// Packs episodes into training sequences for one strategy. Deterministic:
/// episodes in order, windows in order.
std::vector<TokenSequence> pack_corpus(const std::vector<Episode>& episodes, const Codecs& codecs,
                                       const PackOptions& opts);

} // namespace univla
