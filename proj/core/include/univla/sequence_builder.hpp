#pragma once

#include "univla/vision_codec.hpp"
#include "univla/vocab.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace univla {

constexpr int kDefaultMaxLen = 1024;

/// Contiguous run of same-modality tokens inside a sequence.
struct Span {
    Modality modality = Modality::text;
    int begin = 0;
    int end = 0;
    int timestep = 0;
};

/// One packed training sequence. mask[p] marks position p as a prediction
/// target: the loss for it is taken from the logits at p−1. Special brackets,
/// BOS/EOS, and instruction tokens are never masked.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::uint8_t> mask;
    std::vector<Span> spans;

    int size() const { return static_cast<int>(ids.size()); }
};

/// Policy prompt window: the current frame plus `history` past steps spaced
/// `stride` environment steps apart.
struct HistoryConfig {
    int current = 1; // always 1; present for symmetry with the window notation
    int history = 0;
    int stride = 10;
};

/// One vision-action step of a policy sequence.
struct PolicyStep {
    TokenGrid frame;
    std::vector<int> actions; // token IDs in action_range
    int timestep = 0;         // environment step of the frame
};

struct PolicyBuildOptions {
    bool mask_history_actions = false; // supervise every step's actions, not just the last
    bool supervise_vision = false;     // additionally mask vision tokens of steps after the first
    int max_len = kDefaultMaxLen;
};

/// BOS, text, [BOI frame EOI] per frame, EOS; vision tokens of frames 2..t
/// masked (frame 1 is the conditioning observation).
TokenSequence build_world_model_seq(const std::vector<int>& instr,
                                    const std::vector<TokenGrid>& frames, const Vocabulary& vocab,
                                    int max_len = kDefaultMaxLen);

/// BOS, text, ([BOI frame EOI][BOA actions EOA]) per retained step, EOS;
/// actions of the final step masked. Steps must be chronological; the window
/// retains the last step plus `history` earlier steps nearest to timesteps
/// spaced `stride` apart.
TokenSequence build_policy_seq(const std::vector<int>& instr, const std::vector<PolicyStep>& steps,
                               const HistoryConfig& history, const Vocabulary& vocab,
                               const PolicyBuildOptions& opts = {});

/// Policy layout truncated for decoding: ends immediately after the final
/// step's BOA. The final step's actions must be empty.
TokenSequence build_policy_prompt(const std::vector<int>& instr,
                                  const std::vector<PolicyStep>& steps,
                                  const HistoryConfig& history, const Vocabulary& vocab,
                                  const PolicyBuildOptions& opts = {});

/// BOS, text, [BOI frame EOI], EOS; the frame masked.
TokenSequence build_t2i_seq(const std::vector<int>& instr, const TokenGrid& frame,
                            const Vocabulary& vocab, int max_len = kDefaultMaxLen);

/// BOS, [BOI frame EOI] per frame, EOS; no text; frames 2..t masked.
TokenSequence build_video_seq(const std::vector<TokenGrid>& frames, const Vocabulary& vocab,
                              int max_len = kDefaultMaxLen);

/// BOS, text, [BOI frame EOI], [BOA actions EOA], EOS; actions masked.
TokenSequence build_action_pred_seq(const std::vector<int>& instr, const TokenGrid& frame,
                                    const std::vector<int>& actions, const Vocabulary& vocab,
                                    int max_len = kDefaultMaxLen);

/// Binary shard of packed sequences (ids and mask only; spans are derived
/// data and not stored).
void save_shard(std::ostream& os, const std::vector<TokenSequence>& seqs);
std::vector<TokenSequence> load_shard(std::istream& is);

} // namespace univla
