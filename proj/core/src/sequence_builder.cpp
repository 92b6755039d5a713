#include "univla/sequence_builder.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <istream>
#include <ostream>

namespace univla {

namespace {

// Incremental sequence assembly with validation against the vocabulary.
class Assembler {
  public:
    Assembler(const Vocabulary& vocab, int max_len) : vocab_(vocab), max_len_(max_len) {}

    void special(Special s) { push(vocab_.special(s), false); }

    void text(const std::vector<int>& instr, int timestep) {
        if (instr.empty()) throw InvalidArgument("sequence builder: empty instruction");
        int begin = pos();
        for (int id : instr) {
            if (!vocab_.text_range().contains(id))
                throw InvalidArgument("sequence builder: instruction token outside text range");
            push(id, false);
        }
        seq_.spans.push_back({Modality::text, begin, pos(), timestep});
    }

    void frame(const TokenGrid& grid, bool masked, int timestep) {
        if (grid.ids.empty()) throw InvalidArgument("sequence builder: empty frame grid");
        special(Special::boi);
        int begin = pos();
        for (int id : grid.ids) {
            if (!vocab_.vision_range().contains(id))
                throw InvalidArgument("sequence builder: frame token outside vision range");
            push(id, masked);
        }
        seq_.spans.push_back({Modality::vision, begin, pos(), timestep});
        special(Special::eoi);
    }

    void actions(const std::vector<int>& tokens, bool masked, int timestep) {
        if (tokens.empty()) throw InvalidArgument("sequence builder: empty action block");
        special(Special::boa);
        int begin = pos();
        for (int id : tokens) {
            if (!vocab_.action_range().contains(id))
                throw InvalidArgument("sequence builder: action token outside action range");
            push(id, masked);
        }
        seq_.spans.push_back({Modality::action, begin, pos(), timestep});
        special(Special::eoa);
    }

    /// Opens an action block without closing it (decoding prompts).
    void open_actions() { special(Special::boa); }

    TokenSequence finish(bool with_eos) {
        if (with_eos) special(Special::eos);
        return std::move(seq_);
    }

  private:
    int pos() const { return seq_.size(); }

    void push(int id, bool masked) {
        if (seq_.size() >= max_len_)
            throw InvalidArgument("sequence builder: sequence exceeds max length " +
                                  std::to_string(max_len_));
        seq_.ids.push_back(id);
        seq_.mask.push_back(masked ? 1 : 0);
    }

    const Vocabulary& vocab_;
    int max_len_;
    TokenSequence seq_;
};

/// Indices of the steps retained by a history window, chronological. The
/// final step is always retained; each of the `history` slots picks the
/// not-yet-retained earlier step whose timestep is nearest to
/// (current − k·stride), ties toward the earlier step.
std::vector<std::size_t> retained_steps(const std::vector<PolicyStep>& steps,
                                        const HistoryConfig& history) {
    if (steps.empty()) throw InvalidArgument("sequence builder: empty step list");
    if (history.current != 1) throw InvalidArgument("history window: current must be 1");
    if (history.history < 0 || history.stride < 1)
        throw InvalidArgument("history window: negative history or non-positive stride");
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i].timestep <= steps[i - 1].timestep)
            throw InvalidArgument("history window: steps must be strictly chronological");
    const std::size_t cur = steps.size() - 1;
    std::vector<std::size_t> keep{cur};
    for (int k = 1; k <= history.history; ++k) {
        const int want = steps[cur].timestep - k * history.stride;
        bool found = false;
        std::size_t best = 0;
        long best_dist = 0;
        for (std::size_t i = 0; i < cur; ++i) {
            if (std::find(keep.begin(), keep.end(), i) != keep.end()) continue;
            long dist = std::labs(static_cast<long>(steps[i].timestep) - want);
            if (!found || dist < best_dist ||
                (dist == best_dist && steps[i].timestep < steps[best].timestep)) {
                found = true;
                best = i;
                best_dist = dist;
            }
        }
        if (!found) break;
        keep.push_back(best);
    }
    std::sort(keep.begin(), keep.end());
    return keep;
}

TokenSequence build_policy_impl(const std::vector<int>& instr, const std::vector<PolicyStep>& steps,
                                const HistoryConfig& history, const Vocabulary& vocab,
                                const PolicyBuildOptions& opts, bool prompt) {
    std::vector<std::size_t> keep = retained_steps(steps, history);
    Assembler a(vocab, opts.max_len);
    a.special(Special::bos);
    a.text(instr, steps[keep.front()].timestep);
    for (std::size_t n = 0; n < keep.size(); ++n) {
        const PolicyStep& s = steps[keep[n]];
        const bool last = n + 1 == keep.size();
        a.frame(s.frame, opts.supervise_vision && n > 0, s.timestep);
        if (prompt && last) {
            if (!s.actions.empty())
                throw InvalidArgument("policy prompt: final step must not carry actions");
            a.open_actions();
            return a.finish(false);
        }
        a.actions(s.actions, last || opts.mask_history_actions, s.timestep);
    }
    return a.finish(true);
}

} // namespace

TokenSequence build_world_model_seq(const std::vector<int>& instr,
                                    const std::vector<TokenGrid>& frames, const Vocabulary& vocab,
                                    int max_len) {
    if (frames.size() < 2)
        throw InvalidArgument("world model sequence: need at least 2 frames");
    Assembler a(vocab, max_len);
    a.special(Special::bos);
    a.text(instr, 0);
    for (std::size_t i = 0; i < frames.size(); ++i)
        a.frame(frames[i], i > 0, static_cast<int>(i));
    return a.finish(true);
}

TokenSequence build_policy_seq(const std::vector<int>& instr, const std::vector<PolicyStep>& steps,
                               const HistoryConfig& history, const Vocabulary& vocab,
                               const PolicyBuildOptions& opts) {
    return build_policy_impl(instr, steps, history, vocab, opts, false);
}

TokenSequence build_policy_prompt(const std::vector<int>& instr,
                                  const std::vector<PolicyStep>& steps,
                                  const HistoryConfig& history, const Vocabulary& vocab,
                                  const PolicyBuildOptions& opts) {
    return build_policy_impl(instr, steps, history, vocab, opts, true);
}

TokenSequence build_t2i_seq(const std::vector<int>& instr, const TokenGrid& frame,
                            const Vocabulary& vocab, int max_len) {
    Assembler a(vocab, max_len);
    a.special(Special::bos);
    a.text(instr, 0);
    a.frame(frame, true, 0);
    return a.finish(true);
}

TokenSequence build_video_seq(const std::vector<TokenGrid>& frames, const Vocabulary& vocab,
                              int max_len) {
    if (frames.size() < 2) throw InvalidArgument("video sequence: need at least 2 frames");
    Assembler a(vocab, max_len);
    a.special(Special::bos);
    for (std::size_t i = 0; i < frames.size(); ++i)
        a.frame(frames[i], i > 0, static_cast<int>(i));
    return a.finish(true);
}

TokenSequence build_action_pred_seq(const std::vector<int>& instr, const TokenGrid& frame,
                                    const std::vector<int>& actions, const Vocabulary& vocab,
                                    int max_len) {
    Assembler a(vocab, max_len);
    a.special(Special::bos);
    a.text(instr, 0);
    a.frame(frame, false, 0);
    a.actions(actions, true, 0);
    return a.finish(true);
}

void save_shard(std::ostream& os, const std::vector<TokenSequence>& seqs) {
    write_magic(os, "UVSQ");
    write_u32(os, 1);
    write_u32(os, static_cast<std::uint32_t>(seqs.size()));
    for (const auto& s : seqs) {
        write_u32(os, static_cast<std::uint32_t>(s.ids.size()));
        for (int id : s.ids) write_u32(os, static_cast<std::uint32_t>(id));
        std::vector<std::uint8_t> packed((s.ids.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < s.mask.size(); ++i)
            if (s.mask[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        write_bytes(os, packed.data(), packed.size());
    }
}

std::vector<TokenSequence> load_shard(std::istream& is) {
    expect_magic(is, "UVSQ", "sequence shard");
    if (read_u32(is) != 1) throw CorruptStream("sequence shard: unsupported version");
    std::uint32_t count = read_u32(is);
    std::vector<TokenSequence> seqs(count);
    for (auto& s : seqs) {
        std::uint32_t len = read_u32(is);
        s.ids.resize(len);
        for (auto& id : s.ids) id = static_cast<int>(read_u32(is));
        std::vector<std::uint8_t> packed((len + 7) / 8);
        read_bytes(is, packed.data(), packed.size());
        s.mask.resize(len);
        for (std::uint32_t i = 0; i < len; ++i)
            s.mask[i] = (packed[i / 8] >> (i % 8)) & 1u;
    }
    return seqs;
}

} // namespace univla
