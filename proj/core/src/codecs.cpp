#include "univla/codecs.hpp"

#include "univla/common.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

namespace univla {

namespace {

Eigen::Vector3d action_row(const EnvAction& a) { return {a.dx, a.dy, a.grip}; }

std::vector<int> pre_bpe_ints(const ActionChunk& chunk, const NormalizationStats& stats,
                              const ActionCodecConfig& cfg) {
    return flatten(clamp_ints(quantize(dct_forward(normalize(chunk, stats)), cfg.gamma),
                              cfg.clamp_lo, cfg.clamp_hi));
}

} // namespace

std::vector<int> chunk_starts(const Episode& ep, int h) {
    if (h < 1) throw InvalidArgument("chunk size must be ≥ 1");
    std::vector<int> starts;
    for (int s = 0; s < static_cast<int>(ep.actions.size()); s += h) starts.push_back(s);
    return starts;
}

ActionChunk chunk_at(const Episode& ep, int start, int h) {
    const int n = static_cast<int>(ep.actions.size());
    if (start < 0 || start >= n) throw InvalidArgument("chunk start out of range");
    ActionChunk chunk(h, 3);
    double hold_grip = 0.0;
    for (int i = 0; i < h; ++i) {
        const int t = start + i;
        if (t < n) {
            chunk.row(i) = action_row(ep.actions[t]);
            hold_grip = ep.actions[t].grip;
        } else {
            chunk.row(i) = Eigen::Vector3d(0.0, 0.0, hold_grip);
        }
    }
    return chunk;
}

std::vector<ActionChunk> episode_chunks(const Episode& ep, int h) {
    std::vector<ActionChunk> chunks;
    for (int s : chunk_starts(ep, h)) chunks.push_back(chunk_at(ep, s, h));
    return chunks;
}

Codecs fit_codecs(const std::vector<Episode>& episodes, const FitCodecsConfig& cfg) {
    if (episodes.empty()) throw InvalidArgument("cannot fit codecs on an empty dataset");
    if (cfg.chunk_h < 1) throw InvalidArgument("chunk size must be ≥ 1");

    Codecs out;
    out.chunk_h = cfg.chunk_h;
    out.action_cfg.gamma = cfg.gamma;

    std::vector<ActionChunk> chunks;
    std::vector<Image> frames;
    std::vector<std::string> instructions;
    for (const auto& ep : episodes) {
        auto eps_chunks = episode_chunks(ep, cfg.chunk_h);
        chunks.insert(chunks.end(), eps_chunks.begin(), eps_chunks.end());
        frames.insert(frames.end(), ep.frames.begin(), ep.frames.end());
        instructions.push_back(ep.instruction);
    }

    out.stats = fit_normalizer(chunks);

    std::vector<std::vector<int>> bpe_corpus;
    for (const auto& chunk : chunks)
        bpe_corpus.push_back(pre_bpe_ints(chunk, out.stats, out.action_cfg));
    // Range anchor: a single (lo,hi) sequence widens the base alphabet to the
    // whole clamp range without affecting merge counts (its one pair occurs
    // once, below the merge threshold).
    bpe_corpus.push_back({out.action_cfg.clamp_lo, out.action_cfg.clamp_hi});
    out.bpe = fit_bpe(bpe_corpus, cfg.bpe_target);

    out.codebook = fit_codebook(frames, cfg.codebook_size, cfg.seed);

    std::vector<std::string> words = TextTokenizer::collect_words(instructions);
    const int n_words = static_cast<int>(words.size());
    out.vocab = Vocabulary::build(n_words, out.codebook.size(), out.bpe.vocab_size(),
                                  std::move(words));
    return out;
}

void save_codecs(const std::filesystem::path& dir, const Codecs& codecs) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "vocab.tsv");
        if (!os) throw IoError("cannot write vocabulary manifest");
        codecs.vocab.save_manifest(os);
    }
    {
        std::ofstream os(dir / "stats.txt");
        if (!os) throw IoError("cannot write normalization stats");
        codecs.stats.save(os);
    }
    {
        std::ofstream os(dir / "bpe.txt");
        if (!os) throw IoError("cannot write BPE model");
        codecs.bpe.save(os);
    }
    {
        std::ofstream os(dir / "codebook.bin", std::ios::binary);
        if (!os) throw IoError("cannot write codebook");
        codecs.codebook.save(os);
    }
    std::ostringstream meta;
    meta << "univla.codecs.v1\n";
    meta << "gamma=" << format_g17(codecs.action_cfg.gamma) << '\n';
    meta << "clamp_lo=" << codecs.action_cfg.clamp_lo << '\n';
    meta << "clamp_hi=" << codecs.action_cfg.clamp_hi << '\n';
    meta << "chunk_h=" << codecs.chunk_h << '\n';
    write_text_file(dir / "codec.txt", meta.str());
}

Codecs load_codecs(const std::filesystem::path& dir) {
    Codecs out;
    {
        std::ifstream is(dir / "vocab.tsv");
        if (!is) throw NotFoundError("missing vocabulary manifest in " + dir.string());
        out.vocab = Vocabulary::load_manifest(is);
    }
    {
        std::ifstream is(dir / "stats.txt");
        if (!is) throw NotFoundError("missing normalization stats in " + dir.string());
        out.stats = NormalizationStats::load(is);
    }
    {
        std::ifstream is(dir / "bpe.txt");
        if (!is) throw NotFoundError("missing BPE model in " + dir.string());
        out.bpe = BpeModel::load(is);
    }
    {
        std::ifstream is(dir / "codebook.bin", std::ios::binary);
        if (!is) throw NotFoundError("missing codebook in " + dir.string());
        out.codebook = VQCodebook::load(is);
    }
    std::istringstream meta(read_text_file(dir / "codec.txt"));
    std::string line;
    if (!std::getline(meta, line) || line != "univla.codecs.v1")
        throw CorruptStream("bad codec meta header");
    std::map<std::string, std::string> kv;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw CorruptStream("bad codec meta line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    try {
        out.action_cfg.gamma = std::stod(kv.at("gamma"));
        out.action_cfg.clamp_lo = std::stoi(kv.at("clamp_lo"));
        out.action_cfg.clamp_hi = std::stoi(kv.at("clamp_hi"));
        out.chunk_h = std::stoi(kv.at("chunk_h"));
    } catch (const std::out_of_range&) {
        throw CorruptStream("codec meta is missing a required key");
    } catch (const std::invalid_argument&) {
        throw CorruptStream("codec meta holds a malformed number");
    }
    if (out.vocab.vision_range().size() != out.codebook.size() ||
        out.vocab.action_range().size() != out.bpe.vocab_size())
        throw CorruptStream("codec files disagree with the vocabulary layout");
    return out;
}

namespace {

class FrameEncoder {
  public:
    FrameEncoder(const Episode& ep, const Codecs& codecs) : ep_(ep), codecs_(codecs) {}

    const TokenGrid& at(int frame_idx) {
        auto it = cache_.find(frame_idx);
        if (it != cache_.end()) return it->second;
        return cache_
            .emplace(frame_idx, encode_image(ep_.frames[frame_idx], codecs_.codebook, codecs_.vocab))
            .first->second;
    }

  private:
    const Episode& ep_;
    const Codecs& codecs_;
    std::unordered_map<int, TokenGrid> cache_;
};

std::vector<std::pair<int, int>> frame_windows(int n_frames, int len, int hop) {
    std::vector<std::pair<int, int>> windows;
    if (n_frames < 2) return windows;
    if (n_frames <= len) {
        windows.emplace_back(0, n_frames);
        return windows;
    }
    int last_start = -1;
    for (int s = 0; s + len <= n_frames; s += hop) {
        windows.emplace_back(s, s + len);
        last_start = s;
    }
    if (last_start != n_frames - len) windows.emplace_back(n_frames - len, n_frames);
    return windows;
}

} // namespace

std::vector<TokenSequence> pack_corpus(const std::vector<Episode>& episodes, const Codecs& codecs,
                                       const PackOptions& opts) {
    if (opts.strategy == Strategy::none)
        throw InvalidArgument("strategy none packs no sequences");
    if (episodes.empty()) throw InvalidArgument("cannot pack an empty dataset");

    const TextTokenizer text(codecs.vocab);
    std::vector<TokenSequence> out;

    for (const auto& ep : episodes) {
        const std::vector<int> instr = text.encode(ep.instruction);
        const int n_frames = static_cast<int>(ep.frames.size());
        FrameEncoder frames(ep, codecs);

        switch (opts.strategy) {
            case Strategy::world_model:
            case Strategy::video: {
                for (const auto& [begin, end] : frame_windows(n_frames, opts.wm_frames, opts.wm_hop)) {
                    std::vector<TokenGrid> grids;
                    for (int i = begin; i < end; ++i) grids.push_back(frames.at(i));
                    if (opts.strategy == Strategy::world_model)
                        out.push_back(build_world_model_seq(instr, grids, codecs.vocab, opts.max_len));
                    else
                        out.push_back(build_video_seq(grids, codecs.vocab, opts.max_len));
                }
                break;
            }
            case Strategy::t2i: {
                for (int i = 0; i < n_frames; i += opts.t2i_hop)
                    out.push_back(build_t2i_seq(instr, frames.at(i), codecs.vocab, opts.max_len));
                break;
            }
            case Strategy::action_pred: {
                for (int s : chunk_starts(ep, codecs.chunk_h)) {
                    const std::vector<int> acts =
                        encode_chunk(chunk_at(ep, s, codecs.chunk_h), codecs.stats,
                                     codecs.action_cfg, codecs.bpe, codecs.vocab);
                    out.push_back(build_action_pred_seq(instr, frames.at(s), acts, codecs.vocab,
                                                        opts.max_len));
                }
                break;
            }
            case Strategy::policy: {
                std::vector<PolicyStep> steps;
                PolicyBuildOptions build_opts;
                build_opts.mask_history_actions = opts.mask_history_actions;
                build_opts.supervise_vision = opts.supervise_vision;
                build_opts.max_len = opts.max_len;
                for (int s : chunk_starts(ep, codecs.chunk_h)) {
                    PolicyStep step;
                    step.frame = frames.at(s);
                    step.actions = encode_chunk(chunk_at(ep, s, codecs.chunk_h), codecs.stats,
                                                codecs.action_cfg, codecs.bpe, codecs.vocab);
                    step.timestep = ep.timesteps[s];
                    steps.push_back(std::move(step));
                    out.push_back(
                        build_policy_seq(instr, steps, opts.history, codecs.vocab, build_opts));
                }
                break;
            }
            case Strategy::none:
                break;
        }
    }
    return out;
}

} // namespace univla
