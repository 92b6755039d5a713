#pragma once

// Reference implementations used to cross-check the library. Each is written
// straight-line from the documented behavior, favoring clarity over speed, and
// deliberately avoids calling the code under test.

#include "univla/action_codec.hpp"
#include "univla/ar_model.hpp"
#include "univla/sim_env.hpp"
#include "univla/vocab.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

namespace oracle {

inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double round_half_away(double x) {
    return x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5);
}

// Orthonormal DCT-II basis as an explicit H×H matrix: row k, column n holds
// s_k·cos(π(2n+1)k / 2H).
inline Eigen::MatrixXd dct_matrix(int h) {
    Eigen::MatrixXd c(h, h);
    const double pi = std::acos(-1.0);
    for (int k = 0; k < h; ++k) {
        const double s = k == 0 ? std::sqrt(1.0 / h) : std::sqrt(2.0 / h);
        for (int n = 0; n < h; ++n)
            c(k, n) = s * std::cos(pi * (2.0 * n + 1.0) * k / (2.0 * h));
    }
    return c;
}

inline Eigen::MatrixXd dct_forward(const Eigen::MatrixXd& chunk) {
    return dct_matrix(static_cast<int>(chunk.rows())) * chunk;
}

inline Eigen::MatrixXd dct_inverse(const Eigen::MatrixXd& coeffs) {
    return dct_matrix(static_cast<int>(coeffs.rows())).transpose() * coeffs;
}

// Greedy pair merging, recounting from scratch every round with an ordered
// map so ties resolve to the smallest pair.
struct BruteBpe {
    int base_min = 0;
    int base_max = -1;
    std::vector<std::pair<int, int>> merges;
};

inline BruteBpe brute_bpe_fit(const std::vector<std::vector<int>>& corpus, int target) {
    BruteBpe model;
    bool any = false;
    for (const auto& s : corpus)
        for (int v : s) {
            if (!any) {
                model.base_min = model.base_max = v;
                any = true;
            }
            model.base_min = std::min(model.base_min, v);
            model.base_max = std::max(model.base_max, v);
        }
    if (!any) throw std::invalid_argument("brute_bpe_fit: empty corpus");
    const int base = model.base_max - model.base_min + 1;

    std::vector<std::vector<int>> seqs;
    for (const auto& s : corpus) {
        std::vector<int> sym;
        for (int v : s) sym.push_back(v - model.base_min);
        seqs.push_back(std::move(sym));
    }
    while (base + static_cast<int>(model.merges.size()) < target) {
        std::map<std::pair<int, int>, long> counts;
        for (const auto& s : seqs)
            for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
        std::pair<int, int> best{0, 0};
        long best_n = 0;
        for (const auto& [p, n] : counts)
            if (n > best_n) {
                best = p;
                best_n = n;
            }
        if (best_n < 2) break;
        const int sym = base + static_cast<int>(model.merges.size());
        model.merges.push_back(best);
        for (auto& s : seqs) {
            std::vector<int> next;
            std::size_t i = 0;
            while (i < s.size()) {
                if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
                    next.push_back(sym);
                    i += 2;
                } else {
                    next.push_back(s[i]);
                    ++i;
                }
            }
            s = std::move(next);
        }
    }
    return model;
}

// The action pipeline with the BPE and vocabulary stages removed, composed
// from the stage primitives (each cross-checked against the independent math
// above). decode(encode(x)) must equal this bit for bit: any difference means
// the symbol round trip through BPE and the ID offsets was not the identity.
inline Eigen::MatrixXd no_bpe_roundtrip(const Eigen::MatrixXd& chunk,
                                        const univla::NormalizationStats& stats, double gamma,
                                        int clamp_lo, int clamp_hi) {
    const Eigen::MatrixXi q =
        univla::clamp_ints(univla::quantize(univla::dct_forward(univla::normalize(chunk, stats)),
                                            gamma),
                           clamp_lo, clamp_hi);
    return univla::denormalize(univla::dct_inverse(univla::dequantize(q, gamma)), stats);
}

inline int nearest_centroid(const Eigen::VectorXf& patch,
                            const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                                Eigen::RowMajor>& centroids) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < centroids.rows(); ++k) {
        double d = 0.0;
        for (int j = 0; j < centroids.cols(); ++j) {
            const double diff =
                static_cast<double>(patch[j]) - static_cast<double>(centroids(k, j));
            d += diff * diff;
        }
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    return best;
}

// Expected loss mask recovered by scanning bracket structure alone. Throws on
// unbalanced or nested blocks.
struct ScanPolicy {
    int cond_frames = 0;     // leading image blocks left unmasked
    bool mask_vision = false;
    bool mask_actions = false;
    bool last_action_only = true;
};

inline std::vector<std::uint8_t> scan_mask(const std::vector<int>& ids,
                                           const univla::Vocabulary& vocab,
                                           const ScanPolicy& policy) {
    using univla::Special;
    const int boi = static_cast<int>(Special::boi), eoi = static_cast<int>(Special::eoi);
    const int boa = static_cast<int>(Special::boa), eoa = static_cast<int>(Special::eoa);
    std::vector<std::pair<int, int>> image_blocks, action_blocks;
    int open = -1;
    bool in_image = false, in_action = false;
    for (int p = 0; p < static_cast<int>(ids.size()); ++p) {
        const int id = ids[p];
        if (id == boi || id == boa) {
            if (in_image || in_action) throw std::runtime_error("nested block");
            open = p;
            in_image = id == boi;
            in_action = id == boa;
        } else if (id == eoi) {
            if (!in_image) throw std::runtime_error("unmatched image close");
            image_blocks.emplace_back(open + 1, p);
            in_image = false;
        } else if (id == eoa) {
            if (!in_action) throw std::runtime_error("unmatched action close");
            action_blocks.emplace_back(open + 1, p);
            in_action = false;
        }
    }
    if (in_image || in_action) throw std::runtime_error("unclosed block");

    std::vector<std::uint8_t> mask(ids.size(), 0);
    if (policy.mask_vision)
        for (std::size_t b = static_cast<std::size_t>(policy.cond_frames); b < image_blocks.size();
             ++b)
            for (int p = image_blocks[b].first; p < image_blocks[b].second; ++p) mask[p] = 1;
    if (policy.mask_actions && !action_blocks.empty()) {
        const std::size_t first =
            policy.last_action_only ? action_blocks.size() - 1 : std::size_t{0};
        for (std::size_t b = first; b < action_blocks.size(); ++b)
            for (int p = action_blocks[b].first; p < action_blocks[b].second; ++p) mask[p] = 1;
    }
    for (std::size_t p = 0; p < ids.size(); ++p)
        if (mask[p] && vocab.classify(ids[p]) == univla::Modality::special)
            throw std::runtime_error("special position marked");
    return mask;
}

// Straight-line transformer forward in double precision: pre-norm blocks,
// causal softmax attention, tanh-approximated GELU, untied output head.
inline Eigen::MatrixXd forward_dense(const univla::ModelParamsT<double>& p,
                                     const std::vector<int>& ids) {
    const auto& cfg = p.config;
    const int t = static_cast<int>(ids.size());
    const int d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    auto layer_norm = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& g,
                          const Eigen::MatrixXd& b) {
        Eigen::MatrixXd y(x.rows(), x.cols());
        for (int i = 0; i < x.rows(); ++i) {
            const double mu = x.row(i).mean();
            const double var = (x.row(i).array() - mu).square().mean();
            for (int j = 0; j < x.cols(); ++j)
                y(i, j) = (x(i, j) - mu) / std::sqrt(var + 1e-5) * g(0, j) + b(0, j);
        }
        return y;
    };
    auto gelu = [](double x) {
        return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
    };

    Eigen::MatrixXd x(t, d);
    for (int i = 0; i < t; ++i)
        x.row(i) = p.tok_emb.row(ids[static_cast<std::size_t>(i)]) + p.pos_emb.row(i);

    for (const auto& blk : p.blocks) {
        const Eigen::MatrixXd ln1 = layer_norm(x, blk.ln1_g, blk.ln1_b);
        const Eigen::MatrixXd q = (ln1 * blk.wq.transpose()).rowwise() + blk.bq.row(0);
        const Eigen::MatrixXd k = (ln1 * blk.wk.transpose()).rowwise() + blk.bk.row(0);
        const Eigen::MatrixXd v = (ln1 * blk.wv.transpose()).rowwise() + blk.bv.row(0);
        Eigen::MatrixXd mix(t, d);
        for (int h = 0; h < heads; ++h) {
            for (int i = 0; i < t; ++i) {
                Eigen::VectorXd scores(i + 1);
                for (int j = 0; j <= i; ++j)
                    scores[j] = q.row(i).segment(h * dh, dh)
                                    .dot(k.row(j).segment(h * dh, dh)) /
                                std::sqrt(static_cast<double>(dh));
                const double mx = scores.maxCoeff();
                Eigen::VectorXd e = (scores.array() - mx).exp();
                e /= e.sum();
                Eigen::VectorXd out = Eigen::VectorXd::Zero(dh);
                for (int j = 0; j <= i; ++j) out += e[j] * v.row(j).segment(h * dh, dh).transpose();
                mix.row(i).segment(h * dh, dh) = out.transpose();
            }
        }
        const Eigen::MatrixXd attn = (mix * blk.wo.transpose()).rowwise() + blk.bo.row(0);
        x = x + attn;
        const Eigen::MatrixXd ln2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
        Eigen::MatrixXd act = (ln2 * blk.w1.transpose()).rowwise() + blk.b1.row(0);
        for (int i = 0; i < act.rows(); ++i)
            for (int j = 0; j < act.cols(); ++j) act(i, j) = gelu(act(i, j));
        const Eigen::MatrixXd ff = (act * blk.w2.transpose()).rowwise() + blk.b2.row(0);
        x = x + ff;
    }
    const Eigen::MatrixXd lnf = layer_norm(x, p.lnf_g, p.lnf_b);
    return (lnf * p.head_w.transpose()).rowwise() + p.head_b.row(0);
}

// Masked cross-entropy as an explicit loop: target at p reads logits row p−1.
template <typename Mat>
double masked_ce_loop(const Mat& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask) {
    double sum = 0.0;
    long count = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        const auto row = static_cast<Eigen::Index>(p) - 1;
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            mx = std::max(mx, static_cast<double>(logits(row, j)));
        double z = 0.0;
        for (Eigen::Index j = 0; j < logits.cols(); ++j)
            z += std::exp(static_cast<double>(logits(row, j)) - mx);
        sum += mx + std::log(z) - static_cast<double>(logits(row, targets[p]));
        ++count;
    }
    return sum / static_cast<double>(count);
}

inline long parameter_count(const univla::ModelConfig& c) {
    const long v = c.vocab_size, d = c.d_model, f = c.d_ff, l = c.max_seq_len;
    const long per_layer = 2 * d            // ln1
                           + 4 * (d * d + d) // q,k,v,o
                           + 2 * d           // ln2
                           + f * d + f       // up
                           + d * f + d;      // down
    return v * d + l * d + c.n_layers * per_layer + 2 * d + v * d + v;
}

// Replays an episode's stored actions from its seed through the public
// environment API, re-rendering every frame.
inline std::vector<univla::Image> replay_episode(const univla::Episode& ep,
                                                 const univla::EnvConfig& cfg) {
    auto [state, instruction] = univla::reset(ep.task, ep.seed, cfg);
    (void)instruction;
    std::vector<univla::Image> frames;
    frames.push_back(univla::render(state, cfg));
    for (const auto& a : ep.actions) {
        univla::step(state, a, cfg);
        frames.push_back(univla::render(state, cfg));
    }
    return frames;
}

} // namespace oracle
