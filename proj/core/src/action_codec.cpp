#include "univla/action_codec.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace univla {

namespace {

void check_finite(const ActionChunk& m, const char* what) {
    if (!m.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entries");
}

} // namespace

ActionChunk to_relative(const ActionChunk& absolute, RelativeMode mode) {
    check_finite(absolute, "to_relative");
    const Eigen::Index t = absolute.rows();
    if (mode == RelativeMode::consecutive) {
        if (t < 2) throw InvalidArgument("to_relative: consecutive mode needs at least 2 rows");
        return absolute.bottomRows(t - 1) - absolute.topRows(t - 1);
    }
    if (t < 1) throw InvalidArgument("to_relative: empty track");
    return absolute.rowwise() - absolute.row(0);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw InvalidArgument("percentile: empty values");
    if (q < 0.0 || q > 1.0) throw InvalidArgument("percentile: q outside [0,1]");
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

NormalizationStats fit_normalizer(const std::vector<ActionChunk>& corpus) {
    if (corpus.empty()) throw InvalidArgument("fit_normalizer: empty corpus");
    const Eigen::Index d = corpus.front().cols();
    for (const auto& c : corpus) {
        if (c.cols() != d) throw InvalidArgument("fit_normalizer: inconsistent dimensionality");
        if (c.rows() < 1) throw InvalidArgument("fit_normalizer: empty chunk");
        check_finite(c, "fit_normalizer");
    }
    NormalizationStats stats;
    stats.p1.resize(d);
    stats.p99.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        std::vector<double> pooled;
        for (const auto& c : corpus)
            for (Eigen::Index t = 0; t < c.rows(); ++t) pooled.push_back(c(t, j));
        stats.p1[j] = percentile(pooled, 0.01);
        stats.p99[j] = percentile(std::move(pooled), 0.99);
    }
    return stats;
}

ActionChunk normalize(const ActionChunk& chunk, const NormalizationStats& stats) {
    check_finite(chunk, "normalize");
    if (chunk.cols() != stats.p1.size())
        throw InvalidArgument("normalize: dimension mismatch");
    ActionChunk out(chunk.rows(), chunk.cols());
    for (Eigen::Index j = 0; j < chunk.cols(); ++j) {
        const double lo = stats.p1[j], hi = stats.p99[j];
        for (Eigen::Index t = 0; t < chunk.rows(); ++t) {
            if (lo == hi) {
                out(t, j) = 0.0;
            } else {
                double v = 2.0 * (chunk(t, j) - lo) / (hi - lo) - 1.0;
                out(t, j) = std::clamp(v, -1.0, 1.0);
            }
        }
    }
    return out;
}

ActionChunk denormalize(const ActionChunk& chunk, const NormalizationStats& stats) {
    check_finite(chunk, "denormalize");
    if (chunk.cols() != stats.p1.size())
        throw InvalidArgument("denormalize: dimension mismatch");
    ActionChunk out(chunk.rows(), chunk.cols());
    for (Eigen::Index j = 0; j < chunk.cols(); ++j) {
        const double lo = stats.p1[j], hi = stats.p99[j];
        for (Eigen::Index t = 0; t < chunk.rows(); ++t)
            out(t, j) = lo == hi ? lo : (chunk(t, j) + 1.0) * 0.5 * (hi - lo) + lo;
    }
    return out;
}

namespace {

// Orthonormal DCT-II matrix: C(k,t) = s_k * sqrt(2/H) * cos(pi*(2t+1)*k/(2H)).
Eigen::MatrixXd dct_matrix(Eigen::Index h) {
    Eigen::MatrixXd c(h, h);
    const double pi = 3.14159265358979323846;
    const double norm = std::sqrt(2.0 / static_cast<double>(h));
    for (Eigen::Index k = 0; k < h; ++k) {
        const double sk = k == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
        for (Eigen::Index t = 0; t < h; ++t)
            c(k, t) = sk * norm *
                      std::cos(pi * (2.0 * static_cast<double>(t) + 1.0) * static_cast<double>(k) /
                               (2.0 * static_cast<double>(h)));
    }
    return c;
}

} // namespace

ActionChunk dct_forward(const ActionChunk& chunk) {
    check_finite(chunk, "dct_forward");
    if (chunk.rows() < 1 || chunk.cols() < 1) throw InvalidArgument("dct_forward: empty chunk");
    return dct_matrix(chunk.rows()) * chunk;
}

ActionChunk dct_inverse(const ActionChunk& coeffs) {
    check_finite(coeffs, "dct_inverse");
    if (coeffs.rows() < 1 || coeffs.cols() < 1) throw InvalidArgument("dct_inverse: empty chunk");
    return dct_matrix(coeffs.rows()).transpose() * coeffs;
}

Eigen::MatrixXi quantize(const ActionChunk& coeffs, double gamma) {
    check_finite(coeffs, "quantize");
    if (gamma <= 0.0) throw InvalidArgument("quantize: gamma must be positive");
    Eigen::MatrixXi out(coeffs.rows(), coeffs.cols());
    for (Eigen::Index j = 0; j < coeffs.cols(); ++j)
        for (Eigen::Index t = 0; t < coeffs.rows(); ++t)
            out(t, j) = static_cast<int>(std::llround(gamma * coeffs(t, j)));
    return out;
}

ActionChunk dequantize(const Eigen::MatrixXi& ints, double gamma) {
    if (gamma <= 0.0) throw InvalidArgument("dequantize: gamma must be positive");
    return ints.cast<double>() / gamma;
}

Eigen::MatrixXi clamp_ints(const Eigen::MatrixXi& ints, int lo, int hi, long* clamped_count) {
    if (lo > hi) throw InvalidArgument("clamp_ints: lo > hi");
    Eigen::MatrixXi out(ints.rows(), ints.cols());
    long n = 0;
    for (Eigen::Index j = 0; j < ints.cols(); ++j)
        for (Eigen::Index t = 0; t < ints.rows(); ++t) {
            int v = ints(t, j);
            int c = std::clamp(v, lo, hi);
            if (c != v) ++n;
            out(t, j) = c;
        }
    if (clamped_count) *clamped_count += n;
    return out;
}

std::vector<int> flatten(const Eigen::MatrixXi& ints) {
    if (ints.rows() < 1 || ints.cols() < 1) throw InvalidArgument("flatten: empty chunk");
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(ints.size()));
    for (Eigen::Index k = 0; k < ints.rows(); ++k)
        for (Eigen::Index j = 0; j < ints.cols(); ++j) out.push_back(ints(k, j));
    return out;
}

Eigen::MatrixXi unflatten(const std::vector<int>& seq, int h, int d) {
    if (h < 1 || d < 1) throw InvalidArgument("unflatten: empty shape");
    if (static_cast<int>(seq.size()) != h * d)
        throw InvalidArgument("unflatten: sequence length does not match shape");
    Eigen::MatrixXi out(h, d);
    for (int k = 0; k < h; ++k)
        for (int j = 0; j < d; ++j) out(k, j) = seq[static_cast<std::size_t>(k * d + j)];
    return out;
}

std::vector<int> BpeModel::encode_ints(const std::vector<int>& ints) const {
    if (base_size() < 1) throw InvalidArgument("BpeModel: empty base alphabet");
    std::vector<int> symbols;
    symbols.reserve(ints.size());
    for (int v : ints) symbols.push_back(std::clamp(v, base_min, base_max) - base_min);
    const int base = base_size();
    std::vector<int> next;
    for (std::size_t m = 0; m < merges.size(); ++m) {
        const int a = merges[m].first, b = merges[m].second;
        const int sym = base + static_cast<int>(m);
        next.clear();
        std::size_t i = 0;
        while (i < symbols.size()) {
            if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
                next.push_back(sym);
                i += 2;
            } else {
                next.push_back(symbols[i]);
                ++i;
            }
        }
        symbols.swap(next);
    }
    return symbols;
}

std::vector<int> BpeModel::decode_ints(const std::vector<int>& symbols) const {
    const int base = base_size();
    std::vector<int> out;
    std::vector<int> stack;
    for (int s : symbols) {
        stack.push_back(s);
        while (!stack.empty()) {
            int cur = stack.back();
            stack.pop_back();
            if (cur < 0 || cur >= vocab_size())
                throw CorruptStream("BpeModel: symbol " + std::to_string(cur) +
                                    " outside vocabulary");
            if (cur < base) {
                out.push_back(base_min + cur);
            } else {
                const auto& m = merges[static_cast<std::size_t>(cur - base)];
                stack.push_back(m.second);
                stack.push_back(m.first);
            }
        }
    }
    return out;
}

void BpeModel::save(std::ostream& os) const {
    os << "univla.bpe.v1\n";
    os << "base " << base_min << ' ' << base_max << '\n';
    os << "merges " << merges.size() << '\n';
    for (const auto& m : merges) os << m.first << ' ' << m.second << '\n';
}

BpeModel BpeModel::load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "univla.bpe.v1")
        throw CorruptStream("bpe model: bad header");
    BpeModel bpe;
    std::string word;
    std::size_t n = 0;
    if (!(is >> word >> bpe.base_min >> bpe.base_max) || word != "base")
        throw CorruptStream("bpe model: bad base line");
    if (bpe.base_min > bpe.base_max) throw CorruptStream("bpe model: empty base alphabet");
    if (!(is >> word >> n) || word != "merges") throw CorruptStream("bpe model: bad merges line");
    bpe.merges.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        int a = 0, b = 0;
        if (!(is >> a >> b)) throw CorruptStream("bpe model: truncated merge list");
        const int limit = bpe.base_size() + static_cast<int>(i);
        if (a < 0 || b < 0 || a >= limit || b >= limit)
            throw CorruptStream("bpe model: merge refers to undefined symbol");
        bpe.merges.emplace_back(a, b);
    }
    return bpe;
}

BpeModel fit_bpe(const std::vector<std::vector<int>>& corpus, int target) {
    if (corpus.empty()) throw InvalidArgument("fit_bpe: empty corpus");
    bool any = false;
    int lo = 0, hi = 0;
    for (const auto& s : corpus)
        for (int v : s) {
            if (!any) {
                lo = hi = v;
                any = true;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    if (!any) throw InvalidArgument("fit_bpe: corpus has no symbols");

    BpeModel bpe;
    bpe.base_min = lo;
    bpe.base_max = hi;
    if (target < bpe.base_size())
        throw InvalidArgument("fit_bpe: target smaller than base alphabet (" +
                              std::to_string(bpe.base_size()) + ")");

    std::vector<std::vector<int>> seqs;
    seqs.reserve(corpus.size());
    for (const auto& s : corpus) {
        std::vector<int> sym;
        sym.reserve(s.size());
        for (int v : s) sym.push_back(v - lo);
        seqs.push_back(std::move(sym));
    }

    std::vector<int> next;
    while (bpe.vocab_size() < target) {
        // Ordered map: the first maximal entry is the lexicographically
        // smallest pair among ties.
        std::map<std::pair<int, int>, long> counts;
        for (const auto& s : seqs)
            for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
        std::pair<int, int> best{0, 0};
        long best_count = 0;
        for (const auto& [pair, count] : counts)
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        if (best_count < 2) break;
        const int sym = bpe.vocab_size();
        bpe.merges.push_back(best);
        for (auto& s : seqs) {
            next.clear();
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
            s.swap(next);
        }
    }
    return bpe;
}

void NormalizationStats::save(std::ostream& os) const {
    os << "univla.stats.v1\n";
    os << p1.size() << '\n';
    for (Eigen::Index j = 0; j < p1.size(); ++j)
        os << format_g17(p1[j]) << ' ' << format_g17(p99[j]) << '\n';
}

NormalizationStats NormalizationStats::load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "univla.stats.v1")
        throw CorruptStream("normalization stats: bad header");
    int d = 0;
    if (!(is >> d) || d < 1) throw CorruptStream("normalization stats: bad dimension count");
    NormalizationStats stats;
    stats.p1.resize(d);
    stats.p99.resize(d);
    for (int j = 0; j < d; ++j) {
        if (!(is >> stats.p1[j] >> stats.p99[j]))
            throw CorruptStream("normalization stats: truncated");
        if (!(stats.p1[j] <= stats.p99[j]))
            throw CorruptStream("normalization stats: p1 > p99");
    }
    return stats;
}

std::vector<int> encode_chunk(const ActionChunk& chunk, const NormalizationStats& stats,
                              const ActionCodecConfig& cfg, const BpeModel& bpe,
                              const Vocabulary& vocab, EncodeStats* enc_stats) {
    if (bpe.vocab_size() > vocab.action_range().size())
        throw InvalidArgument("encode_chunk: BPE vocabulary exceeds action range");
    long clamped = 0;
    Eigen::MatrixXi ints = clamp_ints(quantize(dct_forward(normalize(chunk, stats)), cfg.gamma),
                                      cfg.clamp_lo, cfg.clamp_hi, &clamped);
    if (enc_stats) enc_stats->clamped += clamped;
    std::vector<int> symbols = bpe.encode_ints(flatten(ints));
    std::vector<int> tokens;
    tokens.reserve(symbols.size());
    for (int s : symbols) tokens.push_back(vocab.action_id(s));
    return tokens;
}

ActionChunk decode_chunk(const std::vector<int>& tokens, const NormalizationStats& stats,
                         const ActionCodecConfig& cfg, const BpeModel& bpe,
                         const Vocabulary& vocab, int h, int d) {
    std::vector<int> symbols;
    symbols.reserve(tokens.size());
    for (int t : tokens) {
        if (!vocab.action_range().contains(t))
            throw InvalidArgument("decode_chunk: token outside action range");
        symbols.push_back(vocab.action_index(t));
    }
    std::vector<int> ints = bpe.decode_ints(symbols);
    if (static_cast<int>(ints.size()) != h * d)
        throw CorruptStream("decode_chunk: decoded " + std::to_string(ints.size()) +
                            " coefficients, expected " + std::to_string(h * d));
    return denormalize(dct_inverse(dequantize(unflatten(ints, h, d), cfg.gamma)), stats);
}

} // namespace univla
