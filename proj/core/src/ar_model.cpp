#include "univla/ar_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

namespace univla {

void ModelConfig::validate() const {
    if (vocab_size < 1) throw InvalidArgument("ModelConfig: vocab_size must be positive");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads)
        throw InvalidArgument("ModelConfig: d_model must be a positive multiple of n_heads");
    if (n_layers < 1) throw InvalidArgument("ModelConfig: n_layers must be positive");
    if (d_ff < 1) throw InvalidArgument("ModelConfig: d_ff must be positive");
    if (max_seq_len < 1) throw InvalidArgument("ModelConfig: max_seq_len must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("ModelConfig: dropout outside [0,1)");
}

namespace {

constexpr double kLnEps = 1e-5;

template <typename S> using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S> using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S> S gelu(S x) {
    const S c0 = static_cast<S>(0.7978845608028654);
    const S c1 = static_cast<S>(0.044715);
    return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(c0 * (x + c1 * x * x * x)));
}

template <typename S> S gelu_grad(S x) {
    const S c0 = static_cast<S>(0.7978845608028654);
    const S c1 = static_cast<S>(0.044715);
    const S u = c0 * (x + c1 * x * x * x);
    const S t = std::tanh(u);
    return static_cast<S>(0.5) * (static_cast<S>(1) + t) +
           static_cast<S>(0.5) * x * (static_cast<S>(1) - t * t) * c0 *
               (static_cast<S>(1) + static_cast<S>(3) * c1 * x * x);
}

// Layer norm over the last axis; returns y and stores per-row normalized
// values and inverse stddev for the backward pass.
template <typename S>
MatT<S> layer_norm(const MatT<S>& x, const MatT<S>& g, const MatT<S>& b, MatT<S>& hat,
                   VecT<S>& inv_std) {
    const Eigen::Index t = x.rows(), d = x.cols();
    hat.resize(t, d);
    inv_std.resize(t);
    MatT<S> y(t, d);
    for (Eigen::Index i = 0; i < t; ++i) {
        const S mu = x.row(i).mean();
        const S var = (x.row(i).array() - mu).square().mean();
        const S inv = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLnEps));
        inv_std[i] = inv;
        hat.row(i) = (x.row(i).array() - mu) * inv;
        y.row(i) = hat.row(i).cwiseProduct(g.row(0)) + b.row(0);
    }
    return y;
}

// dL/dx for layer norm; also accumulates parameter gradients.
template <typename S>
MatT<S> layer_norm_backward(const MatT<S>& dy, const MatT<S>& hat, const VecT<S>& inv_std,
                            const MatT<S>& g, MatT<S>* dg, MatT<S>* db) {
    const Eigen::Index t = dy.rows(), d = dy.cols();
    if (dg) {
        dg->row(0) += dy.cwiseProduct(hat).colwise().sum();
        db->row(0) += dy.colwise().sum();
    }
    MatT<S> dx(t, d);
    const S invd = static_cast<S>(1) / static_cast<S>(d);
    for (Eigen::Index i = 0; i < t; ++i) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> dhat = dy.row(i).cwiseProduct(g.row(0));
        const S m1 = dhat.sum() * invd;
        const S m2 = dhat.cwiseProduct(hat.row(i)).sum() * invd;
        dx.row(i) = ((dhat.array() - m1) - hat.row(i).array() * m2) * inv_std[i];
    }
    return dx;
}

template <typename S> struct BlockCache {
    MatT<S> x_in;
    MatT<S> ln1_hat, ln2_hat;
    VecT<S> ln1_inv, ln2_inv;
    MatT<S> q, k, v;
    std::vector<MatT<S>> probs; // per head, T×T lower-triangular
    MatT<S> mix;                // concatenated head outputs
    MatT<S> h;                  // after attention residual
    MatT<S> ff_pre, ff_act;
    MatT<S> drop_attn, drop_ff; // inverted-dropout masks, empty when unused
};

template <typename S> struct Cache {
    MatT<S> x0;
    MatT<S> drop_emb;
    std::vector<BlockCache<S>> blocks;
    MatT<S> x_last;
    MatT<S> lnf_hat;
    VecT<S> lnf_inv;
};

template <typename S>
MatT<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    MatT<S> m(rows, cols);
    const S keep = static_cast<S>(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = rng.uniform() < rate ? static_cast<S>(0) : keep;
    return m;
}

template <typename S>
MatT<S> forward_impl(const ModelParamsT<S>& p, const std::vector<int>& ids, Cache<S>* cache,
                     Rng* dropout_rng) {
    const ModelConfig& cfg = p.config;
    const Eigen::Index t = static_cast<Eigen::Index>(ids.size());
    if (t < 1) throw InvalidArgument("forward: empty sequence");
    if (t > cfg.max_seq_len) throw InvalidArgument("forward: sequence exceeds max_seq_len");
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("forward: id outside vocabulary");
    const Eigen::Index d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const bool use_dropout = cfg.dropout > 0.0 && dropout_rng;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    MatT<S> x(t, d);
    for (Eigen::Index i = 0; i < t; ++i)
        x.row(i) = p.tok_emb.row(ids[static_cast<std::size_t>(i)]) + p.pos_emb.row(i);
    if (use_dropout) {
        MatT<S> m = dropout_mask<S>(t, d, cfg.dropout, *dropout_rng);
        x = x.cwiseProduct(m);
        if (cache) cache->drop_emb = std::move(m);
    }
    if (cache) {
        cache->x0 = x;
        cache->blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    }

    MatT<S> hat;
    VecT<S> inv;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& blk = p.blocks[static_cast<std::size_t>(l)];
        BlockCache<S> local;
        BlockCache<S>& bc = cache ? cache->blocks[static_cast<std::size_t>(l)] : local;
        bc.x_in = x;
        MatT<S> ln1 = layer_norm(x, blk.ln1_g, blk.ln1_b, bc.ln1_hat, bc.ln1_inv);
        bc.q = (ln1 * blk.wq.transpose()).rowwise() + blk.bq.row(0);
        bc.k = (ln1 * blk.wk.transpose()).rowwise() + blk.bk.row(0);
        bc.v = (ln1 * blk.wv.transpose()).rowwise() + blk.bv.row(0);
        bc.mix.resize(t, d);
        bc.probs.assign(static_cast<std::size_t>(heads), MatT<S>());
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto qh = bc.q.middleCols(h * dh, dh);
            auto kh = bc.k.middleCols(h * dh, dh);
            auto vh = bc.v.middleCols(h * dh, dh);
            MatT<S>& probs = bc.probs[static_cast<std::size_t>(h)];
            probs.setZero(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                Eigen::Matrix<S, 1, Eigen::Dynamic> scores =
                    (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
                const S mx = scores.maxCoeff();
                Eigen::Array<S, 1, Eigen::Dynamic> e = (scores.array() - mx).exp();
                probs.row(i).head(i + 1) = e / e.sum();
            }
            bc.mix.middleCols(h * dh, dh) = probs * vh;
        }
        MatT<S> attn = (bc.mix * blk.wo.transpose()).rowwise() + blk.bo.row(0);
        if (use_dropout) {
            bc.drop_attn = dropout_mask<S>(t, d, cfg.dropout, *dropout_rng);
            attn = attn.cwiseProduct(bc.drop_attn);
        }
        bc.h = x + attn;
        MatT<S> ln2 = layer_norm(bc.h, blk.ln2_g, blk.ln2_b, bc.ln2_hat, bc.ln2_inv);
        bc.ff_pre = (ln2 * blk.w1.transpose()).rowwise() + blk.b1.row(0);
        bc.ff_act = bc.ff_pre.unaryExpr([](S v) { return gelu(v); });
        MatT<S> ff = (bc.ff_act * blk.w2.transpose()).rowwise() + blk.b2.row(0);
        if (use_dropout) {
            bc.drop_ff = dropout_mask<S>(t, d, cfg.dropout, *dropout_rng);
            ff = ff.cwiseProduct(bc.drop_ff);
        }
        x = bc.h + ff;
    }
    if (cache) cache->x_last = x;
    MatT<S> lnf = cache ? layer_norm(x, p.lnf_g, p.lnf_b, cache->lnf_hat, cache->lnf_inv)
                        : layer_norm(x, p.lnf_g, p.lnf_b, hat, inv);
    return (lnf * p.head_w.transpose()).rowwise() + p.head_b.row(0);
}

template <typename S>
double row_logsumexp(const MatT<S>& logits, Eigen::Index row) {
    const S mx = logits.row(row).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
        sum += std::exp(static_cast<double>(logits(row, j)) - static_cast<double>(mx));
    return static_cast<double>(mx) + std::log(sum);
}

// Cross-entropy of target t read from logits row t−1, in double precision.
template <typename S>
double target_ce(const MatT<S>& logits, const std::vector<int>& targets, std::size_t t) {
    if (t == 0) throw InvalidArgument("loss: target at position 0 has no preceding logits");
    const int y = targets[t];
    if (y < 0 || y >= logits.cols()) throw InvalidArgument("loss: target id outside vocabulary");
    const Eigen::Index row = static_cast<Eigen::Index>(t) - 1;
    return row_logsumexp(logits, row) - static_cast<double>(logits(row, y));
}

template <typename S>
double weighted_ce_over(const MatT<S>& logits, const std::vector<int>& targets,
                        const std::vector<double>& w) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows() || w.size() != targets.size())
        throw InvalidArgument("loss: length mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < w.size(); ++t) {
        if (w[t] <= 0.0) continue;
        num += w[t] * target_ce(logits, targets, t);
        den += w[t];
    }
    if (den == 0.0) throw InvalidArgument("loss: empty mask, no supervised positions");
    return num / den;
}

} // namespace

template <typename S> ModelParamsT<S> ModelParamsT<S>::shaped(const ModelConfig& cfg) {
    cfg.validate();
    ModelParamsT<S> p;
    p.config = cfg;
    p.tok_emb.resize(cfg.vocab_size, cfg.d_model);
    p.pos_emb.resize(cfg.max_seq_len, cfg.d_model);
    p.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& b : p.blocks) {
        b.ln1_g.resize(1, cfg.d_model);
        b.ln1_b.resize(1, cfg.d_model);
        b.wq.resize(cfg.d_model, cfg.d_model);
        b.bq.resize(1, cfg.d_model);
        b.wk.resize(cfg.d_model, cfg.d_model);
        b.bk.resize(1, cfg.d_model);
        b.wv.resize(cfg.d_model, cfg.d_model);
        b.bv.resize(1, cfg.d_model);
        b.wo.resize(cfg.d_model, cfg.d_model);
        b.bo.resize(1, cfg.d_model);
        b.ln2_g.resize(1, cfg.d_model);
        b.ln2_b.resize(1, cfg.d_model);
        b.w1.resize(cfg.d_ff, cfg.d_model);
        b.b1.resize(1, cfg.d_ff);
        b.w2.resize(cfg.d_model, cfg.d_ff);
        b.b2.resize(1, cfg.d_model);
    }
    p.lnf_g.resize(1, cfg.d_model);
    p.lnf_b.resize(1, cfg.d_model);
    p.head_w.resize(cfg.vocab_size, cfg.d_model);
    p.head_b.resize(1, cfg.vocab_size);
    return p;
}

template <typename S> void ModelParamsT<S>::set_zero() {
    for_each_tensor([](const std::string&, Mat& m) { m.setZero(); });
}

template <typename S> long ModelParamsT<S>::parameter_count() const {
    long n = 0;
    for_each_tensor([&](const std::string&, const Mat& m) { n += static_cast<long>(m.size()); });
    return n;
}

template <typename S> ModelParamsT<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParamsT<S> p = ModelParamsT<S>::shaped(cfg);
    Rng rng(seed);
    p.for_each_tensor([&](const std::string& name, typename ModelParamsT<S>::Mat& m) {
        const std::string leaf = name.substr(name.rfind('.') + 1);
        const bool is_weight =
            leaf[0] == 'w' || leaf == "tok_emb" || leaf == "pos_emb" || leaf == "head_w";
        if (is_weight) {
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j)
                    m(i, j) = static_cast<S>(0.02 * rng.normal());
        } else if (leaf.size() > 2 && leaf.compare(leaf.size() - 2, 2, "_g") == 0) {
            m.setOnes();
        } else {
            m.setZero();
        }
    });
    return p;
}

template <typename S>
typename ModelParamsT<S>::Mat forward(const ModelParamsT<S>& params, const std::vector<int>& ids) {
    return forward_impl<S>(params, ids, nullptr, nullptr);
}

template <typename S>
double masked_loss(const typename ModelParamsT<S>::Mat& logits, const std::vector<int>& targets,
                   const std::vector<std::uint8_t>& mask) {
    if (mask.size() != targets.size()) throw InvalidArgument("loss: mask length mismatch");
    std::vector<double> w(mask.size(), 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? 1.0 : 0.0;
    return weighted_ce_over<S>(logits, targets, w);
}

template <typename S>
double weighted_loss(const typename ModelParamsT<S>::Mat& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask_vision,
                     const std::vector<std::uint8_t>& mask_action, double w_v, double w_a) {
    if (mask_vision.size() != targets.size() || mask_action.size() != targets.size())
        throw InvalidArgument("loss: mask length mismatch");
    if (w_v < 0.0 || w_a < 0.0) throw InvalidArgument("loss: negative weights");
    std::vector<double> w(targets.size(), 0.0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (mask_vision[i] && mask_action[i])
            throw InvalidArgument("loss: vision and action masks overlap");
        if (mask_vision[i]) w[i] = w_v;
        if (mask_action[i]) w[i] = w_a;
    }
    return weighted_ce_over<S>(logits, targets, w);
}

template <typename S>
SeqLossTerms seq_loss_and_grad(const ModelParamsT<S>& params, const std::vector<int>& inputs,
                               const std::vector<int>& targets,
                               const std::vector<double>& target_weights, ModelParamsT<S>* grads,
                               Rng* dropout_rng) {
    if (targets.size() != inputs.size() || target_weights.size() != inputs.size())
        throw InvalidArgument("loss: input/target/weight length mismatch");
    Cache<S> cache;
    MatT<S> logits = forward_impl<S>(params, inputs, grads ? &cache : nullptr, dropout_rng);

    SeqLossTerms terms;
    for (std::size_t t = 0; t < target_weights.size(); ++t) {
        if (target_weights[t] <= 0.0) continue;
        terms.weighted_ce += target_weights[t] * target_ce(logits, targets, t);
        terms.weight_total += target_weights[t];
        ++terms.target_count;
    }
    if (terms.target_count == 0) throw InvalidArgument("loss: empty mask, no supervised positions");
    if (!grads) return terms;

    const ModelConfig& cfg = params.config;
    const Eigen::Index t = logits.rows(), d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    // d(weighted-sum CE)/dlogits: softmax minus one-hot, per supervised row.
    MatT<S> dlogits = MatT<S>::Zero(t, cfg.vocab_size);
    for (std::size_t pos = 0; pos < target_weights.size(); ++pos) {
        if (target_weights[pos] <= 0.0) continue;
        const Eigen::Index row = static_cast<Eigen::Index>(pos) - 1;
        const double lse = row_logsumexp(logits, row);
        const double w = target_weights[pos];
        for (Eigen::Index j = 0; j < cfg.vocab_size; ++j)
            dlogits(row, j) +=
                static_cast<S>(w * std::exp(static_cast<double>(logits(row, j)) - lse));
        dlogits(row, targets[pos]) -= static_cast<S>(w);
    }

    // Head and final layer norm.
    MatT<S> lnf_out(t, d);
    for (Eigen::Index i = 0; i < t; ++i)
        lnf_out.row(i) = cache.lnf_hat.row(i).cwiseProduct(params.lnf_g.row(0)) + params.lnf_b.row(0);
    grads->head_w += dlogits.transpose() * lnf_out;
    grads->head_b.row(0) += dlogits.colwise().sum();
    MatT<S> dlnf = dlogits * params.head_w;
    MatT<S> dx = layer_norm_backward(dlnf, cache.lnf_hat, cache.lnf_inv, params.lnf_g,
                                     &grads->lnf_g, &grads->lnf_b);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& blk = params.blocks[static_cast<std::size_t>(l)];
        auto& gb = grads->blocks[static_cast<std::size_t>(l)];
        BlockCache<S>& bc = cache.blocks[static_cast<std::size_t>(l)];

        // Feed-forward branch.
        MatT<S> dff = bc.drop_ff.size() ? dx.cwiseProduct(bc.drop_ff) : dx;
        MatT<S> ln2_out(t, d);
        for (Eigen::Index i = 0; i < t; ++i)
            ln2_out.row(i) = bc.ln2_hat.row(i).cwiseProduct(blk.ln2_g.row(0)) + blk.ln2_b.row(0);
        gb.w2 += dff.transpose() * bc.ff_act;
        gb.b2.row(0) += dff.colwise().sum();
        MatT<S> dact = dff * blk.w2;
        MatT<S> dpre = dact.cwiseProduct(bc.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }));
        gb.w1 += dpre.transpose() * ln2_out;
        gb.b1.row(0) += dpre.colwise().sum();
        MatT<S> dln2 = dpre * blk.w1;
        MatT<S> dh_total =
            dx + layer_norm_backward(dln2, bc.ln2_hat, bc.ln2_inv, blk.ln2_g, &gb.ln2_g, &gb.ln2_b);

        // Attention branch.
        MatT<S> dattn = bc.drop_attn.size() ? dh_total.cwiseProduct(bc.drop_attn) : dh_total;
        gb.wo += dattn.transpose() * bc.mix;
        gb.bo.row(0) += dattn.colwise().sum();
        MatT<S> dmix = dattn * blk.wo;
        MatT<S> dq = MatT<S>::Zero(t, d), dk = MatT<S>::Zero(t, d), dv = MatT<S>::Zero(t, d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto qh = bc.q.middleCols(h * dh, dh);
            auto kh = bc.k.middleCols(h * dh, dh);
            auto vh = bc.v.middleCols(h * dh, dh);
            const MatT<S>& probs = bc.probs[static_cast<std::size_t>(h)];
            auto doh = dmix.middleCols(h * dh, dh);
            dv.middleCols(h * dh, dh) += probs.transpose() * doh;
            MatT<S> dprobs = doh * vh.transpose(); // T×T, only lower triangle meaningful
            for (Eigen::Index i = 0; i < t; ++i) {
                auto prow = probs.row(i).head(i + 1);
                auto dprow = dprobs.row(i).head(i + 1);
                const S dot = prow.cwiseProduct(dprow).sum();
                Eigen::Matrix<S, 1, Eigen::Dynamic> dscores =
                    prow.cwiseProduct(dprow.array().matrix() -
                                      Eigen::Matrix<S, 1, Eigen::Dynamic>::Constant(1, i + 1, dot)) *
                    scale;
                dq.row(i).segment(h * dh, dh) += dscores * kh.topRows(i + 1);
                dk.topRows(i + 1).middleCols(h * dh, dh) += dscores.transpose() * qh.row(i);
            }
        }
        MatT<S> ln1_out(t, d);
        for (Eigen::Index i = 0; i < t; ++i)
            ln1_out.row(i) = bc.ln1_hat.row(i).cwiseProduct(blk.ln1_g.row(0)) + blk.ln1_b.row(0);
        gb.wq += dq.transpose() * ln1_out;
        gb.bq.row(0) += dq.colwise().sum();
        gb.wk += dk.transpose() * ln1_out;
        gb.bk.row(0) += dk.colwise().sum();
        gb.wv += dv.transpose() * ln1_out;
        gb.bv.row(0) += dv.colwise().sum();
        MatT<S> dln1 = dq * blk.wq + dk * blk.wk + dv * blk.wv;
        dx = dh_total +
             layer_norm_backward(dln1, bc.ln1_hat, bc.ln1_inv, blk.ln1_g, &gb.ln1_g, &gb.ln1_b);
    }

    if (cache.drop_emb.size()) dx = dx.cwiseProduct(cache.drop_emb);
    for (Eigen::Index i = 0; i < t; ++i) {
        grads->tok_emb.row(inputs[static_cast<std::size_t>(i)]) += dx.row(i);
        grads->pos_emb.row(i) += dx.row(i);
    }
    return terms;
}

namespace {

// Incremental decoding state: cached keys/values per layer.
template <typename S> struct KvCache {
    std::vector<MatT<S>> k, v;
    int len = 0;
};

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> kv_step(const ModelParamsT<S>& p, KvCache<S>& cache, int id) {
    const ModelConfig& cfg = p.config;
    const Eigen::Index d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const int pos = cache.len;
    using Row = Eigen::Matrix<S, 1, Eigen::Dynamic>;

    Row x = p.tok_emb.row(id) + p.pos_emb.row(pos);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& blk = p.blocks[static_cast<std::size_t>(l)];
        auto& kl = cache.k[static_cast<std::size_t>(l)];
        auto& vl = cache.v[static_cast<std::size_t>(l)];

        const S mu = x.mean();
        const S var = (x.array() - mu).square().mean();
        const S inv = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLnEps));
        Row ln1 = (((x.array() - mu) * inv).matrix()).cwiseProduct(blk.ln1_g.row(0)) + blk.ln1_b.row(0);

        Row q = ln1 * blk.wq.transpose() + blk.bq.row(0);
        kl.row(pos) = ln1 * blk.wk.transpose() + blk.bk.row(0);
        vl.row(pos) = ln1 * blk.wv.transpose() + blk.bv.row(0);

        Row mix(d);
        for (Eigen::Index h = 0; h < heads; ++h) {
            Row scores =
                (q.segment(h * dh, dh) * kl.topRows(pos + 1).middleCols(h * dh, dh).transpose()) *
                scale;
            const S mx = scores.maxCoeff();
            Eigen::Array<S, 1, Eigen::Dynamic> e = (scores.array() - mx).exp();
            Row probs = (e / e.sum()).matrix();
            mix.segment(h * dh, dh) = probs * vl.topRows(pos + 1).middleCols(h * dh, dh);
        }
        x += mix * blk.wo.transpose() + blk.bo.row(0);

        const S mu2 = x.mean();
        const S var2 = (x.array() - mu2).square().mean();
        const S inv2 = static_cast<S>(1) / std::sqrt(var2 + static_cast<S>(kLnEps));
        Row ln2 =
            (((x.array() - mu2) * inv2).matrix()).cwiseProduct(blk.ln2_g.row(0)) + blk.ln2_b.row(0);
        Row pre = ln2 * blk.w1.transpose() + blk.b1.row(0);
        Row act = pre.unaryExpr([](S v) { return gelu(v); });
        x += act * blk.w2.transpose() + blk.b2.row(0);
    }
    ++cache.len;
    return x;
}

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> head_logits(const ModelParamsT<S>& p,
                                                const Eigen::Matrix<S, 1, Eigen::Dynamic>& x) {
    const S mu = x.mean();
    const S var = (x.array() - mu).square().mean();
    const S inv = static_cast<S>(1) / std::sqrt(var + static_cast<S>(kLnEps));
    Eigen::Matrix<S, 1, Eigen::Dynamic> ln =
        (((x.array() - mu) * inv).matrix()).cwiseProduct(p.lnf_g.row(0)) + p.lnf_b.row(0);
    return ln * p.head_w.transpose() + p.head_b.row(0);
}

template <typename S>
int pick_token(const Eigen::Matrix<S, 1, Eigen::Dynamic>& logits, const GenerateOptions& opts,
               Rng& rng) {
    const Eigen::Index v = logits.cols();
    if (opts.mode == DecodeMode::greedy) {
        int best = 0;
        for (Eigen::Index j = 1; j < v; ++j)
            if (logits[j] > logits[best]) best = static_cast<int>(j);
        return best;
    }
    const int k = std::min<int>(std::max(opts.top_k, 1), static_cast<int>(v));
    std::vector<int> idx(static_cast<std::size_t>(v));
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });
    double mx = static_cast<double>(logits[idx[0]]);
    std::vector<double> w(static_cast<std::size_t>(k));
    double tot = 0.0;
    for (int i = 0; i < k; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(static_cast<double>(logits[idx[static_cast<std::size_t>(i)]]) - mx);
        tot += w[static_cast<std::size_t>(i)];
    }
    double target = rng.uniform() * tot;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += w[static_cast<std::size_t>(i)];
        if (target < acc) return idx[static_cast<std::size_t>(i)];
    }
    return idx[static_cast<std::size_t>(k - 1)];
}

} // namespace

template <typename S>
GenerateResult generate(const ModelParamsT<S>& params, const std::vector<int>& prefix,
                        const GenerateOptions& opts) {
    const ModelConfig& cfg = params.config;
    if (prefix.empty()) throw InvalidArgument("generate: empty prefix");
    if (opts.max_new < 1) throw InvalidArgument("generate: max_new must be positive");
    for (int id : prefix)
        if (id < 0 || id >= cfg.vocab_size) throw InvalidArgument("generate: id outside vocabulary");
    if (static_cast<int>(prefix.size()) >= cfg.max_seq_len)
        throw BudgetExceeded("generate: prompt fills the context window");

    KvCache<S> cache;
    cache.k.assign(static_cast<std::size_t>(cfg.n_layers), MatT<S>(cfg.max_seq_len, cfg.d_model));
    cache.v.assign(static_cast<std::size_t>(cfg.n_layers), MatT<S>(cfg.max_seq_len, cfg.d_model));

    Eigen::Matrix<S, 1, Eigen::Dynamic> hidden;
    for (int id : prefix) hidden = kv_step(params, cache, id);

    Rng rng(opts.seed);
    GenerateResult result;
    while (true) {
        int next = pick_token(head_logits(params, hidden), opts, rng);
        result.tokens.push_back(next);
        if (std::find(opts.stop_tokens.begin(), opts.stop_tokens.end(), next) !=
            opts.stop_tokens.end()) {
            result.reason = StopReason::stop_token;
            return result;
        }
        if (static_cast<int>(result.tokens.size()) >= opts.max_new) {
            result.reason = StopReason::max_new;
            return result;
        }
        if (cache.len >= cfg.max_seq_len) {
            result.reason = StopReason::context_full;
            return result;
        }
        hidden = kv_step(params, cache, next);
    }
}

namespace {

void write_config(std::ostream& os, const ModelConfig& cfg) {
    write_u32(os, static_cast<std::uint32_t>(cfg.vocab_size));
    write_u32(os, static_cast<std::uint32_t>(cfg.d_model));
    write_u32(os, static_cast<std::uint32_t>(cfg.n_layers));
    write_u32(os, static_cast<std::uint32_t>(cfg.n_heads));
    write_u32(os, static_cast<std::uint32_t>(cfg.d_ff));
    write_u32(os, static_cast<std::uint32_t>(cfg.max_seq_len));
    std::uint64_t bits = 0;
    static_assert(sizeof(double) == 8);
    std::memcpy(&bits, &cfg.dropout, 8);
    write_u64(os, bits);
}

ModelConfig read_config(std::istream& is) {
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(read_u32(is));
    cfg.d_model = static_cast<int>(read_u32(is));
    cfg.n_layers = static_cast<int>(read_u32(is));
    cfg.n_heads = static_cast<int>(read_u32(is));
    cfg.d_ff = static_cast<int>(read_u32(is));
    cfg.max_seq_len = static_cast<int>(read_u32(is));
    std::uint64_t bits = read_u64(is);
    std::memcpy(&cfg.dropout, &bits, 8);
    return cfg;
}

} // namespace

void save_checkpoint(std::ostream& os, const ModelParams& params) {
    write_magic(os, "UVCK");
    write_u32(os, 1);
    write_config(os, params.config);
    std::uint32_t count = 0;
    params.for_each_tensor([&](const std::string&, const ModelParams::Mat&) { ++count; });
    write_u32(os, count);
    params.for_each_tensor(
        [&](const std::string& name, const ModelParams::Mat& m) {
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            write_bytes(os, name.data(), name.size());
            write_u32(os, 2);
            write_u32(os, static_cast<std::uint32_t>(m.rows()));
            write_u32(os, static_cast<std::uint32_t>(m.cols()));
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) write_f32(os, m(i, j));
        });
}

ModelParams load_checkpoint(std::istream& is) {
    expect_magic(is, "UVCK", "checkpoint");
    if (read_u32(is) != 1) throw CorruptStream("checkpoint: unsupported version");
    ModelConfig cfg = read_config(is);
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw CorruptStream(std::string("checkpoint: bad config: ") + e.what());
    }
    ModelParams params = ModelParams::shaped(cfg);
    std::uint32_t expected = 0;
    params.for_each_tensor([&](const std::string&, ModelParams::Mat&) { ++expected; });
    if (read_u32(is) != expected) throw CorruptStream("checkpoint: tensor count mismatch");
    params.for_each_tensor([&](const std::string& name, ModelParams::Mat& m) {
        std::uint32_t len = read_u32(is);
        std::string got(len, '\0');
        read_bytes(is, got.data(), len);
        if (got != name) throw CorruptStream("checkpoint: expected tensor " + name + ", got " + got);
        if (read_u32(is) != 2) throw CorruptStream("checkpoint: unsupported tensor rank");
        if (read_u32(is) != static_cast<std::uint32_t>(m.rows()) ||
            read_u32(is) != static_cast<std::uint32_t>(m.cols()))
            throw CorruptStream("checkpoint: shape mismatch for " + name);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = read_f32(is);
    });
    return params;
}

void save_checkpoint_file(const std::filesystem::path& p, const ModelParams& params) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write " + p.string());
    save_checkpoint(f, params);
    if (!f) throw IoError("short write to " + p.string());
}

ModelParams load_checkpoint_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw NotFoundError("cannot open checkpoint " + p.string());
    return load_checkpoint(f);
}

// The library trains in float; tests instantiate double for gradient checks.
template struct ModelParamsT<float>;
template struct ModelParamsT<double>;
template ModelParamsT<float> init_model<float>(const ModelConfig&, std::uint64_t);
template ModelParamsT<double> init_model<double>(const ModelConfig&, std::uint64_t);
template ModelParamsT<float>::Mat forward<float>(const ModelParamsT<float>&,
                                                 const std::vector<int>&);
template ModelParamsT<double>::Mat forward<double>(const ModelParamsT<double>&,
                                                   const std::vector<int>&);
template double masked_loss<float>(const ModelParamsT<float>::Mat&, const std::vector<int>&,
                                   const std::vector<std::uint8_t>&);
template double masked_loss<double>(const ModelParamsT<double>::Mat&, const std::vector<int>&,
                                    const std::vector<std::uint8_t>&);
template double weighted_loss<float>(const ModelParamsT<float>::Mat&, const std::vector<int>&,
                                     const std::vector<std::uint8_t>&,
                                     const std::vector<std::uint8_t>&, double, double);
template double weighted_loss<double>(const ModelParamsT<double>::Mat&, const std::vector<int>&,
                                      const std::vector<std::uint8_t>&,
                                      const std::vector<std::uint8_t>&, double, double);
template SeqLossTerms seq_loss_and_grad<float>(const ModelParamsT<float>&, const std::vector<int>&,
                                               const std::vector<int>&, const std::vector<double>&,
                                               ModelParamsT<float>*, Rng*);
template SeqLossTerms seq_loss_and_grad<double>(const ModelParamsT<double>&,
                                                const std::vector<int>&, const std::vector<int>&,
                                                const std::vector<double>&, ModelParamsT<double>*,
                                                Rng*);
template GenerateResult generate<float>(const ModelParamsT<float>&, const std::vector<int>&,
                                        const GenerateOptions&);
template GenerateResult generate<double>(const ModelParamsT<double>&, const std::vector<int>&,
                                         const GenerateOptions&);

} // namespace univla
