#pragma once

#include "univla/common.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace univla {

/// Budget violations that are not data corruption: context overflow, etc.
struct BudgetExceeded : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq_len = 1024;
    double dropout = 0.0;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// All learnable tensors. Templated on the scalar so unit tests can run the
/// identical code in double precision (gradient checks); training uses float.
/// Vectors (biases, layer-norm gains) are stored as 1×N matrices so every
/// parameter group shares one tensor type.
template <typename S> struct ModelParamsT {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    struct Block {
        Mat ln1_g, ln1_b;
        Mat wq, bq, wk, bk, wv, bv, wo, bo; // weights D×D, biases 1×D
        Mat ln2_g, ln2_b;
        Mat w1, b1; // d_ff×D, 1×d_ff
        Mat w2, b2; // D×d_ff, 1×D
    };

    ModelConfig config;
    Mat tok_emb; // V×D
    Mat pos_emb; // max_seq_len×D
    std::vector<Block> blocks;
    Mat lnf_g, lnf_b; // 1×D
    Mat head_w;       // V×D (untied from tok_emb)
    Mat head_b;       // 1×V

    /// Visits every tensor in a fixed order with a stable name.
    template <typename F> void for_each_tensor(F&& f);
    template <typename F> void for_each_tensor(F&& f) const;

    /// Allocates all tensors for cfg without initializing values.
    static ModelParamsT shaped(const ModelConfig& cfg);
    void set_zero();
    long parameter_count() const;
    template <typename S2> ModelParamsT<S2> cast() const;
};

using ModelParams = ModelParamsT<float>;

/// Deterministic initialization: weights ~ Normal(0, 0.02²) drawn in tensor
/// visitation order, biases zero, layer-norm gains one.
template <typename S> ModelParamsT<S> init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Full forward pass: causal pre-norm transformer, learned positional
/// embeddings, final layer norm, untied projection. Returns |ids|×V logits.
template <typename S>
typename ModelParamsT<S>::Mat forward(const ModelParamsT<S>& params, const std::vector<int>& ids);

/// Mean cross-entropy over positions p with mask[p] set, reading logits at
/// p−1 (mask marks prediction targets). Targets are independent of the input
/// ids so label invariance is testable. All-false mask is an error.
template <typename S>
double masked_loss(const typename ModelParamsT<S>::Mat& logits, const std::vector<int>& targets,
                   const std::vector<std::uint8_t>& mask);

/// (w_v·Σ_vision CE + w_a·Σ_action CE) / (w_v·|vision| + w_a·|action|).
/// The two masks must be disjoint.
template <typename S>
double weighted_loss(const typename ModelParamsT<S>::Mat& logits, const std::vector<int>& targets,
                     const std::vector<std::uint8_t>& mask_vision,
                     const std::vector<std::uint8_t>& mask_action, double w_v, double w_a);

/// One training example: weighted-sum cross-entropy and its gradients.
/// target_weights[p] > 0 marks position p as a target with that weight; the
/// returned value and the accumulated gradients are unnormalized sums so a
/// batch can be averaged by total weight by the caller.
struct SeqLossTerms {
    double weighted_ce = 0.0;
    double weight_total = 0.0;
    long target_count = 0;
};
template <typename S>
SeqLossTerms seq_loss_and_grad(const ModelParamsT<S>& params, const std::vector<int>& inputs,
                               const std::vector<int>& targets,
                               const std::vector<double>& target_weights,
                               ModelParamsT<S>* grads = nullptr, Rng* dropout_rng = nullptr);

enum class DecodeMode { greedy, top_k };

struct GenerateOptions {
    DecodeMode mode = DecodeMode::greedy;
    int top_k = 8;
    std::uint64_t seed = 0;
    int max_new = 64;
    std::vector<int> stop_tokens;
};

enum class StopReason { stop_token, max_new, context_full };

struct GenerateResult {
    std::vector<int> tokens; // newly generated, including the stop token if any
    StopReason reason = StopReason::max_new;
};

/// Autoregressive decoding with a KV cache. Appends tokens until a stop token
/// is produced, max_new is reached, or the context fills up. A prefix that
/// already fills the context raises BudgetExceeded.
template <typename S>
GenerateResult generate(const ModelParamsT<S>& params, const std::vector<int>& prefix,
                        const GenerateOptions& opts);

// Checkpoints: header (magic, version, config), then named tensors.
void save_checkpoint(std::ostream& os, const ModelParams& params);
ModelParams load_checkpoint(std::istream& is);
void save_checkpoint_file(const std::filesystem::path& p, const ModelParams& params);
ModelParams load_checkpoint_file(const std::filesystem::path& p);

namespace detail {

template <typename Self, typename F> void visit_params(Self& p, F& f) {
    f("tok_emb", p.tok_emb);
    f("pos_emb", p.pos_emb);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        const std::string prefix = "blocks." + std::to_string(l) + ".";
        f(prefix + "ln1_g", b.ln1_g);
        f(prefix + "ln1_b", b.ln1_b);
        f(prefix + "wq", b.wq);
        f(prefix + "bq", b.bq);
        f(prefix + "wk", b.wk);
        f(prefix + "bk", b.bk);
        f(prefix + "wv", b.wv);
        f(prefix + "bv", b.bv);
        f(prefix + "wo", b.wo);
        f(prefix + "bo", b.bo);
        f(prefix + "ln2_g", b.ln2_g);
        f(prefix + "ln2_b", b.ln2_b);
        f(prefix + "w1", b.w1);
        f(prefix + "b1", b.b1);
        f(prefix + "w2", b.w2);
        f(prefix + "b2", b.b2);
    }
    f("lnf_g", p.lnf_g);
    f("lnf_b", p.lnf_b);
    f("head_w", p.head_w);
    f("head_b", p.head_b);
}

} // namespace detail

template <typename S> template <typename F> void ModelParamsT<S>::for_each_tensor(F&& f) {
    detail::visit_params(*this, f);
}

template <typename S> template <typename F> void ModelParamsT<S>::for_each_tensor(F&& f) const {
    detail::visit_params(*this, f);
}

template <typename S> template <typename S2> ModelParamsT<S2> ModelParamsT<S>::cast() const {
    ModelParamsT<S2> out = ModelParamsT<S2>::shaped(config);
    std::vector<const Mat*> src;
    for_each_tensor([&](const std::string&, const Mat& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each_tensor([&](const std::string&, typename ModelParamsT<S2>::Mat& dst) {
        dst = src[i++]->template cast<S2>();
    });
    return out;
}

} // namespace univla
