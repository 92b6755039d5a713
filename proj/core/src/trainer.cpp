#include "univla/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace univla {

std::string strategy_name(Strategy s) {
    switch (s) {
    case Strategy::none: return "none";
    case Strategy::world_model: return "world_model";
    case Strategy::video: return "video";
    case Strategy::t2i: return "t2i";
    case Strategy::action_pred: return "action_pred";
    case Strategy::policy: return "policy";
    }
    return "?";
}

Strategy parse_strategy(const std::string& name) {
    for (Strategy s : {Strategy::none, Strategy::world_model, Strategy::video, Strategy::t2i,
                       Strategy::action_pred, Strategy::policy})
        if (strategy_name(s) == name) return s;
    throw InvalidArgument("unknown strategy: " + name);
}

Modality supervised_modality(Strategy s) {
    switch (s) {
    case Strategy::world_model:
    case Strategy::video:
    case Strategy::t2i: return Modality::vision;
    case Strategy::action_pred:
    case Strategy::policy: return Modality::action;
    default: throw InvalidArgument("strategy has no supervised modality: " + strategy_name(s));
    }
}

void TrainConfig::validate() const {
    if (steps < 1) throw InvalidArgument("TrainConfig: steps must be positive");
    if (batch_size < 1) throw InvalidArgument("TrainConfig: batch_size must be positive");
    if (lr0 <= 0.0) throw InvalidArgument("TrainConfig: lr0 must be positive");
    if (w_v < 0.0 || w_a < 0.0) throw InvalidArgument("TrainConfig: negative loss weight");
    if (strategy == Strategy::none)
        throw InvalidArgument("TrainConfig: strategy none is not trainable");
    if (stage == Stage::posttrain && strategy == Strategy::policy)
        throw InvalidArgument("TrainConfig: policy strategy is a finetune stage");
    if (stage == Stage::finetune && strategy != Strategy::policy)
        throw InvalidArgument("TrainConfig: finetune stage requires the policy strategy");
}

double cosine_lr(int step, int total, double lr0) {
    if (total < 1) throw InvalidArgument("cosine_lr: total must be positive");
    if (step < 0 || step > total) throw InvalidArgument("cosine_lr: step outside [0, total]");
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                                       static_cast<double>(total)));
}

std::string format_metrics_line(const StepMetrics& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%d %.12e %.12e %ld", m.step, m.lr, m.loss, m.masked_tokens);
    return buf;
}

std::vector<StepMetrics> parse_metrics_log(std::istream& is) {
    std::vector<StepMetrics> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        StepMetrics m;
        std::istringstream ss(line);
        if (!(ss >> m.step >> m.lr >> m.loss >> m.masked_tokens))
            throw CorruptStream("metrics log: malformed line: " + line);
        out.push_back(m);
    }
    return out;
}

namespace {

// Pre-training strategies consume action-free sequences; this is checked for
// the whole dataset, not just sampled batches.
void check_dataset(const std::vector<TokenSequence>& data, const TrainConfig& cfg,
                   const Vocabulary& vocab) {
    if (data.empty()) throw InvalidArgument("run_stage: empty dataset");
    const Modality supervised = supervised_modality(cfg.strategy);
    const bool joint_vision = cfg.strategy == Strategy::policy && cfg.w_v > 0.0;
    const bool action_free = supervised == Modality::vision;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const TokenSequence& s = data[i];
        if (s.ids.size() != s.mask.size())
            throw InvalidArgument("run_stage: sequence " + std::to_string(i) + " mask mismatch");
        long masked = 0;
        for (std::size_t p = 0; p < s.ids.size(); ++p) {
            Modality m = vocab.classify(s.ids[p]);
            if (action_free && m == Modality::action)
                throw InvalidArgument("run_stage: action token in an action-free dataset (seq " +
                                      std::to_string(i) + ")");
            if (s.mask[p]) {
                ++masked;
                if (m != supervised && !(joint_vision && m == Modality::vision))
                    throw InvalidArgument("run_stage: masked token of wrong modality for strategy " +
                                          strategy_name(cfg.strategy) + " (seq " +
                                          std::to_string(i) + ")");
            }
        }
        if (masked == 0)
            throw InvalidArgument("run_stage: sequence " + std::to_string(i) + " has empty mask");
    }
}

std::vector<double> target_weights_for(const TokenSequence& s, const TrainConfig& cfg,
                                       const Vocabulary& vocab) {
    std::vector<double> w(s.ids.size(), 0.0);
    for (std::size_t p = 0; p < s.ids.size(); ++p) {
        if (!s.mask[p]) continue;
        if (cfg.strategy == Strategy::policy)
            w[p] = vocab.classify(s.ids[p]) == Modality::vision ? cfg.w_v : cfg.w_a;
        else
            w[p] = 1.0;
    }
    return w;
}

} // namespace

TrainResult run_stage(ModelParams& params, const std::vector<TokenSequence>& data,
                      const TrainConfig& cfg, const Vocabulary& vocab,
                      std::ostream* metrics_out) {
    cfg.validate();
    check_dataset(data, cfg, vocab);

    ModelParams grads = ModelParams::shaped(params.config);
    ModelParams m1 = ModelParams::shaped(params.config);
    ModelParams m2 = ModelParams::shaped(params.config);
    grads.set_zero();
    m1.set_zero();
    m2.set_zero();

    Rng order_rng(cfg.seed);
    Rng dropout_rng = order_rng.fork(0x0d0d);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order);
    std::size_t cursor = 0;

    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(cfg.steps));
    Rng* drop = params.config.dropout > 0.0 ? &dropout_rng : nullptr;

    std::vector<ModelParams::Mat*> gs, m1s, m2s, ps;
    grads.for_each_tensor([&](const std::string&, ModelParams::Mat& g) { gs.push_back(&g); });
    m1.for_each_tensor([&](const std::string&, ModelParams::Mat& g) { m1s.push_back(&g); });
    m2.for_each_tensor([&](const std::string&, ModelParams::Mat& g) { m2s.push_back(&g); });
    params.for_each_tensor([&](const std::string&, ModelParams::Mat& g) { ps.push_back(&g); });

    for (int step = 0; step < cfg.steps; ++step) {
        const double lr = cfg.schedule == TrainConfig::Schedule::cosine
                              ? cosine_lr(step, cfg.steps, cfg.lr0)
                              : cfg.lr0;
        grads.set_zero();
        double ce_sum = 0.0, w_sum = 0.0;
        long masked = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                order_rng.shuffle(order);
                cursor = 0;
            }
            const TokenSequence& s = data[order[cursor++]];
            SeqLossTerms terms =
                seq_loss_and_grad<float>(params, s.ids, s.ids, target_weights_for(s, cfg, vocab),
                                         &grads, drop);
            ce_sum += terms.weighted_ce;
            w_sum += terms.weight_total;
            masked += terms.target_count;
        }
        const double loss = ce_sum / w_sum;
        if (!std::isfinite(loss))
            throw TrainingDiverged("non-finite loss " + format_g17(loss) + " at step " +
                                   std::to_string(step) + " (lr " + format_g17(lr) + ")");

        // Batch gradient = accumulated sums / total weight; clip by global norm.
        const double inv_w = 1.0 / w_sum;
        double norm_sq = 0.0;
        grads.for_each_tensor([&](const std::string&, ModelParams::Mat& g) {
            norm_sq += static_cast<double>(g.cast<double>().squaredNorm()) * inv_w * inv_w;
        });
        const double norm = std::sqrt(norm_sq);
        const double clip_scale =
            norm > cfg.grad_clip && norm > 0.0 ? cfg.grad_clip / norm : 1.0;
        const float g_scale = static_cast<float>(inv_w * clip_scale);

        const double t = static_cast<double>(step + 1);
        const float bc1 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
        const float bc2 = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
        const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
        const float eps = static_cast<float>(cfg.adam_eps);
        const float wd = static_cast<float>(cfg.weight_decay);
        const float flr = static_cast<float>(lr);

        for (std::size_t i = 0; i < gs.size(); ++i) {
            auto g = (gs[i]->array() * g_scale).eval();
            m1s[i]->array() = b1 * m1s[i]->array() + (1.0f - b1) * g;
            m2s[i]->array() = b2 * m2s[i]->array() + (1.0f - b2) * g.square();
            ps[i]->array() -= flr * ((m1s[i]->array() * bc1) /
                                         ((m2s[i]->array() * bc2).sqrt() + eps) +
                                     wd * ps[i]->array());
        }

        StepMetrics sm{step, lr, loss, masked};
        result.log.push_back(sm);
        result.final_loss = loss;
        if (metrics_out) *metrics_out << format_metrics_line(sm) << '\n';
    }
    return result;
}

TwoStageResult two_stage(const ModelConfig& model_cfg, std::uint64_t init_seed,
                         const std::vector<TokenSequence>& stage1_data,
                         const TrainConfig& post_cfg,
                         const std::vector<TokenSequence>& stage2_data,
                         const TrainConfig& fine_cfg, const Vocabulary& vocab,
                         std::ostream* stage1_log, std::ostream* stage2_log) {
    TwoStageResult out;
    out.params = init_model<float>(model_cfg, init_seed);
    if (post_cfg.strategy != Strategy::none)
        out.stage1 = run_stage(out.params, stage1_data, post_cfg, vocab, stage1_log);
    out.stage2 = run_stage(out.params, stage2_data, fine_cfg, vocab, stage2_log);
    return out;
}

} // namespace univla
