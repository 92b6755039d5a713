#pragma once

#include "univla/ar_model.hpp"
#include "univla/sequence_builder.hpp"
#include "univla/vocab.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace univla {

enum class Stage { posttrain, finetune };

/// Sequence-packing strategy. The first four are stage-1 (post-training)
/// candidates; policy is the stage-2 fine-tuning strategy; none skips
/// stage 1 entirely.
enum class Strategy { none, world_model, video, t2i, action_pred, policy };

std::string strategy_name(Strategy s);
Strategy parse_strategy(const std::string& name);
/// Modality whose tokens a strategy supervises.
Modality supervised_modality(Strategy s);

struct TrainConfig {
    Stage stage = Stage::finetune;
    Strategy strategy = Strategy::policy;
    int steps = 1000;
    int batch_size = 32;
    double lr0 = 3e-4;
    enum class Schedule { cosine, constant };
    Schedule schedule = Schedule::cosine;
    std::uint64_t seed = 0;
    // Loss weights per supervised modality (policy fine-tuning can supervise
    // vision jointly with w_v > 0).
    double w_v = 1.0;
    double w_a = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double adam_eps = 1e-8;

    void validate() const;
};

/// lr0 · 0.5 · (1 + cos(π · step / total)).
double cosine_lr(int step, int total, double lr0);

struct StepMetrics {
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
    long masked_tokens = 0;
};

struct TrainResult {
    std::vector<StepMetrics> log;
    double final_loss = 0.0;
};

/// Formats/parses one metrics log line: "step lr loss masked_tokens".
std::string format_metrics_line(const StepMetrics& m);
std::vector<StepMetrics> parse_metrics_log(std::istream& is);

/// Runs cfg.steps AdamW steps over the dataset (shuffled cyclically, seeded).
/// Every sequence's mask is validated against the strategy's supervised
/// modality before training. Non-finite loss raises TrainingDiverged.
TrainResult run_stage(ModelParams& params, const std::vector<TokenSequence>& data,
                      const TrainConfig& cfg, const Vocabulary& vocab,
                      std::ostream* metrics_out = nullptr);

struct TwoStageResult {
    ModelParams params;
    TrainResult stage1;
    TrainResult stage2;
};

/// The two-stage recipe: post-train with a vision-supervised (or action_pred)
/// strategy, then fine-tune the policy. post_cfg.strategy == none skips
/// stage 1.
TwoStageResult two_stage(const ModelConfig& model_cfg, std::uint64_t init_seed,
                         const std::vector<TokenSequence>& stage1_data,
                         const TrainConfig& post_cfg,
                         const std::vector<TokenSequence>& stage2_data,
                         const TrainConfig& fine_cfg, const Vocabulary& vocab,
                         std::ostream* stage1_log = nullptr, std::ostream* stage2_log = nullptr);

} // namespace univla
