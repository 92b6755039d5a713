#pragma once

#include "univla/ar_model.hpp"
#include "univla/codecs.hpp"
#include "univla/sim_env.hpp"
#include "univla/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace univla {

struct RolloutConfig {
    int chunk_h = 0; // 0: use the codec chunk size
    HistoryConfig history{};
    int max_env_steps = 100;
    GenerateOptions gen{};  // stop tokens and max_new are managed per chunk
    int token_budget = 0;   // generated tokens allowed per action block; 0: h·d
    int max_prompt_len = kDefaultMaxLen;
    EnvConfig env{};
};

/// Why an action block failed to parse. `none` means every block was clean.
enum class Malformation {
    none,
    foreign_token,     // non-action token inside BOA..EOA
    boundary_straddle, // a merged symbol crossed the h·d coefficient boundary
    short_block,       // generation stopped before h·d coefficients
    context_overflow,  // prompt plus block exceeded the model context
    undecodable,       // tokens parsed but the codec rejected them
};

std::string malformation_name(Malformation m);

struct RolloutResult {
    std::uint64_t env_seed = 0;
    bool success = false;
    bool malformed = false; // bad token inside an action block, or budget overrun
    Malformation why = Malformation::none;
    int env_steps = 0;
    int chunks = 0; // action blocks decoded and executed
};

/// Closed loop: render → encode → prompt ending in BOA → generate until EOA
/// or the token budget → decode the prefix expanding to exactly h·d
/// coefficients into an H-step chunk → execute all H deltas as prefix-sum
/// targets from the pose at generation time. Malformed generations fail the
/// episode.
RolloutResult rollout(const ModelParams& params, std::uint64_t env_seed, const TaskSpec& task,
                      const Codecs& codecs, const RolloutConfig& cfg);

struct EvalReport {
    std::vector<RolloutResult> episodes;
    double success_rate = 0.0;
    double mean_steps = 0.0;
    int malformed = 0;

    /// One row per episode: "episode seed success malformed reason steps
    /// chunks", with a trailing comment line of aggregate rates and a
    /// per-reason malformation breakdown.
    std::string tsv() const;
};

/// Mean success over n episodes seeded seed, seed+1, ...
EvalReport evaluate(const ModelParams& params, int n, const TaskSpec& task, std::uint64_t seed,
                    const Codecs& codecs, const RolloutConfig& cfg);

/// The scripted controller pushed through the same report schema; its success
/// rate is the achievable upper bound of the benchmark.
EvalReport evaluate_expert(int n, const TaskSpec& task, std::uint64_t seed,
                           const EnvConfig& env = {}, int max_env_steps = 100);

/// Deterministic episode subset: a seeded shuffle picks ceil(fraction·n)
/// episodes, returned in their original order.
std::vector<Episode> data_fraction_subset(const std::vector<Episode>& episodes, double fraction,
                                          std::uint64_t seed);

struct AblationConfig {
    std::vector<Strategy> strategies = {Strategy::none, Strategy::action_pred, Strategy::t2i,
                                        Strategy::video, Strategy::world_model};
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    TaskSpec task{};
    int eval_episodes = 100;
    std::uint64_t eval_seed = 777000;
    ModelConfig model{};     // vocab_size is filled from the codecs
    TrainConfig posttrain{}; // stage/strategy/seed overridden per arm
    TrainConfig finetune{};
    PackOptions pack{Strategy::policy, HistoryConfig{1, 1, 10}};
    double data_fraction = 0.1;             // ≤ 0 or ≥ 1: skip the subset arm
    std::uint64_t data_subset_seed = 424242;
    std::vector<int> history_sweep = {0, 1, 2}; // h values; empty: skip
    bool joint_arm = true;
    double joint_w_v = 0.5;
    double joint_w_a = 1.0;
    RolloutConfig rollout{};
};

struct AblationRow {
    std::string arm; // strategy | data_fraction | history | joint
    Strategy strategy = Strategy::none;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    int history = 0;
    double w_v = 0.0;
    double w_a = 1.0;
    double success = 0.0;
    int malformed = 0;
    double mean_steps = 0.0;
    double final_loss = 0.0;
    long convergence_step = -1; // first step at or under the loss threshold
    int finetune_steps = 0;
    std::string checkpoint; // file names relative to the work directory
    std::string finetune_metrics;
    std::string posttrain_metrics;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    double loss_threshold = 0.0; // median final loss of the scratch arm
    std::string table_tsv;
    std::string summary;
};

/// Runs every requested arm with shared stage-1 checkpoints and a shared eval
/// seed set, writing checkpoints, metric logs, and the two report files into
/// work_dir. Fully deterministic for fixed inputs and configuration.
AblationReport ablation_suite(const std::vector<Episode>& episodes, const Codecs& codecs,
                              const AblationConfig& cfg, const std::filesystem::path& work_dir);

} // namespace univla
