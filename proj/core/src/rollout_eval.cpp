#include "univla/rollout_eval.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace univla {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, const std::string& label) {
    return fnv1a64_str(label) ^ (seed * 0x9E3779B97F4A7C15ULL);
}

int effective_chunk(const Codecs& codecs, const RolloutConfig& cfg) {
    const int h = cfg.chunk_h > 0 ? cfg.chunk_h : codecs.chunk_h;
    if (h < 1) throw InvalidArgument("chunk size must be ≥ 1");
    return h;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

} // namespace

std::string malformation_name(Malformation m) {
    switch (m) {
    case Malformation::none: return "-";
    case Malformation::foreign_token: return "foreign_token";
    case Malformation::boundary_straddle: return "boundary_straddle";
    case Malformation::short_block: return "short_block";
    case Malformation::context_overflow: return "context_overflow";
    case Malformation::undecodable: return "undecodable";
    }
    return "?";
}

RolloutResult rollout(const ModelParams& params, std::uint64_t env_seed, const TaskSpec& task,
                      const Codecs& codecs, const RolloutConfig& cfg) {
    const int h = effective_chunk(codecs, cfg);
    const int d = codecs.stats.dims();
    const int budget = cfg.token_budget > 0 ? cfg.token_budget : h * d;
    if (budget < h * d)
        throw InvalidArgument("token budget is below the worst-case chunk expansion");

    EnvConfig env = cfg.env;
    env.max_steps = cfg.max_env_steps;

    auto [state, instruction] = reset(task, env_seed, env);
    const TextTokenizer text(codecs.vocab);
    const std::vector<int> instr = text.encode(instruction);

    RolloutResult res;
    res.env_seed = env_seed;

    PolicyBuildOptions build_opts;
    build_opts.max_len = cfg.max_prompt_len;

    std::vector<PolicyStep> steps;
    Rng gen_seeds(derive_seed(env_seed, "rollout.gen") ^ cfg.gen.seed);

    bool done = false;
    while (!done && state.step_count < env.max_steps) {
        PolicyStep cur;
        cur.frame = encode_image(render(state, env), codecs.codebook, codecs.vocab);
        cur.timestep = state.step_count;
        steps.push_back(std::move(cur));

        const TokenSequence prompt =
            build_policy_prompt(instr, steps, cfg.history, codecs.vocab, build_opts);

        GenerateOptions go = cfg.gen;
        go.max_new = budget;
        go.stop_tokens = {codecs.vocab.special(Special::eoa)};
        go.seed = gen_seeds.raw();
        const GenerateResult gen = generate(params, prompt.ids, go);

        if (gen.reason == StopReason::context_full) {
            res.malformed = true;
            res.why = Malformation::context_overflow;
            break;
        }
        std::vector<int> emitted = gen.tokens;
        if (gen.reason == StopReason::stop_token) emitted.pop_back();

        // The closing bracket is never a training target, so generation may
        // run to the budget; the action block is the shortest prefix whose
        // symbols expand to exactly h·d coefficients. Anything else — a
        // foreign token inside the block, a merge straddling the boundary, or
        // too few coefficients — is a malformed generation.
        std::vector<int> action_tokens;
        int expanded = 0;
        for (int id : emitted) {
            if (expanded == h * d) break;
            if (!codecs.vocab.action_range().contains(id)) {
                res.why = Malformation::foreign_token;
                break;
            }
            expanded += static_cast<int>(
                codecs.bpe.decode_ints({codecs.vocab.action_index(id)}).size());
            action_tokens.push_back(id);
            if (expanded > h * d) {
                res.why = Malformation::boundary_straddle;
                break;
            }
        }
        if (res.why == Malformation::none && expanded != h * d)
            res.why = Malformation::short_block;
        if (res.why != Malformation::none) {
            res.malformed = true;
            break;
        }

        ActionChunk chunk;
        try {
            chunk = decode_chunk(action_tokens, codecs.stats, codecs.action_cfg, codecs.bpe,
                                 codecs.vocab, h, d);
        } catch (const CorruptStream&) {
            res.malformed = true;
            res.why = Malformation::undecodable;
            break;
        }

        // The decoded deltas are targets accumulated from the pose at
        // generation time; issuing target-minus-current displacements keeps
        // later steps self-correcting if the env clips one of them.
        const Eigen::Vector2d pose = state.agent;
        Eigen::Vector2d cum = Eigen::Vector2d::Zero();
        for (int i = 0; i < h && !done; ++i) {
            cum.x() += chunk(i, 0);
            cum.y() += chunk(i, 1);
            EnvAction a;
            a.dx = pose.x() + cum.x() - state.agent.x();
            a.dy = pose.y() + cum.y() - state.agent.y();
            a.grip = chunk(i, 2);
            const StepResult sr = step(state, a, env);
            done = sr.done;
            res.success = sr.success;
        }
        steps.back().actions = action_tokens;
        ++res.chunks;
    }
    res.env_steps = state.step_count;
    if (res.malformed) res.success = false;
    return res;
}

std::string EvalReport::tsv() const {
    std::ostringstream os;
    os << "episode\tseed\tsuccess\tmalformed\treason\tsteps\tchunks\n";
    std::map<std::string, int> reasons;
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const RolloutResult& e = episodes[i];
        os << i << '\t' << e.env_seed << '\t' << (e.success ? 1 : 0) << '\t'
           << (e.malformed ? 1 : 0) << '\t' << malformation_name(e.why) << '\t' << e.env_steps
           << '\t' << e.chunks << '\n';
        if (e.malformed) ++reasons[malformation_name(e.why)];
    }
    os << "# success_rate=" << fmt6(success_rate) << " mean_steps=" << fmt6(mean_steps)
       << " malformed=" << malformed;
    for (const auto& [name, count] : reasons) os << ' ' << name << '=' << count;
    os << '\n';
    return os.str();
}

EvalReport evaluate(const ModelParams& params, int n, const TaskSpec& task, std::uint64_t seed,
                    const Codecs& codecs, const RolloutConfig& cfg) {
    if (n <= 0) throw InvalidArgument("evaluation needs at least one episode");
    EvalReport rep;
    double successes = 0.0;
    double steps_total = 0.0;
    for (int i = 0; i < n; ++i) {
        RolloutResult r = rollout(params, seed + static_cast<std::uint64_t>(i), task, codecs, cfg);
        successes += r.success ? 1.0 : 0.0;
        steps_total += r.env_steps;
        rep.malformed += r.malformed ? 1 : 0;
        rep.episodes.push_back(r);
    }
    rep.success_rate = successes / n;
    rep.mean_steps = steps_total / n;
    return rep;
}

EvalReport evaluate_expert(int n, const TaskSpec& task, std::uint64_t seed, const EnvConfig& env_cfg,
                           int max_env_steps) {
    if (n <= 0) throw InvalidArgument("evaluation needs at least one episode");
    EnvConfig env = env_cfg;
    env.max_steps = max_env_steps;
    EvalReport rep;
    double successes = 0.0;
    double steps_total = 0.0;
    for (int i = 0; i < n; ++i) {
        auto [state, instruction] = reset(task, seed + static_cast<std::uint64_t>(i), env);
        StepResult sr;
        while (!sr.done) sr = step(state, scripted_expert(state, env), env);
        RolloutResult r;
        r.env_seed = seed + static_cast<std::uint64_t>(i);
        r.success = sr.success;
        r.env_steps = state.step_count;
        successes += r.success ? 1.0 : 0.0;
        steps_total += r.env_steps;
        rep.episodes.push_back(r);
    }
    rep.success_rate = successes / n;
    rep.mean_steps = steps_total / n;
    return rep;
}

std::vector<Episode> data_fraction_subset(const std::vector<Episode>& episodes, double fraction,
                                          std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw InvalidArgument("data fraction must lie in (0, 1]");
    if (episodes.empty()) throw InvalidArgument("cannot subset an empty dataset");
    const int n = static_cast<int>(episodes.size());
    int k = std::max(1, static_cast<int>(std::lround(fraction * n)));
    k = std::min(k, n);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "data.subset"));
    rng.shuffle(idx);
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    std::vector<Episode> out;
    out.reserve(k);
    for (int i : idx) out.push_back(episodes[i]);
    return out;
}

namespace {

std::vector<Episode> swap_action_axes(const std::vector<Episode>& episodes) {
    std::vector<Episode> out = episodes;
    for (auto& ep : out)
        for (auto& a : ep.actions) std::swap(a.dx, a.dy);
    return out;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return std::numeric_limits<double>::quiet_NaN();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ArmOutcome {
    AblationRow row;
    std::vector<StepMetrics> log;
};

} // namespace

AblationReport ablation_suite(const std::vector<Episode>& episodes, const Codecs& codecs,
                              const AblationConfig& cfg, const std::filesystem::path& work_dir) {
    if (episodes.empty()) throw InvalidArgument("ablation needs a nonempty dataset");
    if (cfg.seeds.empty()) throw InvalidArgument("ablation needs at least one seed");
    {
        std::set<Strategy> seen;
        for (Strategy s : cfg.strategies) {
            if (s == Strategy::policy)
                throw InvalidArgument("policy is the fine-tuning strategy, not a stage-1 arm");
            if (!seen.insert(s).second)
                throw InvalidArgument("duplicate stage-1 strategy: " + strategy_name(s));
        }
    }
    std::filesystem::create_directories(work_dir);

    ModelConfig model_cfg = cfg.model;
    model_cfg.vocab_size = codecs.vocab.total_size();
    model_cfg.validate();

    std::map<Strategy, std::vector<TokenSequence>> stage1_cache;
    auto stage1_data = [&](Strategy s) -> const std::vector<TokenSequence>& {
        auto it = stage1_cache.find(s);
        if (it == stage1_cache.end()) {
            PackOptions o = cfg.pack;
            o.strategy = s;
            o.mask_history_actions = false;
            o.supervise_vision = false;
            // The action-prediction arm deliberately trains stage 1 on a
            // mismatched action space (axes swapped) — the regime where this
            // strategy transfers poorly.
            it = stage1_cache
                     .emplace(s, s == Strategy::action_pred
                                     ? pack_corpus(swap_action_axes(episodes), codecs, o)
                                     : pack_corpus(episodes, codecs, o))
                     .first;
        }
        return it->second;
    };

    std::map<std::string, std::vector<TokenSequence>> stage2_cache;
    auto stage2_data = [&](double fraction, int h,
                           bool supervise_vision) -> const std::vector<TokenSequence>& {
        const std::string key = fmt6(fraction) + "/" + std::to_string(h) + "/" +
                                (supervise_vision ? "joint" : "plain");
        auto it = stage2_cache.find(key);
        if (it == stage2_cache.end()) {
            PackOptions o = cfg.pack;
            o.strategy = Strategy::policy;
            o.history.history = h;
            o.supervise_vision = supervise_vision;
            if (fraction < 1.0) {
                const std::vector<Episode> subset =
                    data_fraction_subset(episodes, fraction, cfg.data_subset_seed);
                it = stage2_cache.emplace(key, pack_corpus(subset, codecs, o)).first;
            } else {
                it = stage2_cache.emplace(key, pack_corpus(episodes, codecs, o)).first;
            }
        }
        return it->second;
    };

    struct Stage1Entry {
        ModelParams params;
        std::string metrics;
    };
    std::map<std::pair<int, std::uint64_t>, Stage1Entry> s1_cache;
    auto stage1_params = [&](Strategy s, std::uint64_t seed) -> const Stage1Entry& {
        const auto key = std::make_pair(static_cast<int>(s), seed);
        auto it = s1_cache.find(key);
        if (it != s1_cache.end()) return it->second;
        Stage1Entry entry;
        entry.params = init_model<float>(model_cfg, derive_seed(seed, "init"));
        if (s != Strategy::none) {
            TrainConfig pc = cfg.posttrain;
            pc.stage = Stage::posttrain;
            pc.strategy = s;
            pc.seed = derive_seed(seed, "stage1." + strategy_name(s));
            entry.metrics = "post_" + strategy_name(s) + "_s" + std::to_string(seed) + ".metrics";
            std::ofstream os(work_dir / entry.metrics);
            if (!os) throw IoError("cannot write metrics under " + work_dir.string());
            run_stage(entry.params, stage1_data(s), pc, codecs.vocab, &os);
            save_checkpoint_file(work_dir / ("post_" + strategy_name(s) + "_s" +
                                             std::to_string(seed) + ".ckpt"),
                                 entry.params);
        }
        return s1_cache.emplace(key, std::move(entry)).first->second;
    };

    std::vector<ArmOutcome> outcomes;
    auto run_arm = [&](const std::string& arm, Strategy s1, std::uint64_t seed, double fraction,
                       int h, bool joint, double w_v, double w_a, const std::string& tag) {
        const Stage1Entry& s1_entry = stage1_params(s1, seed);
        ModelParams params = s1_entry.params;

        TrainConfig fc = cfg.finetune;
        fc.stage = Stage::finetune;
        fc.strategy = Strategy::policy;
        fc.w_v = w_v;
        fc.w_a = w_a;
        fc.seed = derive_seed(seed, "stage2." + tag);
        const std::string mfile = "ft_" + tag + "_s" + std::to_string(seed) + ".metrics";
        TrainResult tr;
        {
            std::ofstream os(work_dir / mfile);
            if (!os) throw IoError("cannot write metrics under " + work_dir.string());
            tr = run_stage(params, stage2_data(fraction, h, joint), fc, codecs.vocab, &os);
        }
        const std::string ck = "ft_" + tag + "_s" + std::to_string(seed) + ".ckpt";
        save_checkpoint_file(work_dir / ck, params);

        RolloutConfig rc = cfg.rollout;
        rc.history = cfg.pack.history;
        rc.history.history = h;
        const EvalReport ev =
            evaluate(params, cfg.eval_episodes, cfg.task, cfg.eval_seed, codecs, rc);

        AblationRow row;
        row.arm = arm;
        row.strategy = s1;
        row.seed = seed;
        row.data_fraction = fraction;
        row.history = h;
        row.w_v = w_v;
        row.w_a = w_a;
        row.success = ev.success_rate;
        row.malformed = ev.malformed;
        row.mean_steps = ev.mean_steps;
        row.final_loss = tr.final_loss;
        row.finetune_steps = fc.steps;
        row.checkpoint = ck;
        row.finetune_metrics = mfile;
        row.posttrain_metrics = s1_entry.metrics;
        outcomes.push_back({std::move(row), std::move(tr.log)});
    };

    const int h_default = cfg.pack.history.history;

    for (Strategy s : cfg.strategies)
        for (std::uint64_t seed : cfg.seeds)
            run_arm("strategy", s, seed, 1.0, h_default, false, 0.0, 1.0,
                    strategy_name(s));

    if (cfg.data_fraction > 0.0 && cfg.data_fraction < 1.0)
        for (Strategy s : {Strategy::none, Strategy::world_model})
            for (std::uint64_t seed : cfg.seeds)
                run_arm("data_fraction", s, seed, cfg.data_fraction, h_default, false, 0.0, 1.0,
                        "data_" + strategy_name(s));

    for (int h : cfg.history_sweep) {
        if (h < 0) throw InvalidArgument("history depth must be ≥ 0");
        bool shared = false;
        if (h == h_default) {
            // Identical configuration to the world_model strategy arm; reuse
            // those runs instead of retraining.
            for (const auto& o : outcomes)
                if (o.row.arm == "strategy" && o.row.strategy == Strategy::world_model) {
                    ArmOutcome copy = o;
                    copy.row.arm = "history";
                    outcomes.push_back(std::move(copy));
                    shared = true;
                }
        }
        if (!shared)
            for (std::uint64_t seed : cfg.seeds)
                run_arm("history", Strategy::world_model, seed, 1.0, h, false, 0.0, 1.0,
                        "hist" + std::to_string(h));
    }

    if (cfg.joint_arm)
        for (std::uint64_t seed : cfg.seeds)
            run_arm("joint", Strategy::world_model, seed, 1.0, h_default, true, cfg.joint_w_v,
                    cfg.joint_w_a, "joint");

    // Convergence bookkeeping: steps until the smoothed fine-tuning loss
    // first reaches the scratch arm's median final loss.
    std::vector<double> scratch_finals;
    for (const auto& o : outcomes)
        if (o.row.arm == "strategy" && o.row.strategy == Strategy::none)
            scratch_finals.push_back(o.row.final_loss);
    const double threshold = median(scratch_finals);
    if (std::isfinite(threshold)) {
        constexpr int kSmooth = 5;
        for (auto& o : outcomes) {
            if (o.row.arm == "joint") continue; // its loss mixes modalities
            for (std::size_t i = 0; i < o.log.size(); ++i) {
                double acc = 0.0;
                int cnt = 0;
                for (std::size_t j = i >= kSmooth - 1 ? i - (kSmooth - 1) : 0; j <= i; ++j) {
                    acc += o.log[j].loss;
                    ++cnt;
                }
                if (acc / cnt <= threshold) {
                    o.row.convergence_step = o.log[i].step;
                    break;
                }
            }
        }
    }

    AblationReport report;
    report.loss_threshold = threshold;
    for (const auto& o : outcomes) report.rows.push_back(o.row);

    std::ostringstream tsv;
    tsv << "arm\tstrategy\tseed\tdata_fraction\thistory\tw_v\tw_a\tsuccess\tmalformed\t"
           "mean_steps\tfinal_loss\tconvergence_step\tfinetune_steps\tcheckpoint\t"
           "finetune_metrics\tposttrain_metrics\n";
    for (const auto& row : report.rows) {
        tsv << row.arm << '\t' << strategy_name(row.strategy) << '\t' << row.seed << '\t'
            << fmt6(row.data_fraction) << '\t' << row.history << '\t' << fmt6(row.w_v) << '\t'
            << fmt6(row.w_a) << '\t' << fmt6(row.success) << '\t' << row.malformed << '\t'
            << fmt6(row.mean_steps) << '\t' << fmt6(row.final_loss) << '\t'
            << row.convergence_step << '\t' << row.finetune_steps << '\t' << row.checkpoint
            << '\t' << row.finetune_metrics << '\t'
            << (row.posttrain_metrics.empty() ? "-" : row.posttrain_metrics) << '\n';
    }
    report.table_tsv = tsv.str();

    const EvalReport expert = evaluate_expert(cfg.eval_episodes, cfg.task, cfg.eval_seed,
                                              cfg.rollout.env, cfg.rollout.max_env_steps);

    auto arm_mean = [&](const std::string& arm, Strategy s, int h, double fraction) {
        double acc = 0.0;
        int n = 0;
        for (const auto& row : report.rows)
            if (row.arm == arm && row.strategy == s && row.history == h &&
                row.data_fraction == fraction) {
                acc += row.success;
                ++n;
            }
        return n > 0 ? acc / n : std::numeric_limits<double>::quiet_NaN();
    };

    std::ostringstream sum;
    sum << "episodes=" << episodes.size() << " seeds=" << cfg.seeds.size()
        << " eval_episodes=" << cfg.eval_episodes << " task=" << cfg.task.str() << '\n';
    sum << "expert upper bound: success=" << fmt6(expert.success_rate)
        << " mean_steps=" << fmt6(expert.mean_steps) << '\n';
    sum << "mean success by stage-1 strategy (full data, history 1+" << h_default << "):\n";
    for (Strategy s : cfg.strategies)
        sum << "  " << strategy_name(s) << ": " << fmt6(arm_mean("strategy", s, h_default, 1.0))
            << '\n';
    if (cfg.data_fraction > 0.0 && cfg.data_fraction < 1.0) {
        sum << "fine-tuning on a " << fmt6(cfg.data_fraction) << " subset:\n";
        for (Strategy s : {Strategy::none, Strategy::world_model})
            sum << "  " << strategy_name(s) << ": "
                << fmt6(arm_mean("data_fraction", s, h_default, cfg.data_fraction)) << '\n';
    }
    if (std::isfinite(threshold)) {
        sum << "loss threshold (median scratch final loss): " << fmt6(threshold) << '\n';
        sum << "steps to threshold, world_model arm:";
        for (const auto& row : report.rows)
            if (row.arm == "strategy" && row.strategy == Strategy::world_model)
                sum << ' ' << row.convergence_step << '/' << row.finetune_steps;
        sum << '\n';
    }
    if (!cfg.history_sweep.empty()) {
        sum << "history sweep (world_model init), mean success:\n";
        for (int h : cfg.history_sweep)
            sum << "  1+" << h << ": " << fmt6(arm_mean("history", Strategy::world_model, h, 1.0))
                << '\n';
    }
    if (cfg.joint_arm)
        sum << "joint vision+action fine-tune (w_v=" << fmt6(cfg.joint_w_v)
            << ", w_a=" << fmt6(cfg.joint_w_a)
            << "): " << fmt6(arm_mean("joint", Strategy::world_model, h_default, 1.0)) << '\n';
    report.summary = sum.str();

    write_text_file(work_dir / "report.tsv", report.table_tsv);
    write_text_file(work_dir / "summary.txt", report.summary);
    return report;
}

} // namespace univla
