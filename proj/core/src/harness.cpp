#include "univla/harness.hpp"

#include "univla/codecs.hpp"
#include "univla/common.hpp"
#include "univla/plot.hpp"
#include "univla/rollout_eval.hpp"
#include "univla/sim_env.hpp"
#include "univla/trainer.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace univla {

namespace {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, const std::string& label) {
    return fnv1a64_str(label) ^ (seed * 0x9E3779B97F4A7C15ULL);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) throw NotFoundError("config file not found: " + p.string());
    std::istringstream is(read_text_file(p));
    std::map<std::string, std::string> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument("config file line " + std::to_string(lineno) +
                                  " is not key=value: " + t);
        out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return out;
}

/// Configuration resolution with provenance. Every key a command consumes is
/// recorded, forming the manifest's config snapshot.
class Options {
  public:
    Options(std::map<std::string, std::string> cli, std::map<std::string, std::string> file)
        : cli_(std::move(cli)), file_(std::move(file)) {}

    std::string get_str(const std::string& key, const std::string& def) {
        return resolve(key, def, false);
    }
    std::string require_str(const std::string& key) { return resolve(key, "", true); }

    int get_int(const std::string& key, int def) {
        return parse_integral<int>(key, get_str(key, std::to_string(def)));
    }
    int require_int(const std::string& key) {
        return parse_integral<int>(key, require_str(key));
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t def) {
        return parse_integral<std::uint64_t>(key, get_str(key, std::to_string(def)));
    }
    double get_double(const std::string& key, double def) {
        const std::string v = get_str(key, format_g17(def));
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw InvalidArgument("flag " + key + " expects a number, got: " + v);
        }
    }
    bool get_bool(const std::string& key, bool def) {
        const std::string v = get_str(key, def ? "1" : "0");
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        throw InvalidArgument("flag " + key + " expects a boolean, got: " + v);
    }

    const std::vector<std::string>& log_lines() const { return log_; }

    json snapshot() const {
        json j = json::object();
        for (const auto& [k, v] : resolved_) j[k] = v;
        return j;
    }

    /// CLI flags the command never consumed are usage errors.
    void reject_unconsumed_cli() const {
        for (const auto& [k, v] : cli_)
            if (!consumed_.count(k)) throw InvalidArgument("unknown flag for this command: " + k);
    }

  private:
    template <typename T> T parse_integral(const std::string& key, const std::string& v) {
        try {
            std::size_t pos = 0;
            const long long ll = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            const T t = static_cast<T>(ll);
            if (static_cast<long long>(t) != ll) throw std::out_of_range(v);
            return t;
        } catch (const std::exception&) {
            throw InvalidArgument("flag " + key + " expects an integer, got: " + v);
        }
    }

    std::string resolve(const std::string& key, const std::string& def, bool required) {
        consumed_.insert(key);
        std::string value;
        const char* source;
        if (auto it = cli_.find(key); it != cli_.end()) {
            value = it->second;
            source = "cli";
        } else if (auto fit = file_.find(key); fit != file_.end()) {
            value = fit->second;
            source = "file";
        } else if (!required) {
            value = def;
            source = "default";
        } else {
            throw InvalidArgument("missing required flag: " + key);
        }
        if (!resolved_.count(key)) {
            resolved_[key] = value;
            log_.push_back(key + "=" + value + " (" + source + ")");
        }
        return value;
    }

    std::map<std::string, std::string> cli_, file_;
    std::map<std::string, std::string> resolved_;
    std::set<std::string> consumed_;
    std::vector<std::string> log_;
};

/// Advisory lock on an output directory; removed on destruction.
class DirLock {
  public:
    explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw IoError("output directory is locked by another invocation: " + path_.string() +
                          " (remove the lock file if it is stale)");
        const std::string pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::filesystem::path path_;
    int fd_ = -1;
};

/// Tree hash of an output/input directory, skipping the manifest and lock so
/// the digest covers only the artifacts themselves.
std::uint64_t artifact_tree_hash(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) {
            const std::string rel = entry.path().lexically_relative(dir).generic_string();
            if (rel == "run.json" || rel == ".lock") continue;
            files.push_back(entry.path());
        }
    std::sort(files.begin(), files.end(), [&](const auto& a, const auto& b) {
        return a.lexically_relative(dir).generic_string() <
               b.lexically_relative(dir).generic_string();
    });
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& f : files) {
        h = fnv1a64_str(f.lexically_relative(dir).generic_string(), h);
        h = fnv1a64_str(hash_hex(hash_file(f)), h);
    }
    return h;
}

std::uint64_t input_hash(const std::filesystem::path& p) {
    return std::filesystem::is_directory(p) ? artifact_tree_hash(p) : hash_file(p);
}

using NamedInputs = std::vector<std::pair<std::string, std::filesystem::path>>;

/// Shared command skeleton: hash inputs, short-circuit or refuse on an
/// existing manifest, otherwise lock, run, and write the manifest.
void execute_run(const std::string& command, const json& config, const NamedInputs& inputs,
                 const std::filesystem::path& out_dir, std::ostream& log,
                 const std::function<void()>& body) {
    json expected;
    expected["command"] = command;
    expected["version"] = kToolkitVersion;
    expected["config"] = config;
    json jin = json::object();
    for (const auto& [name, path] : inputs) {
        if (!std::filesystem::exists(path))
            throw NotFoundError("missing input for --" + name + ": " + path.string());
        jin[name] = {{"path", path.string()}, {"hash", hash_hex(input_hash(path))}};
    }
    expected["inputs"] = jin;

    const std::filesystem::path manifest_path = out_dir / "run.json";
    if (std::filesystem::exists(manifest_path)) {
        json have;
        try {
            have = json::parse(read_text_file(manifest_path));
        } catch (const json::exception&) {
            throw CorruptStream("unreadable run manifest: " + manifest_path.string());
        }
        json have_head = have;
        have_head.erase("output_hash");
        if (have_head == expected) {
            const std::string now = hash_hex(artifact_tree_hash(out_dir));
            if (have.value("output_hash", "") == now) {
                log << "outputs in " << out_dir.string()
                    << " already match this command, config, and inputs; nothing to do\n";
                return;
            }
            throw CorruptStream("artifacts under " + out_dir.string() +
                                " no longer match their manifest; refusing to overwrite");
        }
        throw CorruptStream("existing manifest in " + out_dir.string() +
                            " records a different command, config, or inputs; use a fresh "
                            "output directory");
    }

    std::filesystem::create_directories(out_dir);
    DirLock lock(out_dir);
    body();
    expected["output_hash"] = hash_hex(artifact_tree_hash(out_dir));
    write_text_file(manifest_path, expected.dump(2) + "\n");
    log << "manifest written: " << manifest_path.string() << "\n";
}

std::filesystem::path resolve_path(const std::filesystem::path& run_dir, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : run_dir / path;
}

void log_config(std::ostream& log, const Options& opts) {
    log << "resolved configuration:\n";
    for (const auto& line : opts.log_lines()) log << "  " << line << "\n";
}

ModelConfig model_from_options(Options& o, int vocab_size) {
    ModelConfig mc;
    mc.vocab_size = vocab_size;
    mc.d_model = o.get_int("d_model", mc.d_model);
    mc.n_layers = o.get_int("n_layers", mc.n_layers);
    mc.n_heads = o.get_int("n_heads", mc.n_heads);
    mc.d_ff = o.get_int("d_ff", mc.d_ff);
    mc.max_seq_len = o.get_int("max_seq_len", mc.max_seq_len);
    mc.validate();
    return mc;
}

TrainConfig::Schedule schedule_from(const std::string& s) {
    if (s == "cosine") return TrainConfig::Schedule::cosine;
    if (s == "constant") return TrainConfig::Schedule::constant;
    throw InvalidArgument("unknown schedule: " + s);
}

DecodeMode decode_from(const std::string& s) {
    if (s == "greedy") return DecodeMode::greedy;
    if (s == "top_k") return DecodeMode::top_k;
    throw InvalidArgument("unknown decode mode: " + s);
}

// ---------------------------------------------------------------- commands

void cmd_make_data(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const int n = o.require_int("n");
    const std::string task_str = o.get_str("task", "pick_place");
    const std::uint64_t seed = o.get_u64("seed", 0);
    ThinningConfig thin;
    thin.threshold = o.get_double("thin_threshold", thin.threshold);
    thin.min_frames = o.get_int("min_frames", thin.min_frames);
    thin.settle_steps = o.get_int("settle_steps", thin.settle_steps);
    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    const TaskSpec task = TaskSpec::parse(task_str);

    execute_run("make_data", o.snapshot(), {}, out, log, [&] {
        const std::vector<Episode> episodes = generate_dataset(n, task, seed, EnvConfig{}, thin);
        std::ostringstream meta;
        meta << "n=" << n << "\ntask=" << task.str() << "\nseed=" << seed
             << "\nthin_threshold=" << format_g17(thin.threshold)
             << "\nmin_frames=" << thin.min_frames << "\nsettle_steps=" << thin.settle_steps
             << "\nversion=" << kToolkitVersion << "\n";
        save_dataset(out, episodes, meta.str());
        double frames = 0.0;
        for (const auto& ep : episodes) frames += static_cast<double>(ep.frames.size());
        log << "wrote " << episodes.size() << " episodes, mean kept frames "
            << frames / episodes.size() << "\n";
    });
}

void cmd_fit_codecs(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const std::filesystem::path dataset = resolve_path(run_dir, o.require_str("dataset"));
    FitCodecsConfig fc;
    fc.codebook_size = o.get_int("codebook_size", fc.codebook_size);
    fc.gamma = o.get_double("gamma", fc.gamma);
    fc.bpe_target = o.get_int("bpe_target", fc.bpe_target);
    fc.chunk_h = o.get_int("chunk_h", fc.chunk_h);
    fc.seed = o.get_u64("seed", fc.seed);
    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    execute_run("fit_codecs", o.snapshot(), {{"dataset", dataset}}, out, log, [&] {
        const std::vector<Episode> episodes = load_dataset(dataset);
        const Codecs codecs = fit_codecs(episodes, fc);
        save_codecs(out, codecs);
        log << "vocabulary: " << codecs.vocab.total_size() << " ids ("
            << codecs.vocab.text_range().size() << " text, " << codecs.vocab.vision_range().size()
            << " vision, " << codecs.vocab.action_range().size() << " action; "
            << codecs.bpe.merges.size() << " merges)\n";
    });
}

struct PackFlags {
    int wm_frames, wm_hop, t2i_hop, max_len;
};

PackFlags pack_from_options(Options& o) {
    PackFlags p;
    p.wm_frames = o.get_int("wm_frames", 6);
    p.wm_hop = o.get_int("wm_hop", 3);
    p.t2i_hop = o.get_int("t2i_hop", 4);
    p.max_len = o.get_int("max_len", kDefaultMaxLen);
    return p;
}

void cmd_posttrain(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const std::filesystem::path dataset = resolve_path(run_dir, o.require_str("dataset"));
    const std::filesystem::path codecs_dir = resolve_path(run_dir, o.require_str("codecs"));
    const Strategy strategy = parse_strategy(o.require_str("strategy"));
    TrainConfig tc;
    tc.stage = Stage::posttrain;
    tc.strategy = strategy;
    tc.steps = o.get_int("steps", 1000);
    tc.batch_size = o.get_int("batch_size", 16);
    tc.lr0 = o.get_double("lr0", 3e-4);
    tc.schedule = schedule_from(o.get_str("schedule", "cosine"));
    const std::uint64_t seed = o.get_u64("seed", 0);
    const PackFlags pf = pack_from_options(o);
    const int d_model = o.get_int("d_model", 128);
    const int n_layers = o.get_int("n_layers", 4);
    const int n_heads = o.get_int("n_heads", 4);
    const int d_ff = o.get_int("d_ff", 512);
    const int max_seq = o.get_int("max_seq_len", kDefaultMaxLen);
    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    execute_run("posttrain", o.snapshot(), {{"dataset", dataset}, {"codecs", codecs_dir}}, out,
                log, [&] {
                    const std::vector<Episode> episodes = load_dataset(dataset);
                    const Codecs codecs = load_codecs(codecs_dir);
                    PackOptions po;
                    po.strategy = strategy;
                    po.wm_frames = pf.wm_frames;
                    po.wm_hop = pf.wm_hop;
                    po.t2i_hop = pf.t2i_hop;
                    po.max_len = pf.max_len;
                    const std::vector<TokenSequence> data = pack_corpus(episodes, codecs, po);

                    ModelConfig mc;
                    mc.vocab_size = codecs.vocab.total_size();
                    mc.d_model = d_model;
                    mc.n_layers = n_layers;
                    mc.n_heads = n_heads;
                    mc.d_ff = d_ff;
                    mc.max_seq_len = max_seq;
                    mc.validate();

                    ModelParams params = init_model<float>(mc, derive_seed(seed, "init"));
                    TrainConfig run_cfg = tc;
                    run_cfg.seed = derive_seed(seed, "train");
                    std::ofstream metrics(out / "metrics.txt");
                    if (!metrics) throw IoError("cannot write metrics under " + out.string());
                    const TrainResult tr = run_stage(params, data, run_cfg, codecs.vocab, &metrics);
                    save_checkpoint_file(out / "model.ckpt", params);
                    log << "trained " << tc.steps << " steps on " << data.size()
                        << " sequences; final loss " << format_g17(tr.final_loss) << "\n";
                });
}

void cmd_finetune(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const std::filesystem::path dataset = resolve_path(run_dir, o.require_str("dataset"));
    const std::filesystem::path codecs_dir = resolve_path(run_dir, o.require_str("codecs"));
    const std::string init = o.get_str("init", "");
    TrainConfig tc;
    tc.stage = Stage::finetune;
    tc.strategy = Strategy::policy;
    tc.steps = o.get_int("steps", 400);
    tc.batch_size = o.get_int("batch_size", 16);
    tc.lr0 = o.get_double("lr0", 3e-4);
    tc.schedule = schedule_from(o.get_str("schedule", "cosine"));
    tc.w_v = o.get_double("w_v", 0.0);
    tc.w_a = o.get_double("w_a", 1.0);
    const std::uint64_t seed = o.get_u64("seed", 0);
    const double fraction = o.get_double("data_fraction", 1.0);
    const std::uint64_t subset_seed = o.get_u64("data_subset_seed", 424242);
    PackOptions po;
    po.strategy = Strategy::policy;
    po.history.history = o.get_int("history", 1);
    po.history.stride = o.get_int("stride", 10);
    po.mask_history_actions = o.get_bool("mask_history_actions", false);
    po.supervise_vision = o.get_bool("supervise_vision", false);
    po.max_len = o.get_int("max_len", kDefaultMaxLen);
    const int d_model = o.get_int("d_model", 128);
    const int n_layers = o.get_int("n_layers", 4);
    const int n_heads = o.get_int("n_heads", 4);
    const int d_ff = o.get_int("d_ff", 512);
    const int max_seq = o.get_int("max_seq_len", kDefaultMaxLen);
    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    NamedInputs inputs = {{"dataset", dataset}, {"codecs", codecs_dir}};
    const std::filesystem::path init_path = init.empty() ? std::filesystem::path{}
                                                         : resolve_path(run_dir, init);
    if (!init.empty()) inputs.push_back({"init", init_path});

    execute_run("finetune", o.snapshot(), inputs, out, log, [&] {
        std::vector<Episode> episodes = load_dataset(dataset);
        if (fraction < 1.0) episodes = data_fraction_subset(episodes, fraction, subset_seed);
        const Codecs codecs = load_codecs(codecs_dir);
        const std::vector<TokenSequence> data = pack_corpus(episodes, codecs, po);

        ModelParams params = [&] {
            if (!init.empty()) {
                ModelParams p = load_checkpoint_file(init_path);
                if (p.config.vocab_size != codecs.vocab.total_size())
                    throw InvalidArgument("checkpoint vocabulary size does not match the codecs");
                return p;
            }
            ModelConfig mc;
            mc.vocab_size = codecs.vocab.total_size();
            mc.d_model = d_model;
            mc.n_layers = n_layers;
            mc.n_heads = n_heads;
            mc.d_ff = d_ff;
            mc.max_seq_len = max_seq;
            mc.validate();
            return init_model<float>(mc, derive_seed(seed, "init"));
        }();

        TrainConfig run_cfg = tc;
        run_cfg.seed = derive_seed(seed, "train");
        std::ofstream metrics(out / "metrics.txt");
        if (!metrics) throw IoError("cannot write metrics under " + out.string());
        const TrainResult tr = run_stage(params, data, run_cfg, codecs.vocab, &metrics);
        save_checkpoint_file(out / "model.ckpt", params);
        log << "fine-tuned on " << episodes.size() << " episodes (" << data.size()
            << " sequences); final loss " << format_g17(tr.final_loss) << "\n";
    });
}

void cmd_eval(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const std::filesystem::path checkpoint = resolve_path(run_dir, o.require_str("checkpoint"));
    const std::filesystem::path codecs_dir = resolve_path(run_dir, o.require_str("codecs"));
    const int n = o.get_int("n", 100);
    const TaskSpec task = TaskSpec::parse(o.get_str("task", "pick_place"));
    const std::uint64_t seed = o.get_u64("seed", 777000);
    RolloutConfig rc;
    rc.history.history = o.get_int("history", 1);
    rc.history.stride = o.get_int("stride", 10);
    rc.max_env_steps = o.get_int("max_env_steps", 100);
    rc.gen.mode = decode_from(o.get_str("decode", "greedy"));
    rc.gen.top_k = o.get_int("top_k", 8);
    rc.gen.seed = o.get_u64("gen_seed", 0);
    rc.token_budget = o.get_int("token_budget", 0);
    rc.max_prompt_len = o.get_int("max_len", kDefaultMaxLen);
    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    execute_run("eval", o.snapshot(), {{"checkpoint", checkpoint}, {"codecs", codecs_dir}}, out,
                log, [&] {
                    const ModelParams params = load_checkpoint_file(checkpoint);
                    const Codecs codecs = load_codecs(codecs_dir);
                    const EvalReport rep = evaluate(params, n, task, seed, codecs, rc);
                    write_text_file(out / "report.tsv", rep.tsv());
                    std::map<std::string, int> reasons;
                    for (const RolloutResult& e : rep.episodes)
                        if (e.malformed) ++reasons[malformation_name(e.why)];
                    std::ostringstream why;
                    for (const auto& [name, count] : reasons)
                        why << ' ' << name << '=' << count;
                    std::ostringstream sum;
                    sum << "n=" << n << " task=" << task.str() << " seed=" << seed << "\n"
                        << "success_rate=" << format_g17(rep.success_rate)
                        << "\nmean_steps=" << format_g17(rep.mean_steps)
                        << "\nmalformed=" << rep.malformed << why.str() << "\n";
                    write_text_file(out / "summary.txt", sum.str());
                    log << "success_rate=" << format_g17(rep.success_rate) << " malformed="
                        << rep.malformed << why.str() << "\n";
                });
}

void cmd_ablate(Options& o, const std::filesystem::path& run_dir, std::ostream& log) {
    const std::filesystem::path dataset = resolve_path(run_dir, o.require_str("dataset"));
    const std::filesystem::path codecs_dir = resolve_path(run_dir, o.require_str("codecs"));

    AblationConfig ac;
    ac.strategies.clear();
    for (const std::string& s : split_list(o.get_str("arms", "none,action_pred,t2i,video,world_model")))
        ac.strategies.push_back(parse_strategy(s));
    ac.seeds.clear();
    for (const std::string& s : split_list(o.get_str("seeds", "1,2,3"))) {
        try {
            ac.seeds.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw InvalidArgument("bad seed: " + s);
        }
    }
    ac.task = TaskSpec::parse(o.get_str("task", "pick_place"));
    ac.eval_episodes = o.get_int("eval_episodes", 100);
    ac.eval_seed = o.get_u64("eval_seed", 777000);
    ac.data_fraction = o.get_double("data_fraction", 0.1);
    ac.data_subset_seed = o.get_u64("data_subset_seed", 424242);
    ac.history_sweep.clear();
    for (const std::string& s : split_list(o.get_str("history_sweep", "0,1,2"))) {
        try {
            ac.history_sweep.push_back(std::stoi(s));
        } catch (const std::exception&) {
            throw InvalidArgument("bad history depth: " + s);
        }
    }
    ac.joint_arm = o.get_bool("joint", true);
    ac.joint_w_v = o.get_double("joint_w_v", 0.5);
    ac.joint_w_a = o.get_double("joint_w_a", 1.0);

    ac.model.d_model = o.get_int("d_model", 96);
    ac.model.n_layers = o.get_int("n_layers", 3);
    ac.model.n_heads = o.get_int("n_heads", 4);
    ac.model.d_ff = o.get_int("d_ff", 384);
    ac.model.max_seq_len = o.get_int("max_seq_len", kDefaultMaxLen);

    const TrainConfig::Schedule sched = schedule_from(o.get_str("schedule", "cosine"));
    ac.posttrain.stage = Stage::posttrain;
    ac.posttrain.steps = o.get_int("post_steps", 1000);
    ac.posttrain.batch_size = o.get_int("batch_size", 16);
    ac.posttrain.lr0 = o.get_double("post_lr0", 3e-4);
    ac.posttrain.schedule = sched;
    ac.finetune.stage = Stage::finetune;
    ac.finetune.strategy = Strategy::policy;
    ac.finetune.steps = o.get_int("fine_steps", 400);
    ac.finetune.batch_size = ac.posttrain.batch_size;
    ac.finetune.lr0 = o.get_double("fine_lr0", 3e-4);
    ac.finetune.schedule = sched;

    const PackFlags pf = pack_from_options(o);
    ac.pack.history.history = o.get_int("history", 1);
    ac.pack.history.stride = o.get_int("stride", 10);
    ac.pack.wm_frames = pf.wm_frames;
    ac.pack.wm_hop = pf.wm_hop;
    ac.pack.t2i_hop = pf.t2i_hop;
    ac.pack.max_len = pf.max_len;

    ac.rollout.max_env_steps = o.get_int("max_env_steps", 100);
    ac.rollout.gen.mode = decode_from(o.get_str("decode", "greedy"));
    ac.rollout.gen.top_k = o.get_int("top_k", 8);
    ac.rollout.token_budget = o.get_int("token_budget", 0);
    ac.rollout.max_prompt_len = pf.max_len;

    const std::filesystem::path out = resolve_path(run_dir, o.require_str("out"));
    o.reject_unconsumed_cli();
    log_config(log, o);

    execute_run("ablate", o.snapshot(), {{"dataset", dataset}, {"codecs", codecs_dir}}, out, log,
                [&] {
                    const std::vector<Episode> episodes = load_dataset(dataset);
                    const Codecs codecs = load_codecs(codecs_dir);
                    const AblationReport report = ablation_suite(episodes, codecs, ac, out);

                    // success vs strategy
                    std::vector<std::pair<std::string, double>> bars;
                    for (Strategy s : ac.strategies) {
                        double acc = 0.0;
                        int cnt = 0;
                        for (const auto& row : report.rows)
                            if (row.arm == "strategy" && row.strategy == s) {
                                acc += row.success;
                                ++cnt;
                            }
                        if (cnt > 0) bars.emplace_back(strategy_name(s), acc / cnt);
                    }
                    if (!bars.empty())
                        bar_plot(out / "success_by_strategy.ppm", bars,
                                 "mean success by stage-1 strategy", "success");

                    // fine-tuning loss vs step, first seed of each strategy arm
                    std::vector<Series> series;
                    for (const auto& row : report.rows) {
                        if (row.arm != "strategy" || row.seed != ac.seeds.front()) continue;
                        std::ifstream is(out / row.finetune_metrics);
                        if (!is) continue;
                        Series s;
                        s.name = strategy_name(row.strategy);
                        for (const StepMetrics& m : parse_metrics_log(is))
                            s.points.emplace_back(static_cast<double>(m.step), m.loss);
                        if (!s.points.empty()) series.push_back(std::move(s));
                    }
                    if (!series.empty())
                        line_plot(out / "loss_by_step.ppm", series, "fine-tuning loss", "step",
                                  "loss");

                    log << report.summary;
                });
}

} // namespace

std::filesystem::path default_run_dir() {
    if (const char* env = std::getenv("UNIVLA_RUN_DIR"); env != nullptr && *env != '\0')
        return std::filesystem::path(env);
    return std::filesystem::path("runs");
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"make_data", "fit_codecs", "posttrain",
                                                   "finetune",  "eval",       "ablate"};
    return names;
}

int run_command(const Invocation& inv, std::ostream& log, std::ostream& err) {
    try {
        std::map<std::string, std::string> file_cfg;
        if (!inv.config_file.empty()) file_cfg = parse_config_file(inv.config_file);
        Options opts(inv.cli, file_cfg);
        const std::filesystem::path run_dir =
            inv.run_dir.empty() ? default_run_dir() : inv.run_dir;

        if (inv.command == "make_data")
            cmd_make_data(opts, run_dir, log);
        else if (inv.command == "fit_codecs")
            cmd_fit_codecs(opts, run_dir, log);
        else if (inv.command == "posttrain")
            cmd_posttrain(opts, run_dir, log);
        else if (inv.command == "finetune")
            cmd_finetune(opts, run_dir, log);
        else if (inv.command == "eval")
            cmd_eval(opts, run_dir, log);
        else if (inv.command == "ablate")
            cmd_ablate(opts, run_dir, log);
        else
            throw InvalidArgument("unknown command: " + inv.command);
        return kExitOk;
    } catch (const InvalidArgument& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const BudgetExceeded& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NotFoundError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const CorruptStream& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IoError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const TrainingDiverged& e) {
        err << "training diverged: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

} // namespace univla
