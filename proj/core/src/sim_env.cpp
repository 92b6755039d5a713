#include "univla/sim_env.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace univla {

namespace {

constexpr int kNumColors = 4;

struct Rgb {
    std::uint8_t r, g, b;
};

constexpr Rgb kBlockPalette[kNumColors] = {
    {230, 60, 60}, {60, 200, 90}, {70, 110, 235}, {235, 205, 60}};
constexpr Rgb kPadPalette[kNumColors] = {
    {88, 24, 24}, {24, 76, 36}, {28, 44, 90}, {90, 78, 24}};
constexpr Rgb kBackground = {24, 24, 24};
constexpr Rgb kAgentColor = {250, 250, 250};

constexpr double kExpertGain = 0.5;
constexpr double kExpertReach = 0.02;

void fill_square(Image& img, double cx, double cy, int edge, Rgb c) {
    const int size = img.width;
    const int px = static_cast<int>(std::lround(cx * (size - 1)));
    const int py = static_cast<int>(std::lround(cy * (size - 1)));
    const int half = edge / 2 - (edge % 2 == 0 ? 1 : 0);
    const int x0 = std::clamp(px - half, 0, size - edge);
    const int y0 = std::clamp(py - half, 0, size - edge);
    const float rgb[3] = {channel_from_byte(c.r), channel_from_byte(c.g),
                          channel_from_byte(c.b)};
    for (int y = y0; y < y0 + edge; ++y)
        for (int x = x0; x < x0 + edge; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
}

const EnvBlock& block_of_color(const EnvState& state, int color) {
    for (const auto& b : state.blocks)
        if (b.color == color) return b;
    throw InvalidArgument("no block with the requested color");
}

EnvBlock& block_of_color(EnvState& state, int color) {
    return const_cast<EnvBlock&>(block_of_color(static_cast<const EnvState&>(state), color));
}

const GoalPad& pad_of_color(const EnvState& state, int color) {
    for (const auto& p : state.pads)
        if (p.color == color) return p;
    throw InvalidArgument("no pad with the requested color");
}

double entity_gap(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a - b).norm();
}

Eigen::Vector2d sample_position(Rng& rng, const std::vector<Eigen::Vector2d>& placed,
                                const EnvConfig& cfg) {
    for (int tries = 0; tries < 1000; ++tries) {
        Eigen::Vector2d p(rng.uniform(cfg.margin, 1.0 - cfg.margin),
                          rng.uniform(cfg.margin, 1.0 - cfg.margin));
        bool ok = true;
        for (const auto& q : placed)
            if (entity_gap(p, q) < cfg.min_separation) {
                ok = false;
                break;
            }
        if (ok) return p;
    }
    throw IoError("could not place scene entities with the required separation");
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

EnvAction quantize_action(const EnvAction& a) {
    return {to_f32(a.dx), to_f32(a.dy), to_f32(a.grip)};
}

} // namespace

const char* color_name(int color) {
    static const char* kNames[kNumColors] = {"red", "green", "blue", "yellow"};
    if (color < 0 || color >= kNumColors) throw InvalidArgument("color index out of range");
    return kNames[color];
}

std::string TaskSpec::str() const {
    return kind == TaskKind::pick_place ? "pick_place" : "long_horizon";
}

TaskSpec TaskSpec::parse(const std::string& s) {
    if (s == "pick_place") return {TaskKind::pick_place};
    if (s == "long_horizon") return {TaskKind::long_horizon};
    throw InvalidArgument("unknown task: " + s);
}

std::pair<EnvState, std::string> reset(const TaskSpec& task, std::uint64_t seed,
                                       const EnvConfig& cfg) {
    Rng rng(seed);
    EnvState state;
    state.task = task;
    state.seed = seed;

    const int n_blocks = 2 + static_cast<int>(rng.randint(2));
    const int n_pads = task.kind == TaskKind::pick_place ? 1 : 2;

    std::vector<int> block_colors = {0, 1, 2, 3};
    rng.shuffle(block_colors);
    block_colors.resize(n_blocks);
    std::vector<int> pad_colors = {0, 1, 2, 3};
    rng.shuffle(pad_colors);
    pad_colors.resize(n_pads);

    std::vector<Eigen::Vector2d> placed;
    state.agent = sample_position(rng, placed, cfg);
    placed.push_back(state.agent);
    for (int i = 0; i < n_blocks; ++i) {
        EnvBlock b;
        b.pos = sample_position(rng, placed, cfg);
        b.color = block_colors[i];
        placed.push_back(b.pos);
        state.blocks.push_back(b);
    }
    for (int i = 0; i < n_pads; ++i) {
        GoalPad p;
        p.pos = sample_position(rng, placed, cfg);
        p.color = pad_colors[i];
        placed.push_back(p.pos);
        state.pads.push_back(p);
    }

    state.subgoals.push_back({block_colors[0], pad_colors[0], false});
    if (task.kind == TaskKind::long_horizon)
        state.subgoals.push_back({block_colors[1], pad_colors[1], false});

    std::string instruction = std::string("move the ") + color_name(state.subgoals[0].block_color) +
                              " block to the " + color_name(state.subgoals[0].pad_color) + " pad";
    if (state.subgoals.size() > 1)
        instruction += std::string(" then move the ") + color_name(state.subgoals[1].block_color) +
                       " block to the " + color_name(state.subgoals[1].pad_color) + " pad";
    return {std::move(state), std::move(instruction)};
}

StepResult step(EnvState& state, const EnvAction& action, const EnvConfig& cfg) {
    if (!std::isfinite(action.dx) || !std::isfinite(action.dy) || !std::isfinite(action.grip))
        throw InvalidArgument("action components must be finite");

    const double dx = std::clamp(action.dx, -cfg.move_limit, cfg.move_limit);
    const double dy = std::clamp(action.dy, -cfg.move_limit, cfg.move_limit);
    const double grip = std::clamp(action.grip, -1.0, 1.0);

    state.agent.x() = std::clamp(state.agent.x() + dx, 0.0, 1.0);
    state.agent.y() = std::clamp(state.agent.y() + dy, 0.0, 1.0);

    int held = -1;
    for (std::size_t i = 0; i < state.blocks.size(); ++i)
        if (state.blocks[i].held) held = static_cast<int>(i);
    if (held >= 0) state.blocks[held].pos = state.agent;

    if (grip > 0.0 && held < 0) {
        int best = -1;
        double best_d = cfg.pick_radius;
        for (std::size_t i = 0; i < state.blocks.size(); ++i) {
            const double d = entity_gap(state.blocks[i].pos, state.agent);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            state.blocks[best].held = true;
            state.blocks[best].pos = state.agent;
        }
    } else if (grip < 0.0 && held >= 0) {
        state.blocks[held].held = false;
    }

    for (auto& sg : state.subgoals) {
        if (sg.done) continue;
        const EnvBlock& b = block_of_color(state, sg.block_color);
        const GoalPad& p = pad_of_color(state, sg.pad_color);
        if (!b.held && entity_gap(b.pos, p.pos) <= cfg.success_radius)
            sg.done = true;
        else
            break;
    }

    StepResult res;
    res.success = std::all_of(state.subgoals.begin(), state.subgoals.end(),
                              [](const Subgoal& sg) { return sg.done; });
    ++state.step_count;
    res.done = res.success || state.step_count >= cfg.max_steps;
    res.reward = res.success ? 1.0 : 0.0;
    return res;
}

Image render(const EnvState& state, const EnvConfig& cfg) {
    Image img(cfg.image_size, cfg.image_size);
    const float bg[3] = {channel_from_byte(kBackground.r), channel_from_byte(kBackground.g),
                         channel_from_byte(kBackground.b)};
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = bg[ch];

    for (const auto& p : state.pads) fill_square(img, p.pos.x(), p.pos.y(), 6, kPadPalette[p.color]);
    for (const auto& b : state.blocks)
        if (!b.held) fill_square(img, b.pos.x(), b.pos.y(), 4, kBlockPalette[b.color]);
    for (const auto& b : state.blocks)
        if (b.held) fill_square(img, state.agent.x(), state.agent.y(), 4, kBlockPalette[b.color]);
    fill_square(img, state.agent.x(), state.agent.y(), 2, kAgentColor);
    return img;
}

EnvAction scripted_expert(const EnvState& state, const EnvConfig& cfg) {
    const Subgoal* current = nullptr;
    for (const auto& sg : state.subgoals)
        if (!sg.done) {
            current = &sg;
            break;
        }
    if (current == nullptr) return {0.0, 0.0, 0.0};

    const EnvBlock* held = nullptr;
    for (const auto& b : state.blocks)
        if (b.held) held = &b;

    const EnvBlock& target = block_of_color(state, current->block_color);
    const GoalPad& pad = pad_of_color(state, current->pad_color);

    auto move_toward = [&](const Eigen::Vector2d& goal, double grip) {
        EnvAction a;
        a.dx = std::clamp(kExpertGain * (goal.x() - state.agent.x()), -cfg.move_limit,
                          cfg.move_limit);
        a.dy = std::clamp(kExpertGain * (goal.y() - state.agent.y()), -cfg.move_limit,
                          cfg.move_limit);
        a.grip = grip;
        return a;
    };

    if (held != nullptr) {
        if (held->color != target.color) return {0.0, 0.0, -1.0};
        if (entity_gap(pad.pos, state.agent) <= kExpertReach) return {0.0, 0.0, -1.0};
        return move_toward(pad.pos, 1.0);
    }
    if (entity_gap(target.pos, state.agent) <= kExpertReach) return {0.0, 0.0, 1.0};
    return move_toward(target.pos, -1.0);
}

std::vector<int> thin_keyframes(const std::vector<EnvAction>& actions, double threshold) {
    const int m = static_cast<int>(actions.size());
    if (m == 0) throw InvalidArgument("thinning needs at least one action");
    std::vector<int> kept;
    kept.push_back(0);
    for (int t = 1; t < m; ++t) {
        const EnvAction& a = actions[t - 1];
        const double prev_grip = t >= 2 ? actions[t - 2].grip : -1.0;
        const double delta =
            std::max({std::abs(a.dx), std::abs(a.dy), std::abs(a.grip - prev_grip)});
        if (delta >= threshold) kept.push_back(t);
    }
    kept.push_back(m);
    return kept;
}

namespace {

struct RawRollout {
    EnvState terminal;
    std::vector<EnvAction> actions;
    bool success = false;
};

RawRollout roll_expert(const TaskSpec& task, std::uint64_t seed, const EnvConfig& env_cfg,
                       int settle_steps) {
    auto [state, instruction] = reset(task, seed, env_cfg);
    RawRollout out;
    double prev_grip = -1.0;
    StepResult res;
    bool done = false;
    while (!done) {
        const EnvAction a = quantize_action(scripted_expert(state, env_cfg));
        res = step(state, a, env_cfg);
        out.actions.push_back(a);
        done = res.done;
        const bool flipped = a.grip * prev_grip < 0.0;
        if (a.grip != 0.0) prev_grip = a.grip;
        if (flipped) {
            for (int i = 0; i < settle_steps && !done; ++i) {
                const EnvAction settle{0.0, 0.0, a.grip};
                res = step(state, settle, env_cfg);
                out.actions.push_back(settle);
                done = res.done;
            }
        }
    }
    out.success = res.success;
    out.terminal = std::move(state);
    return out;
}

std::vector<EnvAction> lead_in_settles(int settle_steps) {
    return std::vector<EnvAction>(static_cast<std::size_t>(settle_steps),
                                  EnvAction{0.0, 0.0, -1.0});
}

} // namespace

std::vector<Episode> generate_dataset(int n, const TaskSpec& task, std::uint64_t seed,
                                      const EnvConfig& env_cfg, const ThinningConfig& thin_cfg) {
    if (n <= 0) throw InvalidArgument("dataset size must be positive");
    std::vector<Episode> out;
    std::uint64_t next_seed = seed;
    int attempts = 0;
    const int max_attempts = 64 * n + 256;
    while (static_cast<int>(out.size()) < n) {
        if (++attempts > max_attempts)
            throw IoError("dataset generation exhausted its seed budget");
        const std::uint64_t ep_seed = next_seed++;

        const std::string instruction = reset(task, ep_seed, env_cfg).second;
        std::vector<EnvAction> raw = lead_in_settles(thin_cfg.settle_steps);
        RawRollout expert = roll_expert(task, ep_seed, env_cfg, thin_cfg.settle_steps);
        if (!expert.success) continue;

        // Splice the lead-in ahead of the expert actions. Settles are no-ops
        // on a freshly reset scene, so the expert rollout is unaffected.
        raw.insert(raw.end(), expert.actions.begin(), expert.actions.end());

        const std::vector<int> kept = thin_keyframes(raw, thin_cfg.threshold);
        if (static_cast<int>(kept.size()) < thin_cfg.min_frames) continue;

        Episode ep;
        ep.instruction = instruction;
        ep.seed = ep_seed;
        ep.task = task;
        ep.success = true;
        ep.timesteps = kept;
        for (std::size_t j = 0; j + 1 < kept.size(); ++j) {
            EnvAction merged{0.0, 0.0, raw[kept[j + 1] - 1].grip};
            for (int t = kept[j]; t < kept[j + 1]; ++t) {
                merged.dx += raw[t].dx;
                merged.dy += raw[t].dy;
            }
            ep.actions.push_back(quantize_action(merged));
        }
        ep.frames = replay_frames(ep, env_cfg);
        out.push_back(std::move(ep));
    }
    return out;
}

std::vector<Image> replay_frames(const Episode& episode, const EnvConfig& cfg) {
    auto [state, instruction] = reset(episode.task, episode.seed, cfg);
    std::vector<Image> frames;
    frames.push_back(render(state, cfg));
    for (const auto& a : episode.actions) {
        step(state, a, cfg);
        frames.push_back(render(state, cfg));
    }
    return frames;
}

namespace {

std::string episode_filename(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ep%05zu.bin", index);
    return buf;
}

constexpr char kEpisodeMagic[] = "UVEP";
constexpr std::uint32_t kEpisodeVersion = 1;

void save_episode(const std::filesystem::path& path, const Episode& ep) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write_magic(os, kEpisodeMagic);
    write_u32(os, kEpisodeVersion);
    write_u64(os, ep.seed);
    write_u32(os, ep.task.kind == TaskKind::pick_place ? 0u : 1u);
    write_u32(os, ep.success ? 1u : 0u);
    if (ep.frames.empty() || ep.frames.size() != ep.actions.size() + 1 ||
        ep.timesteps.size() != ep.frames.size())
        throw InvalidArgument("episode frame/action counts are inconsistent");
    write_u32(os, static_cast<std::uint32_t>(ep.frames[0].height));
    write_u32(os, static_cast<std::uint32_t>(ep.frames[0].width));
    write_u32(os, static_cast<std::uint32_t>(ep.frames.size()));
    write_u32(os, static_cast<std::uint32_t>(ep.actions.size()));
    write_u32(os, static_cast<std::uint32_t>(ep.instruction.size()));
    write_bytes(os, reinterpret_cast<const std::uint8_t*>(ep.instruction.data()),
                ep.instruction.size());
    for (int t : ep.timesteps) write_i32(os, t);
    for (const auto& frame : ep.frames) {
        const std::vector<std::uint8_t> bytes = image_to_bytes(frame);
        write_bytes(os, bytes.data(), bytes.size());
    }
    for (const auto& a : ep.actions) {
        write_f32(os, static_cast<float>(a.dx));
        write_f32(os, static_cast<float>(a.dy));
        write_f32(os, static_cast<float>(a.grip));
    }
    if (!os) throw IoError("short write: " + path.string());
}

Episode load_episode(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw NotFoundError("missing episode file: " + path.string());
    expect_magic(is, kEpisodeMagic, "episode file");
    if (read_u32(is) != kEpisodeVersion) throw CorruptStream("unsupported episode version");
    Episode ep;
    ep.seed = read_u64(is);
    const std::uint32_t kind = read_u32(is);
    if (kind > 1) throw CorruptStream("bad task kind in episode file");
    ep.task.kind = kind == 0 ? TaskKind::pick_place : TaskKind::long_horizon;
    ep.success = read_u32(is) != 0;
    const std::uint32_t h = read_u32(is);
    const std::uint32_t w = read_u32(is);
    const std::uint32_t n_frames = read_u32(is);
    const std::uint32_t n_actions = read_u32(is);
    if (n_frames != n_actions + 1) throw CorruptStream("episode frame/action count mismatch");
    const std::uint32_t instr_len = read_u32(is);
    std::vector<std::uint8_t> instr(instr_len);
    read_bytes(is, instr.data(), instr.size());
    ep.instruction.assign(instr.begin(), instr.end());
    ep.timesteps.resize(n_frames);
    for (auto& t : ep.timesteps) t = read_i32(is);
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(h) * w * 3);
    for (std::uint32_t i = 0; i < n_frames; ++i) {
        read_bytes(is, pixels.data(), pixels.size());
        ep.frames.push_back(
            image_from_bytes(static_cast<int>(h), static_cast<int>(w), pixels.data()));
    }
    for (std::uint32_t i = 0; i < n_actions; ++i) {
        EnvAction a;
        a.dx = read_f32(is);
        a.dy = read_f32(is);
        a.grip = read_f32(is);
        ep.actions.push_back(a);
    }
    return ep;
}

} // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<Episode>& episodes,
                  const std::string& meta) {
    std::filesystem::create_directories(dir);
    std::ostringstream manifest;
    manifest << "id\tseed\ttask\tsuccess\tframes\tinstruction\n";
    for (std::size_t i = 0; i < episodes.size(); ++i) {
        const Episode& ep = episodes[i];
        save_episode(dir / episode_filename(i), ep);
        manifest << i << '\t' << ep.seed << '\t' << ep.task.str() << '\t' << (ep.success ? 1 : 0)
                 << '\t' << ep.frames.size() << '\t' << ep.instruction << '\n';
    }
    write_text_file(dir / "manifest.tsv", manifest.str());
    write_text_file(dir / "meta.txt", "univla.dataset.v1\n" + meta);
}

std::vector<Episode> load_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path manifest_path = dir / "manifest.tsv";
    if (!std::filesystem::exists(manifest_path))
        throw NotFoundError("missing dataset manifest: " + manifest_path.string());
    std::istringstream is(read_text_file(manifest_path));
    std::string line;
    if (!std::getline(is, line) || line.rfind("id\t", 0) != 0)
        throw CorruptStream("bad dataset manifest header");
    std::vector<Episode> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        out.push_back(load_episode(dir / episode_filename(out.size())));
    }
    return out;
}

} // namespace univla
