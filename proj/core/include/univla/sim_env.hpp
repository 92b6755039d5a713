#pragma once

#include "univla/image.hpp"

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace univla {

struct EnvConfig {
    int image_size = 32;
    double move_limit = 0.1;     // per-axis displacement bound
    double pick_radius = 0.05;   // grip > 0 grabs the nearest block within this
    double success_radius = 0.05;
    int max_steps = 100;
    double min_separation = 0.12; // between entities at reset
    double margin = 0.1;          // reset positions stay inside [margin, 1-margin]
};

enum class TaskKind { pick_place, long_horizon };

struct TaskSpec {
    TaskKind kind = TaskKind::pick_place;

    std::string str() const;
    static TaskSpec parse(const std::string& s);
    bool operator==(const TaskSpec&) const = default;
};

struct EnvBlock {
    Eigen::Vector2d pos;
    int color = 0;
    bool held = false;
};

struct GoalPad {
    Eigen::Vector2d pos;
    int color = 0;
};

struct Subgoal {
    int block_color = 0;
    int pad_color = 0;
    bool done = false;
};

struct EnvState {
    Eigen::Vector2d agent{0.5, 0.5};
    std::vector<EnvBlock> blocks;
    std::vector<GoalPad> pads;
    std::vector<Subgoal> subgoals;
    int step_count = 0;
    std::uint64_t seed = 0;
    TaskSpec task;
};

/// (dx, dy) displacement plus gripper command (>0 closes, <0 opens).
struct EnvAction {
    double dx = 0.0;
    double dy = 0.0;
    double grip = 0.0;
};

struct StepResult {
    double reward = 0.0;
    bool done = false;
    bool success = false;
};

const char* color_name(int color);

/// Seeded scene setup. Returns the initial state and the instruction text.
std::pair<EnvState, std::string> reset(const TaskSpec& task, std::uint64_t seed,
                                       const EnvConfig& cfg = {});

/// Deterministic kinematics: clip displacement, move agent (held block
/// follows), then apply the grip, then check subgoal completion.
StepResult step(EnvState& state, const EnvAction& action, const EnvConfig& cfg = {});

/// 32×32 rasterization: pads (dim, 6×6), blocks (bright, 4×4), agent (white,
/// 2×2); a held block is drawn at the agent position.
Image render(const EnvState& state, const EnvConfig& cfg = {});

/// Pure proportional controller solving the current subgoal: approach the
/// target block, grip, carry to the pad, release. No-op when all subgoals are
/// done.
EnvAction scripted_expert(const EnvState& state, const EnvConfig& cfg = {});

struct ThinningConfig {
    double threshold = 0.01; // infinity-norm action-delta below which a frame drops
    int min_frames = 6;      // episodes shorter than this after thinning are discarded
    int settle_steps = 3;    // no-op frames recorded at episode start and after grip flips
};

/// One recorded demonstration after keyframe thinning. frames[i] is the
/// observation before actions[i]; timesteps holds each frame's original
/// environment step index.
struct Episode {
    std::string instruction;
    std::vector<Image> frames;
    std::vector<EnvAction> actions; // |actions| = |frames| - 1
    std::vector<int> timesteps;     // |timesteps| = |frames|
    bool success = false;
    std::uint64_t seed = 0;
    TaskSpec task;
};

/// Keyframe thinning: drops interior frames whose incoming action moved less
/// than the threshold on every axis (and left the grip unchanged), merging
/// the surrounding actions. First and last frames always survive.
/// Indices returned are positions kept in the original frame sequence.
std::vector<int> thin_keyframes(const std::vector<EnvAction>& actions, double threshold);

/// Rolls the scripted expert over seeds seed, seed+1, ... until n episodes
/// survive thinning and the minimum-frame filter.
std::vector<Episode> generate_dataset(int n, const TaskSpec& task, std::uint64_t seed,
                                      const EnvConfig& env_cfg = {},
                                      const ThinningConfig& thin_cfg = {});

/// Re-simulates an episode from its seed, applying the stored actions, and
/// returns the rendered frames (replay oracle for store verification).
std::vector<Image> replay_frames(const Episode& episode, const EnvConfig& cfg = {});

// Episode store: a manifest plus one binary file per episode.
void save_dataset(const std::filesystem::path& dir, const std::vector<Episode>& episodes,
                  const std::string& meta);
std::vector<Episode> load_dataset(const std::filesystem::path& dir);

} // namespace univla
