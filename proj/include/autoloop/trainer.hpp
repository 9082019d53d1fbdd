#pragma once

#include "autoloop/agent.hpp"
#include "autoloop/loopdb.hpp"
#include "autoloop/losses.hpp"
#include "autoloop/trajectory.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace autoloop::trainer {

using liegroup::Pose;
using liegroup::Twist;
using losses::LoopConstraint;
using losses::LossBreakdown;

/// predicted(i) = base(i) * exp(corrections(i)); the base is frozen.
struct PoseModel {
    std::vector<Pose> base;
    std::vector<Twist> corrections;

    static PoseModel from_base(std::vector<Pose> base);

    std::size_t size() const { return base.size(); }
    Pose predicted(std::size_t i) const;
    std::vector<Pose> predictions(std::size_t begin, std::size_t end) const;
    std::vector<Pose> predictions() const { return predictions(0, size()); }
};

/// Per-step odometry noise accumulated into the frozen base trajectory.
struct DriftParams {
    double translation_sigma = 0.02;  // meters per frame
    double rotation_sigma = 0.002;    // radians per frame
    std::uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
    static DriftParams from_json(const nlohmann::json& j);
};

/// Everything the surrogate needs from one scene.
struct TrainingScene {
    std::string id;
    Trajectory ground_truth;
    std::vector<Pose> base;
    std::vector<losses::PairPoints> pair_points;  // frames - 1 entries
};

TrainingScene make_training_scene(const loopdb::SyntheticScene& scene, const DriftParams& drift);

/// Desk-scale benchmark: two laps of a circle, every second-lap frame revisits the first.
loopdb::SceneSpec standard_drift_spec();
DriftParams standard_drift();

struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::vector<LoopConstraint> constraints;  // pred_index relative to begin
    bool empty_constraints = true;

    std::size_t size() const { return end - begin; }
};

struct WindowSampling {
    std::size_t length = 64;
    double pair_bias = 0.5;  // chance of centering the draw on a pair endpoint
};

/// Contiguous window, drawn around a random pair endpoint with probability pair_bias and
/// uniformly otherwise. Every pair endpoint inside the window yields one constraint targeting
/// the ground-truth pose of its partner. Throws no_pairs_in_scene when `pairs` is empty.
Window sample_window(const Trajectory& ground_truth, std::span<const loopdb::LoopPair> pairs,
                     const WindowSampling& sampling, std::mt19937_64& rng);

/// Constraints for every pair endpoint in [begin, end).
std::vector<LoopConstraint> window_constraints(const Trajectory& ground_truth,
                                               std::span<const loopdb::LoopPair> pairs,
                                               std::size_t begin, std::size_t end);

struct StepResult {
    LossBreakdown loss;
    bool empty_constraints = true;
};

/// One gradient-descent step on the corrections of the window frames. When max_update > 0,
/// a frame whose update is longer than max_update is scaled back to that length.
/// Throws non_finite_loss before touching the model if the loss is not finite.
StepResult training_step(PoseModel& model, const TrainingScene& scene, const Window& window,
                         const losses::LossWeights& weights, losses::HuberParam delta,
                         double step_size, double max_update = 0.0);

struct TrainerConfig {
    std::int64_t steps = 3360;
    double step_size = 0.5;
    double max_update = 0.05;  // per frame and step; 0 disables
    double huber_delta = 1.0;
    losses::LossWeights weights;  // loop_weight is the fixed weight used when the agent is off
    bool agent_enabled = true;
    agent::AgentConfig agent;
    agent::CurriculumState curriculum;
    std::int64_t cadence = 30;
    std::size_t batch = 64;
    std::size_t buffer_capacity = 5000;
    WindowSampling window;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static TrainerConfig from_json(const nlohmann::json& j);
};

struct TrainRow {
    std::int64_t step = 0;
    double progress = 0.0;
    double pose = 0.0;
    double flow = 0.0;
    double loop = 0.0;
    double ema = 0.0;
    double action = 0.0;  // NaN when the agent is off
    double w_loop = 0.0;
    double reward = 0.0;
    bool loop_valid = false;  // the window had constraints and updated the average
};

struct AgentUpdateRow {
    std::int64_t step = 0;
    double critic_loss = 0.0;
    double actor_objective = 0.0;
};

/// Whole-trajectory diagnostics, logged every cadence steps.
struct HeldOutRow {
    std::int64_t step = 0;
    double pose = 0.0;
    double flow = 0.0;
    double loop = 0.0;
    double ate = 0.0;
};

struct TrainLog {
    std::vector<TrainRow> rows;
    std::vector<AgentUpdateRow> updates;
    std::vector<HeldOutRow> held_out;

    /// step,progress,pose,flow,loop,ema,action,w_loop,reward
    void write_csv(const std::filesystem::path& path) const;
    void write_updates_csv(const std::filesystem::path& path) const;
    void write_held_out_csv(const std::filesystem::path& path) const;
};

struct FinetuneResult {
    PoseModel model;
    TrainLog log;
    agent::DdpgAgent agent;
};

FinetuneResult finetune(const TrainingScene& scene, std::span<const loopdb::LoopPair> pairs,
                        const TrainerConfig& config);

/// Predicted trajectory with the scene's timestamps.
Trajectory model_trajectory(const PoseModel& model, const TrainingScene& scene);

} // namespace autoloop::trainer
