#include "autoloop/trainer.hpp"

#include "autoloop/error.hpp"
#include "autoloop/eval.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

namespace autoloop::trainer {

using liegroup::Vec6;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{seed, stream};
    std::array<std::uint64_t, 1> out{};
    seq.generate(out.begin(), out.end());
    return out[0];
}

void check_json_keys(const nlohmann::json& j, std::initializer_list<const char*> known,
                     const std::string& where) {
    if (!j.is_object()) {
        throw error(error_code::invalid_spec, where + " must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; })) {
            throw error(error_code::invalid_spec, "unknown " + where + " field '" + key + "'");
        }
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw error(error_code::io_error, "cannot write " + path.string());
    }
    return out;
}

} // namespace

PoseModel PoseModel::from_base(std::vector<Pose> base) {
    PoseModel m;
    m.corrections.assign(base.size(), Twist());
    m.base = std::move(base);
    return m;
}

Pose PoseModel::predicted(std::size_t i) const {
    return liegroup::compose(base.at(i), liegroup::exp_se3(corrections.at(i)));
}

std::vector<Pose> PoseModel::predictions(std::size_t begin, std::size_t end) const {
    std::vector<Pose> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(predicted(i));
    return out;
}

nlohmann::ordered_json DriftParams::to_json() const {
    return {{"translation_sigma", translation_sigma},
            {"rotation_sigma", rotation_sigma},
            {"seed", seed}};
}

DriftParams DriftParams::from_json(const nlohmann::json& j) {
    check_json_keys(j, {"translation_sigma", "rotation_sigma", "seed"}, "drift");
    DriftParams d;
    d.translation_sigma = j.value("translation_sigma", d.translation_sigma);
    d.rotation_sigma = j.value("rotation_sigma", d.rotation_sigma);
    d.seed = j.value("seed", d.seed);
    if (!(d.translation_sigma >= 0.0) || !(d.rotation_sigma >= 0.0)) {
        throw error(error_code::invalid_spec, "drift sigmas must be non-negative");
    }
    return d;
}

TrainingScene make_training_scene(const loopdb::SyntheticScene& scene, const DriftParams& drift) {
    TrainingScene t;
    t.id = scene.spec.id;
    t.ground_truth = scene.ground_truth;
    const auto& gt = scene.ground_truth.poses;
    std::mt19937_64 rng(drift.seed);
    std::normal_distribution<double> n(0.0, 1.0);
    t.base.push_back(gt.front());
    for (std::size_t k = 0; k + 1 < gt.size(); ++k) {
        Vec6 e;
        for (int d = 0; d < 3; ++d) e(d) = drift.translation_sigma * n(rng);
        for (int d = 3; d < 6; ++d) e(d) = drift.rotation_sigma * n(rng);
        const Pose step = liegroup::compose(liegroup::between(gt[k], gt[k + 1]),
                                            liegroup::exp_se3(Twist::from_vector(e)));
        t.base.push_back(liegroup::compose(t.base.back(), step));
    }
    t.pair_points = losses::make_pair_points(gt, scene.landmarks, scene.visible);
    return t;
}

loopdb::SceneSpec standard_drift_spec() {
    loopdb::SceneSpec s;
    s.id = "drift";
    s.shape = loopdb::Shape::circle;
    s.frames = 300;
    s.lap_frames = 150;
    s.landmarks = 3600;
    s.seed = 2024;
    return s;
}

DriftParams standard_drift() {
    DriftParams d;
    d.seed = 7;
    return d;
}

std::vector<LoopConstraint> window_constraints(const Trajectory& ground_truth,
                                               std::span<const loopdb::LoopPair> pairs,
                                               std::size_t begin, std::size_t end) {
    std::vector<LoopConstraint> out;
    for (const auto& p : pairs) {
        if (p.frame_i >= ground_truth.size() || p.frame_j >= ground_truth.size()) {
            throw error(error_code::invalid_spec,
                        "loop pair (" + std::to_string(p.frame_i) + ", " +
                            std::to_string(p.frame_j) + ") outside a trajectory of " +
                            std::to_string(ground_truth.size()) + " frames");
        }
        if (p.frame_i >= begin && p.frame_i < end) {
            out.push_back({p.frame_i - begin, ground_truth.poses[p.frame_j]});
        }
        if (p.frame_j >= begin && p.frame_j < end) {
            out.push_back({p.frame_j - begin, ground_truth.poses[p.frame_i]});
        }
    }
    return out;
}

Window sample_window(const Trajectory& ground_truth, std::span<const loopdb::LoopPair> pairs,
                     const WindowSampling& sampling, std::mt19937_64& rng) {
    if (pairs.empty()) {
        throw error(error_code::no_pairs_in_scene, "no loop pairs to sample windows from");
    }
    const std::size_t n = ground_truth.size();
    const std::size_t len = std::min(sampling.length, n);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::size_t begin = 0;
    if (coin(rng) < sampling.pair_bias) {
        std::uniform_int_distribution<std::size_t> which(0, 2 * pairs.size() - 1);
        const std::size_t w = which(rng);
        const auto& p = pairs[w / 2];
        const std::size_t f = w % 2 == 0 ? p.frame_i : p.frame_j;
        const std::size_t lo = f + 1 >= len ? f + 1 - len : 0;
        const std::size_t hi = std::min(f, n - len);
        std::uniform_int_distribution<std::size_t> start(lo, hi);
        begin = start(rng);
    } else {
        std::uniform_int_distribution<std::size_t> start(0, n - len);
        begin = start(rng);
    }
    Window w;
    w.begin = begin;
    w.end = begin + len;
    w.constraints = window_constraints(ground_truth, pairs, w.begin, w.end);
    w.empty_constraints = w.constraints.empty();
    return w;
}

StepResult training_step(PoseModel& model, const TrainingScene& scene, const Window& window,
                         const losses::LossWeights& weights, losses::HuberParam delta,
                         double step_size, double max_update) {
    if (window.end > model.size() || window.size() < 2) {
        throw error(error_code::invalid_spec, "window [" + std::to_string(window.begin) + ", " +
                                                  std::to_string(window.end) + ") is invalid");
    }
    const auto preds = model.predictions(window.begin, window.end);
    const std::span<const Pose> gt(scene.ground_truth.poses.data() + window.begin, window.size());
    const std::span<const losses::PairPoints> points(scene.pair_points.data() + window.begin,
                                                     window.size() - 1);

    StepResult r;
    const double pose = losses::pose_loss(preds, gt, delta);
    const double flow = losses::flow_loss(preds, gt, points);
    const auto loop = losses::loop_loss(preds, window.constraints, delta);
    r.empty_constraints = loop.empty;
    r.loss = losses::total_loss(pose, flow, loop.value, weights);
    if (!std::isfinite(r.loss.total)) {
        throw error(error_code::non_finite_loss,
                    fmt::format("window [{}, {}): pose={} flow={} loop={} w_loop={}",
                                window.begin, window.end, pose, flow, loop.value,
                                weights.loop_weight));
    }

    const auto gp = losses::pose_loss_grad(preds, gt, delta);
    const auto gf = losses::flow_loss_grad(preds, gt, points);
    std::vector<Vec6> g(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        g[i] = weights.flow_scale * gf[i].vector() + weights.pose_scale * gp[i].vector();
    }
    if (weights.loop_weight != 0.0 && !loop.empty) {
        const auto gl = losses::loop_loss_grad(preds, window.constraints, delta);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            g[i] += weights.loop_weight * gl[i].vector();
        }
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!g[i].allFinite()) {
            throw error(error_code::non_finite_loss,
                        fmt::format("non-finite gradient at frame {}", window.begin + i));
        }
    }
    // d pred / d c = J_r(c), so the chain rule applies J_r(c)^T to the perturbation gradient.
    for (std::size_t i = 0; i < preds.size(); ++i) {
        Twist& c = model.corrections[window.begin + i];
        Vec6 dc = step_size * (losses::jacobian::se3_right(c).transpose() * g[i]);
        const double n = dc.norm();
        if (max_update > 0.0 && n > max_update) dc *= max_update / n;
        c = Twist::from_vector(c.vector() - dc);
    }
    return r;
}

void TrainerConfig::validate() const {
    auto bad = [](const std::string& what) { throw error(error_code::invalid_spec, what); };
    if (steps <= 0) bad("steps must be positive");
    if (cadence < 1) bad("cadence must be at least 1");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) bad("step_size must be positive");
    if (!(max_update >= 0.0) || !std::isfinite(max_update)) bad("max_update must be >= 0");
    if (batch < 1) bad("batch must be positive");
    if (buffer_capacity < batch) bad("buffer_capacity must be at least batch");
    if (window.length < 2) bad("window_length must be at least 2");
    if (!(window.pair_bias >= 0.0 && window.pair_bias <= 1.0)) bad("pair_bias must lie in [0, 1]");
    weights.validate();
    curriculum.validate();
    losses::HuberParam check(huber_delta);
    (void)check;
}

nlohmann::ordered_json TrainerConfig::to_json() const {
    return {{"steps", steps},
            {"step_size", step_size},
            {"max_update", max_update},
            {"huber_delta", huber_delta},
            {"pose_scale", weights.pose_scale},
            {"flow_scale", weights.flow_scale},
            {"loop_weight", weights.loop_weight},
            {"agent_enabled", agent_enabled},
            {"agent", agent.to_json()},
            {"curriculum",
             {{"w0", curriculum.w0}, {"wF", curriculum.wF}, {"alpha", curriculum.alpha}}},
            {"cadence", cadence},
            {"batch", batch},
            {"buffer_capacity", buffer_capacity},
            {"window_length", window.length},
            {"pair_bias", window.pair_bias},
            {"seed", seed}};
}

TrainerConfig TrainerConfig::from_json(const nlohmann::json& j) {
    check_json_keys(j,
                    {"steps", "step_size", "max_update", "huber_delta", "pose_scale", "flow_scale",
                     "loop_weight", "agent_enabled", "agent", "curriculum", "cadence", "batch",
                     "buffer_capacity", "window_length", "pair_bias", "seed"},
                    "trainer config");
    TrainerConfig c;
    try {
        c.steps = j.value("steps", c.steps);
        c.step_size = j.value("step_size", c.step_size);
        c.max_update = j.value("max_update", c.max_update);
        c.huber_delta = j.value("huber_delta", c.huber_delta);
        c.weights.pose_scale = j.value("pose_scale", c.weights.pose_scale);
        c.weights.flow_scale = j.value("flow_scale", c.weights.flow_scale);
        c.weights.loop_weight = j.value("loop_weight", c.weights.loop_weight);
        c.agent_enabled = j.value("agent_enabled", c.agent_enabled);
        if (j.contains("agent")) c.agent = agent::AgentConfig::from_json(j.at("agent"));
        if (j.contains("curriculum")) {
            const auto& cj = j.at("curriculum");
            check_json_keys(cj, {"w0", "wF", "alpha"}, "curriculum");
            c.curriculum.w0 = cj.value("w0", c.curriculum.w0);
            c.curriculum.wF = cj.value("wF", c.curriculum.wF);
            c.curriculum.alpha = cj.value("alpha", c.curriculum.alpha);
        }
        c.cadence = j.value("cadence", c.cadence);
        c.batch = j.value("batch", c.batch);
        c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
        c.window.length = j.value("window_length", c.window.length);
        c.window.pair_bias = j.value("pair_bias", c.window.pair_bias);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw error(error_code::invalid_spec, std::string("trainer config: ") + e.what());
    }
    c.validate();
    return c;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    fmt::memory_buffer buf;
    fmt::format_to(std::back_inserter(buf), "step,progress,pose,flow,loop,ema,action,w_loop,reward\n");
    for (const auto& r : rows) {
        fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{},{}\n", r.step, r.progress,
                       r.pose, r.flow, r.loop, r.ema, r.action, r.w_loop, r.reward);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void TrainLog::write_updates_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "step,critic_loss,actor_objective\n";
    for (const auto& u : updates) {
        out << fmt::format("{},{},{}\n", u.step, u.critic_loss, u.actor_objective);
    }
}

void TrainLog::write_held_out_csv(const std::filesystem::path& path) const {
    auto out = open_out(path);
    out << "step,pose,flow,loop,ate\n";
    for (const auto& h : held_out) {
        out << fmt::format("{},{},{},{},{}\n", h.step, h.pose, h.flow, h.loop, h.ate);
    }
}

Trajectory model_trajectory(const PoseModel& model, const TrainingScene& scene) {
    Trajectory t;
    t.timestamps = scene.ground_truth.timestamps;
    t.poses = model.predictions();
    return t;
}

namespace {

HeldOutRow held_out_row(std::int64_t step, const PoseModel& model, const TrainingScene& scene,
                        std::span<const LoopConstraint> all, losses::HuberParam delta) {
    const auto preds = model.predictions();
    HeldOutRow h;
    h.step = step;
    h.pose = losses::pose_loss(preds, scene.ground_truth.poses, delta);
    h.flow = losses::flow_loss(preds, scene.ground_truth.poses, scene.pair_points);
    h.loop = losses::loop_loss(preds, all, delta).value;
    h.ate = eval::ate(model_trajectory(model, scene), scene.ground_truth,
                      eval::AlignMode::similarity)
                .rmse;
    return h;
}

} // namespace

FinetuneResult finetune(const TrainingScene& scene, std::span<const loopdb::LoopPair> pairs,
                        const TrainerConfig& config) {
    config.validate();
    if (pairs.empty()) {
        throw error(error_code::no_pairs_in_scene,
                    "scene '" + scene.id + "' has no loop pairs in the database");
    }
    if (scene.base.size() != scene.ground_truth.size() ||
        scene.pair_points.size() + 1 != scene.ground_truth.size()) {
        throw error(error_code::length_mismatch, "training scene arrays disagree in length");
    }

    agent::AgentConfig ac = config.agent;
    ac.seed = derive_seed(config.seed, 0xA6E7 + config.agent.seed);
    FinetuneResult res{PoseModel::from_base(scene.base), {}, agent::DdpgAgent(ac)};
    agent::ReplayBuffer buffer(config.buffer_capacity, derive_seed(config.seed, 0xB0FF));
    std::mt19937_64 rng(derive_seed(config.seed, 0x3141));
    const losses::HuberParam delta(config.huber_delta);
    PoseModel& model = res.model;
    TrainLog& log = res.log;

    const auto all = window_constraints(scene.ground_truth, pairs, 0, scene.ground_truth.size());
    agent::CurriculumState cs = config.curriculum;
    cs = agent::update_ema(cs, losses::loop_loss(model.predictions(), all, delta).value);

    const double total = static_cast<double>(config.steps);
    log.rows.reserve(static_cast<std::size_t>(config.steps));
    for (std::int64_t step = 0; step < config.steps; ++step) {
        if (step % config.cadence == 0) {
            log.held_out.push_back(held_out_row(step, model, scene, all, delta));
        }
        cs.progress = static_cast<double>(step) / total;
        const agent::State state = agent::build_state(cs);
        double action = std::numeric_limits<double>::quiet_NaN();
        losses::LossWeights weights = config.weights;
        if (config.agent_enabled) {
            action = res.agent.select_action(state, true);
            weights.loop_weight = agent::curriculum_weight(cs, action);
        }

        const Window window = sample_window(scene.ground_truth, pairs, config.window, rng);
        const StepResult sr =
            training_step(model, scene, window, weights, delta, config.step_size,
                          config.max_update);
        if (!sr.empty_constraints) {
            cs = agent::update_ema(cs, sr.loss.loop);
        } else {
            spdlog::debug("step {}: window [{}, {}) has no loop constraints", step, window.begin,
                          window.end);
        }
        cs.progress = static_cast<double>(step + 1) / total;
        const agent::State next = agent::build_state(cs);
        const double r = agent::reward(cs);

        log.rows.push_back({step, state[0], sr.loss.pose, sr.loss.flow, sr.loss.loop, cs.ema,
                            action, weights.loop_weight, r, !sr.empty_constraints});

        if (config.agent_enabled) {
            buffer.store({state, action, r, next, step + 1 == config.steps});
            if ((step + 1) % config.cadence == 0 && buffer.size() >= config.batch) {
                const auto stats = res.agent.train_step(buffer, config.batch);
                log.updates.push_back({step, stats.critic_loss, stats.actor_objective});
            }
        }
    }
    log.held_out.push_back(held_out_row(config.steps, model, scene, all, delta));
    return res;
}

} // namespace autoloop::trainer
