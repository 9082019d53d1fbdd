#include "autoloop/agent.hpp"
#include "autoloop/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace autoloop::agent {

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
    switch (a) {
        case Activation::identity: return z;
        case Activation::tanh: return z.array().tanh().matrix();
        case Activation::sigmoid: return (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
    return z;
}

// Derivative expressed through the activation output.
Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& out, Activation a) {
    switch (a) {
        case Activation::identity: return Eigen::MatrixXd::Ones(out.rows(), out.cols());
        case Activation::tanh: return (1.0 - out.array().square()).matrix();
        case Activation::sigmoid: return (out.array() * (1.0 - out.array())).matrix();
    }
    return out;
}

Eigen::MatrixXd states_matrix(const std::vector<Transition>& batch, bool next) {
    Eigen::MatrixXd m(2, static_cast<Eigen::Index>(batch.size()));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const State& s = next ? batch[b].next_state : batch[b].state;
        m(0, static_cast<Eigen::Index>(b)) = s[0];
        m(1, static_cast<Eigen::Index>(b)) = s[1];
    }
    return m;
}

Eigen::MatrixXd critic_inputs(const Eigen::MatrixXd& states, const Eigen::RowVectorXd& actions) {
    Eigen::MatrixXd in(3, states.cols());
    in.topRows(2) = states;
    in.row(2) = actions;
    return in;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::MatrixXd>(v.data(), m.rows(), m.cols()) = m;
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto v = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
        throw error(error_code::dimension_mismatch, "matrix payload size mismatch");
    }
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

} // namespace

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "tanh") return Activation::tanh;
    if (name == "sigmoid") return Activation::sigmoid;
    throw error(error_code::invalid_spec, "unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "identity";
}

Mlp::Mlp(const std::vector<int>& sizes, const std::vector<Activation>& activations) {
    if (sizes.size() < 2 || activations.size() + 1 != sizes.size()) {
        throw error(error_code::dimension_mismatch, "need one activation per weight layer");
    }
    if (activations.size() > max_layers) {
        throw error(error_code::invalid_spec, "at most three weight layers are supported");
    }
    for (std::size_t i = 1; i + 1 < sizes.size(); ++i) {
        if (sizes[i] > max_hidden_width) {
            throw error(error_code::invalid_spec, "hidden width exceeds 64");
        }
    }
    for (int s : sizes) {
        if (s <= 0) {
            throw error(error_code::invalid_spec, "layer widths must be positive");
        }
    }
    for (std::size_t i = 0; i < activations.size(); ++i) {
        layers_.push_back({Eigen::MatrixXd::Zero(sizes[i + 1], sizes[i]),
                           Eigen::VectorXd::Zero(sizes[i + 1]), activations[i]});
    }
}

Mlp Mlp::random(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                std::mt19937_64& rng, double final_scale) {
    Mlp net(sizes, activations);
    for (std::size_t l = 0; l < net.layers_.size(); ++l) {
        auto& layer = net.layers_[l];
        const bool last = l + 1 == net.layers_.size();
        const double bound = last ? final_scale : 1.0 / std::sqrt(static_cast<double>(sizes[l]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                layer.weight(r, c) = dist(rng);
            }
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
            layer.bias(r) = dist(rng);
        }
    }
    return net;
}

int Mlp::input_size() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int Mlp::output_size() const {
    return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> Mlp::sizes() const {
    std::vector<int> s;
    if (layers_.empty()) {
        return s;
    }
    s.push_back(input_size());
    for (const auto& l : layers_) {
        s.push_back(static_cast<int>(l.weight.rows()));
    }
    return s;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
    return forward_batch(input).col(0);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& inputs) const {
    if (inputs.rows() != input_size()) {
        throw error(error_code::dimension_mismatch,
                    "expected input of size " + std::to_string(input_size()) + ", got "
                        + std::to_string(inputs.rows()));
    }
    Eigen::MatrixXd a = inputs;
    for (const auto& layer : layers_) {
        Eigen::MatrixXd z = layer.weight * a;
        z.colwise() += layer.bias;
        a = activate(z, layer.activation);
    }
    return a;
}

Mlp::Gradients Mlp::backward(const Eigen::MatrixXd& inputs,
                             const Eigen::MatrixXd& output_grad) const {
    if (inputs.rows() != input_size() || output_grad.rows() != output_size()
        || output_grad.cols() != inputs.cols()) {
        throw error(error_code::dimension_mismatch, "backward: shape mismatch");
    }
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(inputs);
    for (const auto& layer : layers_) {
        Eigen::MatrixXd z = layer.weight * acts.back();
        z.colwise() += layer.bias;
        acts.push_back(activate(z, layer.activation));
    }

    Gradients g;
    g.weight.resize(layers_.size());
    g.bias.resize(layers_.size());
    Eigen::MatrixXd delta = output_grad;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        delta = delta.cwiseProduct(activation_slope(acts[l + 1], layers_[l].activation));
        g.weight[l] = delta * acts[l].transpose();
        g.bias[l] = delta.rowwise().sum();
        delta = layers_[l].weight.transpose() * delta;
    }
    g.input = std::move(delta);
    return g;
}

Eigen::VectorXd Mlp::flatten() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) {
        n += l.weight.size() + l.bias.size();
    }
    Eigen::VectorXd out(n);
    Eigen::Index off = 0;
    for (const auto& l : layers_) {
        out.segment(off, l.weight.size()) = l.weight.reshaped();
        off += l.weight.size();
        out.segment(off, l.bias.size()) = l.bias;
        off += l.bias.size();
    }
    return out;
}

void Mlp::unflatten(const Eigen::VectorXd& params) {
    Eigen::Index off = 0;
    for (auto& l : layers_) {
        if (off + l.weight.size() + l.bias.size() > params.size()) {
            throw error(error_code::dimension_mismatch, "parameter vector too short");
        }
        l.weight.reshaped() = params.segment(off, l.weight.size());
        off += l.weight.size();
        l.bias = params.segment(off, l.bias.size());
        off += l.bias.size();
    }
    if (off != params.size()) {
        throw error(error_code::dimension_mismatch, "parameter vector too long");
    }
}

Eigen::VectorXd Mlp::flatten(const Gradients& g) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < g.weight.size(); ++l) {
        n += g.weight[l].size() + g.bias[l].size();
    }
    Eigen::VectorXd out(n);
    Eigen::Index off = 0;
    for (std::size_t l = 0; l < g.weight.size(); ++l) {
        out.segment(off, g.weight[l].size()) = g.weight[l].reshaped();
        off += g.weight[l].size();
        out.segment(off, g.bias[l].size()) = g.bias[l];
        off += g.bias[l].size();
    }
    return out;
}

nlohmann::json Mlp::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) {
        layers.push_back({{"activation", to_string(l.activation)},
                          {"weight", matrix_to_json(l.weight)},
                          {"bias", matrix_to_json(l.bias)}});
    }
    return {{"layers", layers}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    Mlp net;
    for (const auto& jl : j.at("layers")) {
        Layer l;
        l.activation = activation_from_string(jl.at("activation").get<std::string>());
        l.weight = matrix_from_json(jl.at("weight"));
        l.bias = matrix_from_json(jl.at("bias")).col(0);
        if (!net.layers_.empty() && net.layers_.back().weight.rows() != l.weight.cols()) {
            throw error(error_code::dimension_mismatch, "layer sizes do not chain");
        }
        net.layers_.push_back(std::move(l));
    }
    return net;
}

Adam::Adam(const Mlp& net, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& l : net.layers()) {
        m_w_.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        v_w_.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
        m_b_.push_back(Eigen::VectorXd::Zero(l.bias.size()));
        v_b_.push_back(Eigen::VectorXd::Zero(l.bias.size()));
    }
}

void Adam::step(Mlp& net, const Mlp::Gradients& grad, double learning_rate) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        param.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(layers[l].weight, m_w_[l], v_w_[l], grad.weight[l]);
        update(layers[l].bias, m_b_[l], v_b_[l], grad.bias[l]);
    }
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
    if (capacity == 0) {
        throw error(error_code::invalid_spec, "replay capacity must be positive");
    }
    storage_.resize(capacity);
}

void ReplayBuffer::store(const Transition& t) {
    storage_[head_] = t;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
    if (i >= size_) {
        throw error(error_code::insufficient_samples, "replay index out of range");
    }
    const std::size_t oldest = size_ < capacity_ ? 0 : head_;
    return storage_[(oldest + i) % capacity_];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch) {
    if (size_ < batch) {
        throw error(error_code::insufficient_samples,
                    "requested " + std::to_string(batch) + " of " + std::to_string(size_));
    }
    std::vector<std::size_t> idx(size_);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<Transition> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, size_ - 1);
        std::swap(idx[i], idx[pick(rng_)]);
        out.push_back(at(idx[i]));
    }
    return out;
}

void CurriculumState::validate() const {
    if (!(w0 >= 0.0 && w0 <= wF) || !std::isfinite(wF)) {
        throw error(error_code::invalid_spec, "curriculum weights must satisfy 0 <= w0 <= wF");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw error(error_code::invalid_spec, "ema alpha must lie in (0, 1)");
    }
}

double curriculum_weight(const CurriculumState& cs, double action) {
    if (action < 0.0 || action > 1.0 || std::isnan(action)) {
        spdlog::warn("curriculum action {} outside [0, 1], clamping", action);
        action = std::isnan(action) ? 0.0 : std::clamp(action, 0.0, 1.0);
    }
    return cs.w0 + (cs.wF - cs.w0) * action;
}

CurriculumState update_ema(CurriculumState cs, double loop_loss_value) {
    const double x = std::abs(loop_loss_value);
    if (!cs.initialized) {
        cs.ema = x;
        cs.initialized = true;
    } else {
        cs.ema = cs.alpha * cs.ema + (1.0 - cs.alpha) * x;
    }
    return cs;
}

State build_state(const CurriculumState& cs) {
    if (!cs.initialized) {
        throw error(error_code::uninitialized_ema, "state requested before the first loss update");
    }
    return {cs.progress, cs.ema};
}

double reward(const CurriculumState& cs) {
    if (!cs.initialized) {
        throw error(error_code::uninitialized_ema, "reward requested before the first loss update");
    }
    return -cs.ema;
}

nlohmann::json AgentConfig::to_json() const {
    return {{"hidden_width", hidden_width},
            {"gamma", gamma},
            {"tau", tau},
            {"actor_lr", actor_lr},
            {"critic_lr", critic_lr},
            {"noise", noise == NoiseKind::gaussian ? "gaussian" : "ou"},
            {"sigma_start", sigma_start},
            {"sigma_end", sigma_end},
            {"noise_decay_steps", noise_decay_steps},
            {"ou_theta", ou_theta},
            {"seed", seed}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
    AgentConfig c;
    c.hidden_width = j.value("hidden_width", c.hidden_width);
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.actor_lr = j.value("actor_lr", c.actor_lr);
    c.critic_lr = j.value("critic_lr", c.critic_lr);
    const std::string noise = j.value("noise", std::string("gaussian"));
    if (noise == "gaussian") {
        c.noise = NoiseKind::gaussian;
    } else if (noise == "ou") {
        c.noise = NoiseKind::ornstein_uhlenbeck;
    } else {
        throw error(error_code::invalid_spec, "agent.noise must be 'gaussian' or 'ou'");
    }
    c.sigma_start = j.value("sigma_start", c.sigma_start);
    c.sigma_end = j.value("sigma_end", c.sigma_end);
    c.noise_decay_steps = j.value("noise_decay_steps", c.noise_decay_steps);
    c.ou_theta = j.value("ou_theta", c.ou_theta);
    c.seed = j.value("seed", c.seed);
    return c;
}

double critic_loss_and_grad(const Mlp& critic, const std::vector<Transition>& batch,
                            const Eigen::VectorXd& targets, Mlp::Gradients* grad) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    if (n == 0 || targets.size() != n) {
        throw error(error_code::dimension_mismatch, "critic loss needs one target per sample");
    }
    Eigen::RowVectorXd actions(n);
    for (Eigen::Index b = 0; b < n; ++b) {
        actions(b) = batch[static_cast<std::size_t>(b)].action;
    }
    const Eigen::MatrixXd in = critic_inputs(states_matrix(batch, false), actions);
    const Eigen::RowVectorXd err = critic.forward_batch(in).row(0) - targets.transpose();
    const double loss = err.squaredNorm() / static_cast<double>(n);
    if (grad != nullptr) {
        *grad = critic.backward(in, (2.0 / static_cast<double>(n)) * err);
    }
    return loss;
}

double actor_objective_and_grad(const Mlp& actor, const Mlp& critic,
                                const std::vector<Transition>& batch, Mlp::Gradients* grad) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    const Eigen::MatrixXd states = states_matrix(batch, false);
    const Eigen::RowVectorXd mu = actor.forward_batch(states).row(0);
    const Eigen::MatrixXd in = critic_inputs(states, mu);
    const double objective = critic.forward_batch(in).row(0).mean();
    if (grad != nullptr) {
        const Eigen::MatrixXd ones =
            Eigen::MatrixXd::Constant(1, n, 1.0 / static_cast<double>(n));
        const Mlp::Gradients cg = critic.backward(in, ones);
        *grad = actor.backward(states, cg.input.row(2));
    }
    return objective;
}

DdpgAgent::DdpgAgent(const AgentConfig& config) : config_(config), rng_(config.seed) {
    const int h = config.hidden_width;
    actor_ = Mlp::random({2, h, h, 1},
                         {Activation::tanh, Activation::tanh, Activation::sigmoid}, rng_);
    critic_ = Mlp::random({3, h, h, 1},
                          {Activation::tanh, Activation::tanh, Activation::identity}, rng_);
    actor_target_ = actor_;
    critic_target_ = critic_;
    actor_opt_ = Adam(actor_);
    critic_opt_ = Adam(critic_);
}

double DdpgAgent::policy(const State& state) const {
    return actor_.forward(Eigen::Vector2d(state[0], state[1]))(0);
}

double DdpgAgent::sigma() const {
    if (config_.noise_decay_steps <= 0) {
        return config_.sigma_end;
    }
    const double f = std::min(1.0, static_cast<double>(explore_steps_)
                                       / static_cast<double>(config_.noise_decay_steps));
    return config_.sigma_start + (config_.sigma_end - config_.sigma_start) * f;
}

double DdpgAgent::select_action(const State& state, bool explore) {
    const double mu = policy(state);
    if (!explore) {
        return mu;
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    const double s = sigma();
    double noise;
    if (config_.noise == NoiseKind::gaussian) {
        noise = s * normal(rng_);
    } else {
        ou_state_ += -config_.ou_theta * ou_state_ + s * normal(rng_);
        noise = ou_state_;
    }
    ++explore_steps_;
    return std::clamp(mu + noise, 0.0, 1.0);
}

TrainStats DdpgAgent::train_step(ReplayBuffer& buffer, std::size_t batch) {
    const std::vector<Transition> samples = buffer.sample(batch);
    const auto n = static_cast<Eigen::Index>(samples.size());

    const Eigen::MatrixXd next_states = states_matrix(samples, true);
    const Eigen::RowVectorXd next_actions = actor_target_.forward_batch(next_states).row(0);
    const Eigen::RowVectorXd next_q =
        critic_target_.forward_batch(critic_inputs(next_states, next_actions)).row(0);
    Eigen::VectorXd targets(n);
    for (Eigen::Index b = 0; b < n; ++b) {
        const auto& t = samples[static_cast<std::size_t>(b)];
        targets(b) = t.reward + config_.gamma * (t.done ? 0.0 : 1.0) * next_q(b);
    }

    TrainStats stats;
    Mlp::Gradients cg;
    stats.critic_loss = critic_loss_and_grad(critic_, samples, targets, &cg);
    critic_opt_.step(critic_, cg, config_.critic_lr);

    Mlp::Gradients ag;
    stats.actor_objective = actor_objective_and_grad(actor_, critic_, samples, &ag);
    for (auto& w : ag.weight) w = -w;
    for (auto& b : ag.bias) b = -b;
    actor_opt_.step(actor_, ag, config_.actor_lr);

    soft_update(config_.tau);
    return stats;
}

void DdpgAgent::soft_update(double tau) {
    auto blend = [tau](Mlp& target, const Mlp& main) {
        auto& tl = target.layers();
        const auto& ml = main.layers();
        for (std::size_t l = 0; l < tl.size(); ++l) {
            tl[l].weight = (1.0 - tau) * tl[l].weight + tau * ml[l].weight;
            tl[l].bias = (1.0 - tau) * tl[l].bias + tau * ml[l].bias;
        }
    };
    blend(actor_target_, actor_);
    blend(critic_target_, critic_);
}

nlohmann::json DdpgAgent::to_json() const {
    return {{"format", "autoloop-ddpg-agent"},
            {"version", 1},
            {"config", config_.to_json()},
            {"explore_steps", explore_steps_},
            {"ou_state", ou_state_},
            {"actor", actor_.to_json()},
            {"critic", critic_.to_json()},
            {"actor_target", actor_target_.to_json()},
            {"critic_target", critic_target_.to_json()}};
}

DdpgAgent DdpgAgent::from_json(const nlohmann::json& j) {
    if (j.value("format", std::string()) != "autoloop-ddpg-agent" || j.value("version", 0) != 1) {
        throw error(error_code::invalid_spec, "not a version 1 agent checkpoint");
    }
    DdpgAgent a(AgentConfig::from_json(j.at("config")));
    a.explore_steps_ = j.at("explore_steps").get<std::int64_t>();
    a.ou_state_ = j.at("ou_state").get<double>();
    a.actor_ = Mlp::from_json(j.at("actor"));
    a.critic_ = Mlp::from_json(j.at("critic"));
    a.actor_target_ = Mlp::from_json(j.at("actor_target"));
    a.critic_target_ = Mlp::from_json(j.at("critic_target"));
    a.actor_opt_ = Adam(a.actor_);
    a.critic_opt_ = Adam(a.critic_);
    return a;
}

void DdpgAgent::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw error(error_code::io_error, "cannot write " + path.string());
    }
    out << to_json().dump(1) << '\n';
}

DdpgAgent DdpgAgent::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw error(error_code::io_error, "cannot read " + path.string());
    }
    return from_json(nlohmann::json::parse(in));
}

} // namespace autoloop::agent
