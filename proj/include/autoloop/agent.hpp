#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace autoloop::agent {

enum class Activation { identity, tanh, sigmoid };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Fully connected network with at most three weight layers, hidden width <= 64.
class Mlp {
public:
    static constexpr std::size_t max_layers = 3;
    static constexpr int max_hidden_width = 64;

    struct Layer {
        Eigen::MatrixXd weight;  // out x in
        Eigen::VectorXd bias;
        Activation activation = Activation::identity;
    };

    struct Gradients {
        std::vector<Eigen::MatrixXd> weight;
        std::vector<Eigen::VectorXd> bias;
        Eigen::MatrixXd input;  // dL/dinput, one column per sample
    };

    Mlp() = default;
    /// Zero weights and biases. `sizes` lists input, hidden..., output widths.
    Mlp(const std::vector<int>& sizes, const std::vector<Activation>& activations);

    /// Hidden layers ~ U(+-1/sqrt(fan_in)); the last layer ~ U(+-final_scale).
    static Mlp random(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                      std::mt19937_64& rng, double final_scale = 3e-3);

    int input_size() const;
    int output_size() const;
    std::vector<int> sizes() const;

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
    /// One sample per column.
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& inputs) const;
    /// Gradients of sum_b <output_grad_b, f(input_b)> with respect to every parameter and input.
    Gradients backward(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& output_grad) const;

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::VectorXd& params);
    static Eigen::VectorXd flatten(const Gradients& g);

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

private:
    std::vector<Layer> layers_;
};

/// Adam moments for one network.
class Adam {
public:
    Adam() = default;
    explicit Adam(const Mlp& net, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    /// Descends along `grad`.
    void step(Mlp& net, const Mlp::Gradients& grad, double learning_rate);

private:
    std::vector<Eigen::MatrixXd> m_w_, v_w_;
    std::vector<Eigen::VectorXd> m_b_, v_b_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::int64_t t_ = 0;
};

using State = std::array<double, 2>;

struct Transition {
    State state{};
    double action = 0.0;
    double reward = 0.0;
    State next_state{};
    bool done = false;
};

/// FIFO ring of transitions with seeded uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 5000, std::uint64_t seed = 0);

    void store(const Transition& t);
    /// Uniform without replacement; throws insufficient_samples when size() < batch.
    std::vector<Transition> sample(std::size_t batch);

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    /// i-th oldest stored transition.
    const Transition& at(std::size_t i) const;

private:
    std::size_t capacity_;
    std::vector<Transition> storage_;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
    std::mt19937_64 rng_;
};

struct CurriculumState {
    double w0 = 0.1;
    double wF = 1.0;
    double alpha = 0.9;
    double ema = 0.0;
    double progress = 0.0;
    bool initialized = false;

    void validate() const;
};

/// w0 + (wF - w0) a, with a clamped to [0, 1].
double curriculum_weight(const CurriculumState& cs, double action);
/// The first call seeds the average with |loss|.
CurriculumState update_ema(CurriculumState cs, double loop_loss_value);
/// (progress, ema); throws uninitialized_ema.
State build_state(const CurriculumState& cs);
/// -ema; throws uninitialized_ema.
double reward(const CurriculumState& cs);

enum class NoiseKind { gaussian, ornstein_uhlenbeck };

struct AgentConfig {
    int hidden_width = 64;
    double gamma = 0.99;
    double tau = 0.005;
    double actor_lr = 1e-4;
    double critic_lr = 1e-3;
    NoiseKind noise = NoiseKind::gaussian;
    double sigma_start = 0.3;
    double sigma_end = 0.02;
    std::int64_t noise_decay_steps = 3360;
    double ou_theta = 0.15;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static AgentConfig from_json(const nlohmann::json& j);
};

struct TrainStats {
    double critic_loss = 0.0;
    double actor_objective = 0.0;
};

/// Mean squared TD error of `critic` on the batch and its gradient.
double critic_loss_and_grad(const Mlp& critic, const std::vector<Transition>& batch,
                            const Eigen::VectorXd& targets, Mlp::Gradients* grad);
/// Mean Q(s, mu(s)) and its gradient with respect to the actor parameters.
double actor_objective_and_grad(const Mlp& actor, const Mlp& critic,
                                const std::vector<Transition>& batch, Mlp::Gradients* grad);

class DdpgAgent {
public:
    explicit DdpgAgent(const AgentConfig& config = {});

    /// Deterministic policy when explore is false; clamp(mu(s) + noise, 0, 1) otherwise.
    double select_action(const State& state, bool explore);
    double policy(const State& state) const;
    /// Current exploration standard deviation.
    double sigma() const;

    TrainStats train_step(ReplayBuffer& buffer, std::size_t batch = 64);
    /// target <- (1 - tau) target + tau main
    void soft_update(double tau);

    const AgentConfig& config() const { return config_; }
    Mlp& actor() { return actor_; }
    Mlp& critic() { return critic_; }
    const Mlp& actor() const { return actor_; }
    const Mlp& critic() const { return critic_; }
    const Mlp& actor_target() const { return actor_target_; }
    const Mlp& critic_target() const { return critic_target_; }

    nlohmann::json to_json() const;
    static DdpgAgent from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static DdpgAgent load(const std::filesystem::path& path);

private:
    AgentConfig config_;
    Mlp actor_, critic_, actor_target_, critic_target_;
    Adam actor_opt_, critic_opt_;
    std::mt19937_64 rng_;
    std::int64_t explore_steps_ = 0;
    double ou_state_ = 0.0;
};

} // namespace autoloop::agent
