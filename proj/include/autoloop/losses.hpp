#pragma once

#include "autoloop/liegroup.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace autoloop::losses {

using liegroup::Mat3;
using liegroup::Mat6;
using liegroup::Pose;
using liegroup::Twist;
using liegroup::Vec3;
using liegroup::Vec6;

struct LossWeights {
    double pose_scale = 10.0;  // s_p
    double flow_scale = 0.1;   // s_f
    double loop_weight = 0.0;  // w_loop

    /// Throws invalid_spec if any weight is negative or non-finite.
    void validate() const;
};

struct HuberParam {
    double delta = 1.0;

    HuberParam() = default;
    explicit HuberParam(double d);
};

/// Pulls predicted frame `pred_index` toward `target_pose`.
struct LoopConstraint {
    std::size_t pred_index = 0;
    Pose target_pose;
};

struct LossBreakdown {
    double pose = 0.0;
    double flow = 0.0;
    double loop = 0.0;
    double total = 0.0;
};

double huber(double x, HuberParam delta);
double huber_grad(double x, HuberParam delta);

/// Value of the loop term. `empty` is set (and value is 0) when there are no constraints.
struct LoopTerm {
    double value = 0.0;
    bool empty = false;
    std::size_t clamped = 0;  // residuals whose rotation was too close to pi
};

LoopTerm loop_loss(std::span<const Pose> predictions, std::span<const LoopConstraint> constraints,
                   HuberParam delta);

/// Gradient of loop_loss with respect to a right perturbation predictions[i] * exp(eps_i).
/// Returns one twist per prediction; frames without constraints get exact zeros.
std::vector<Twist> loop_loss_grad(std::span<const Pose> predictions,
                                  std::span<const LoopConstraint> constraints, HuberParam delta);

/// Mean Huber penalty on the relative-motion error of consecutive frames.
double pose_loss(std::span<const Pose> predictions, std::span<const Pose> ground_truth,
                 HuberParam delta);
std::vector<Twist> pose_loss_grad(std::span<const Pose> predictions,
                                  std::span<const Pose> ground_truth, HuberParam delta);

/// Landmarks co-visible in frames k and k+1, expressed in ground-truth camera-k coordinates.
using PairPoints = std::vector<Vec3>;

/// Builds per-pair point sets from world landmarks and sorted per-frame visibility lists.
std::vector<PairPoints> make_pair_points(std::span<const Pose> ground_truth,
                                         std::span<const Vec3> landmarks,
                                         std::span<const std::vector<int>> visible);

/// Mean squared difference (normalized image coordinates) between the flow induced by the
/// predicted relative motion and by the ground-truth relative motion, over every co-visible
/// landmark of every consecutive pair. `pair_points.size()` must equal frames - 1.
double flow_loss(std::span<const Pose> predictions, std::span<const Pose> ground_truth,
                 std::span<const PairPoints> pair_points);
std::vector<Twist> flow_loss_grad(std::span<const Pose> predictions,
                                  std::span<const Pose> ground_truth,
                                  std::span<const PairPoints> pair_points);

/// total = s_f * flow + s_p * pose + w_loop * loop
LossBreakdown total_loss(double pose, double flow, double loop, const LossWeights& weights);

namespace jacobian {

/// Adjoint of a pose acting on (rho, omega) twists.
Mat6 adjoint(const Pose& p);
/// Left Jacobian of SE(3): exp(xi + d) ~ exp(J_l(xi) d) exp(xi).
Mat6 se3_left(const Twist& xi);
Mat6 se3_left_inverse(const Twist& xi);
/// Right Jacobian, J_r(xi) = J_l(-xi).
Mat6 se3_right(const Twist& xi);

} // namespace jacobian

} // namespace autoloop::losses
