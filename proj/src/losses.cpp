#include "autoloop/losses.hpp"
#include "autoloop/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace autoloop::losses {

using liegroup::between;
using liegroup::compose;
using liegroup::hat;
using liegroup::inverse;
using liegroup::log_se3;
using liegroup::twist_norm;

namespace jacobian {

namespace {

constexpr double series_angle = 1e-2;

struct So3Coefficients {
    double a;      // (1 - cos t) / t^2
    double b;      // (t - sin t) / t^3
    double c;      // (1 - (t/2) cot(t/2)) / t^2
    double q2;     // (t^2 + 2 cos t - 2) / (2 t^4)
    double q3;     // (2 t - 3 sin t + t cos t) / (2 t^5)
};

So3Coefficients coefficients(double theta) {
    const double t2 = theta * theta;
    if (theta < series_angle) {
        const double t4 = t2 * t2;
        return {0.5 - t2 / 24.0 + t4 / 720.0,
                1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
                1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0,
                1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
                1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0};
    }
    const double s = std::sin(theta);
    const double co = std::cos(theta);
    const double half = 0.5 * theta;
    const double sh = std::sin(half);
    return {2.0 * sh * sh / t2,
            (theta - s) / (t2 * theta),
            (1.0 - half * std::cos(half) / sh) / t2,
            (t2 + 2.0 * co - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * co) / (2.0 * t2 * t2 * theta)};
}

// Coupling block of the SE(3) left Jacobian.
Mat3 coupling(const Vec3& rho, const Vec3& phi, const So3Coefficients& k) {
    const Mat3 r = hat(rho);
    const Mat3 p = hat(phi);
    const Mat3 pr = p * r;
    const Mat3 rp = r * p;
    const Mat3 prp = pr * p;
    return 0.5 * r + k.b * (pr + rp + prp) + k.q2 * (p * pr + rp * p - 3.0 * prp)
           + k.q3 * (prp * p + p * prp);
}

} // namespace

Mat6 adjoint(const Pose& p) {
    const Mat3 r = p.rotation.matrix();
    Mat6 ad = Mat6::Zero();
    ad.topLeftCorner<3, 3>() = r;
    ad.topRightCorner<3, 3>() = hat(p.translation) * r;
    ad.bottomRightCorner<3, 3>() = r;
    return ad;
}

Mat6 se3_left(const Twist& xi) {
    const auto k = coefficients(xi.omega.norm());
    const Mat3 w = hat(xi.omega);
    const Mat3 j = Mat3::Identity() + k.a * w + k.b * w * w;
    Mat6 out = Mat6::Zero();
    out.topLeftCorner<3, 3>() = j;
    out.bottomRightCorner<3, 3>() = j;
    out.topRightCorner<3, 3>() = coupling(xi.rho, xi.omega, k);
    return out;
}

Mat6 se3_left_inverse(const Twist& xi) {
    const auto k = coefficients(xi.omega.norm());
    const Mat3 w = hat(xi.omega);
    const Mat3 j_inv = Mat3::Identity() - 0.5 * w + k.c * w * w;
    Mat6 out = Mat6::Zero();
    out.topLeftCorner<3, 3>() = j_inv;
    out.bottomRightCorner<3, 3>() = j_inv;
    out.topRightCorner<3, 3>() = -j_inv * coupling(xi.rho, xi.omega, k) * j_inv;
    return out;
}

Mat6 se3_right(const Twist& xi) {
    return se3_left(Twist(-xi.rho, -xi.omega));
}

} // namespace jacobian

void LossWeights::validate() const {
    for (double w : {pose_scale, flow_scale, loop_weight}) {
        if (!(w >= 0.0) || !std::isfinite(w)) {
            throw error(error_code::invalid_spec, "loss weights must be finite and nonnegative");
        }
    }
}

HuberParam::HuberParam(double d) : delta(d) {
    if (!(d > 0.0)) {
        throw error(error_code::invalid_spec, "huber delta must be positive");
    }
}

double huber(double x, HuberParam delta) {
    const double ax = std::abs(x);
    if (ax <= delta.delta) {
        return 0.5 * x * x;
    }
    return delta.delta * ax - 0.5 * delta.delta * delta.delta;
}

double huber_grad(double x, HuberParam delta) {
    if (std::abs(x) <= delta.delta) {
        return x;
    }
    return x > 0.0 ? delta.delta : -delta.delta;
}

namespace {

// h(|r|) and the factor h'(|r|)/|r| that maps the residual twist to d h / d r.
struct Penalty {
    double value = 0.0;
    double scale = 0.0;
    Vec6 residual = Vec6::Zero();
    bool clamped = false;
};

Penalty penalize(const Pose& error_pose, HuberParam delta) {
    Penalty p;
    try {
        const Twist r = log_se3(error_pose);
        const double n = twist_norm(r);
        p.value = huber(n, delta);
        p.scale = n <= delta.delta ? 1.0 : delta.delta / n;
        p.residual = r.vector();
    } catch (const error& e) {
        if (e.code() != error_code::angle_near_pi) {
            throw;
        }
        p.value = huber(std::numbers::pi, delta);
        p.clamped = true;
    }
    return p;
}

void check_indices(std::span<const Pose> predictions, std::span<const LoopConstraint> constraints) {
    for (const auto& c : constraints) {
        if (c.pred_index >= predictions.size()) {
            throw error(error_code::dimension_mismatch,
                        "loop constraint index " + std::to_string(c.pred_index)
                            + " outside prediction window of " + std::to_string(predictions.size()));
        }
    }
}

void check_lengths(std::span<const Pose> predictions, std::span<const Pose> ground_truth) {
    if (predictions.size() != ground_truth.size() || predictions.size() < 2) {
        throw error(error_code::length_mismatch,
                    "need equal lengths >= 2, got " + std::to_string(predictions.size()) + " and "
                        + std::to_string(ground_truth.size()));
    }
}

} // namespace

LoopTerm loop_loss(std::span<const Pose> predictions, std::span<const LoopConstraint> constraints,
                   HuberParam delta) {
    LoopTerm term;
    if (constraints.empty()) {
        term.empty = true;
        return term;
    }
    check_indices(predictions, constraints);
    double sum = 0.0;
    for (const auto& c : constraints) {
        const Penalty p = penalize(between(predictions[c.pred_index], c.target_pose), delta);
        sum += p.value;
        term.clamped += p.clamped ? 1 : 0;
    }
    if (term.clamped > 0) {
        spdlog::warn("loop loss: {} residual(s) near a rotation of pi were clamped", term.clamped);
    }
    term.value = sum / static_cast<double>(constraints.size());
    return term;
}

std::vector<Twist> loop_loss_grad(std::span<const Pose> predictions,
                                  std::span<const LoopConstraint> constraints, HuberParam delta) {
    std::vector<Vec6> grad(predictions.size(), Vec6::Zero());
    if (!constraints.empty()) {
        check_indices(predictions, constraints);
        const double inv_n = 1.0 / static_cast<double>(constraints.size());
        for (const auto& c : constraints) {
            const Penalty p = penalize(between(predictions[c.pred_index], c.target_pose), delta);
            if (p.clamped) {
                continue;
            }
            // T_i <- T_i exp(eps) gives r <- log(exp(-eps) exp(r)) ~ r - J_l^-1(r) eps
            const Mat6 jl_inv = jacobian::se3_left_inverse(Twist::from_vector(p.residual));
            grad[c.pred_index] -= inv_n * p.scale * (jl_inv.transpose() * p.residual);
        }
    }
    std::vector<Twist> out;
    out.reserve(grad.size());
    for (const auto& g : grad) {
        out.push_back(Twist::from_vector(g));
    }
    return out;
}

double pose_loss(std::span<const Pose> predictions, std::span<const Pose> ground_truth,
                 HuberParam delta) {
    check_lengths(predictions, ground_truth);
    double sum = 0.0;
    std::size_t clamped = 0;
    for (std::size_t k = 0; k + 1 < predictions.size(); ++k) {
        const Pose pred_rel = between(predictions[k], predictions[k + 1]);
        const Pose gt_rel = between(ground_truth[k], ground_truth[k + 1]);
        const Penalty p = penalize(between(pred_rel, gt_rel), delta);
        sum += p.value;
        clamped += p.clamped ? 1 : 0;
    }
    if (clamped > 0) {
        spdlog::warn("pose loss: {} residual(s) near a rotation of pi were clamped", clamped);
    }
    return sum / static_cast<double>(predictions.size() - 1);
}

std::vector<Twist> pose_loss_grad(std::span<const Pose> predictions,
                                  std::span<const Pose> ground_truth, HuberParam delta) {
    check_lengths(predictions, ground_truth);
    std::vector<Vec6> grad(predictions.size(), Vec6::Zero());
    const double inv_n = 1.0 / static_cast<double>(predictions.size() - 1);
    for (std::size_t k = 0; k + 1 < predictions.size(); ++k) {
        const Pose pred_rel = between(predictions[k], predictions[k + 1]);
        const Pose gt_rel = between(ground_truth[k], ground_truth[k + 1]);
        const Penalty p = penalize(between(pred_rel, gt_rel), delta);
        if (p.clamped) {
            continue;
        }
        const Twist r = Twist::from_vector(p.residual);
        const Vec6 dh = inv_n * p.scale * p.residual;
        // E = P_{k+1}^-1 P_k D, D = gt_rel.
        // P_k <- P_k exp(eps): E <- E exp(Ad(D^-1) eps), dr = J_r^-1(r) Ad(D^-1) eps
        // P_{k+1} <- P_{k+1} exp(eps): E <- exp(-eps) E, dr = -J_l^-1(r) eps
        const Mat6 jr_inv = jacobian::se3_left_inverse(Twist(-r.rho, -r.omega));
        const Mat6 jl_inv = jacobian::se3_left_inverse(r);
        const Mat6 ad = jacobian::adjoint(inverse(gt_rel));
        grad[k] += (jr_inv * ad).transpose() * dh;
        grad[k + 1] -= jl_inv.transpose() * dh;
    }
    std::vector<Twist> out;
    out.reserve(grad.size());
    for (const auto& g : grad) {
        out.push_back(Twist::from_vector(g));
    }
    return out;
}

std::vector<PairPoints> make_pair_points(std::span<const Pose> ground_truth,
                                         std::span<const Vec3> landmarks,
                                         std::span<const std::vector<int>> visible) {
    if (visible.size() != ground_truth.size()) {
        throw error(error_code::length_mismatch, "visibility lists must match frame count");
    }
    std::vector<PairPoints> out;
    if (ground_truth.size() < 2) {
        return out;
    }
    out.resize(ground_truth.size() - 1);
    std::vector<int> common;
    for (std::size_t k = 0; k + 1 < ground_truth.size(); ++k) {
        common.clear();
        std::set_intersection(visible[k].begin(), visible[k].end(), visible[k + 1].begin(),
                              visible[k + 1].end(), std::back_inserter(common));
        const Pose world_to_cam = inverse(ground_truth[k]);
        out[k].reserve(common.size());
        for (int id : common) {
            out[k].push_back(world_to_cam.transform(landmarks[static_cast<std::size_t>(id)]));
        }
    }
    return out;
}

namespace {

constexpr double min_depth = 1e-6;

struct FlowTerms {
    double sum = 0.0;
    std::size_t count = 0;
};

void check_flow_inputs(std::span<const Pose> predictions, std::span<const Pose> ground_truth,
                       std::span<const PairPoints> pair_points) {
    check_lengths(predictions, ground_truth);
    if (pair_points.size() + 1 != predictions.size()) {
        throw error(error_code::length_mismatch, "flow loss needs one point set per frame pair");
    }
}

// Calls fn(k, c, p_pred, residual) for every usable term.
template <typename Fn>
std::size_t for_each_flow_term(std::span<const Pose> predictions,
                               std::span<const Pose> ground_truth,
                               std::span<const PairPoints> pair_points, Fn&& fn) {
    std::size_t count = 0;
    for (std::size_t k = 0; k < pair_points.size(); ++k) {
        const Pose pred_rel = between(predictions[k + 1], predictions[k]);
        const Pose gt_rel = between(ground_truth[k + 1], ground_truth[k]);
        for (const Vec3& c : pair_points[k]) {
            const Vec3 pp = pred_rel.transform(c);
            const Vec3 pg = gt_rel.transform(c);
            if (pp.z() < min_depth || pg.z() < min_depth) {
                continue;
            }
            const Eigen::Vector2d residual = pp.head<2>() / pp.z() - pg.head<2>() / pg.z();
            fn(k, c, pp, pred_rel, residual);
            ++count;
        }
    }
    return count;
}

} // namespace

double flow_loss(std::span<const Pose> predictions, std::span<const Pose> ground_truth,
                 std::span<const PairPoints> pair_points) {
    check_flow_inputs(predictions, ground_truth, pair_points);
    double sum = 0.0;
    const std::size_t count = for_each_flow_term(
        predictions, ground_truth, pair_points,
        [&](std::size_t, const Vec3&, const Vec3&, const Pose&, const Eigen::Vector2d& r) {
            sum += r.squaredNorm();
        });
    if (count == 0) {
        throw error(error_code::no_visible_landmarks, "no co-visible landmarks in any frame pair");
    }
    return sum / static_cast<double>(count);
}

std::vector<Twist> flow_loss_grad(std::span<const Pose> predictions,
                                  std::span<const Pose> ground_truth,
                                  std::span<const PairPoints> pair_points) {
    check_flow_inputs(predictions, ground_truth, pair_points);
    std::vector<Vec6> grad(predictions.size(), Vec6::Zero());
    const std::size_t count = for_each_flow_term(
        predictions, ground_truth, pair_points,
        [&](std::size_t k, const Vec3& c, const Vec3& p, const Pose& rel,
            const Eigen::Vector2d& r) {
            const double iz = 1.0 / p.z();
            Eigen::Matrix<double, 2, 3> dproj;
            dproj << iz, 0.0, -p.x() * iz * iz,
                     0.0, iz, -p.y() * iz * iz;
            const Eigen::Matrix<double, 3, 1> dl = dproj.transpose() * (2.0 * r);
            // P_k <- P_k exp(eps): p <- p + R_rel (eps_rho - c^ eps_omega)
            const Mat3 rr = rel.rotation.matrix();
            grad[k].head<3>() += rr.transpose() * dl;
            grad[k].tail<3>() += (rr * hat(c)).transpose() * -dl;
            // P_{k+1} <- P_{k+1} exp(eps): p <- p - eps_rho + p^ eps_omega
            grad[k + 1].head<3>() -= dl;
            grad[k + 1].tail<3>() += hat(p).transpose() * dl;
        });
    if (count == 0) {
        throw error(error_code::no_visible_landmarks, "no co-visible landmarks in any frame pair");
    }
    const double inv = 1.0 / static_cast<double>(count);
    std::vector<Twist> out;
    out.reserve(grad.size());
    for (const auto& g : grad) {
        out.push_back(Twist::from_vector(inv * g));
    }
    return out;
}

LossBreakdown total_loss(double pose, double flow, double loop, const LossWeights& weights) {
    LossBreakdown b{pose, flow, loop, 0.0};
    b.total = weights.flow_scale * flow + weights.pose_scale * pose + weights.loop_weight * loop;
    return b;
}

} // namespace autoloop::losses
