#include "autoloop/error.hpp"
#include "autoloop/losses.hpp"
#include "doctest.h"
#include "support.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cstring>
#include <functional>
#include <random>

using namespace autoloop;
using namespace autoloop::losses;
using liegroup::compose;
using liegroup::exp_se3;
using liegroup::inverse;
using autoloop::test::random_pose;
using autoloop::test::random_twist;
using autoloop::test::random_vec;
using autoloop::test::relative_error;

namespace {

constexpr double fd_step = 1e-5;

Pose tx(double d) {
    return Pose::from_translation(Vec3(d, 0.0, 0.0));
}

// Central differences of f with respect to right perturbations of every pose.
std::vector<Vec6> numeric_gradient(std::vector<Pose> poses,
                                   const std::function<double(const std::vector<Pose>&)>& f) {
    std::vector<Vec6> g(poses.size(), Vec6::Zero());
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const Pose base = poses[i];
        for (int d = 0; d < 6; ++d) {
            Vec6 e = Vec6::Zero();
            e(d) = fd_step;
            poses[i] = compose(base, exp_se3(Twist::from_vector(e)));
            const double plus = f(poses);
            poses[i] = compose(base, exp_se3(Twist::from_vector(-e)));
            const double minus = f(poses);
            g[i](d) = (plus - minus) / (2.0 * fd_step);
        }
        poses[i] = base;
    }
    return g;
}

Eigen::VectorXd stack(const std::vector<Twist>& g) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(6 * g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        v.segment<6>(static_cast<Eigen::Index>(6 * i)) = g[i].vector();
    }
    return v;
}

Eigen::VectorXd stack(const std::vector<Vec6>& g) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(6 * g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        v.segment<6>(static_cast<Eigen::Index>(6 * i)) = g[i];
    }
    return v;
}

// Straight-line reference for one loop-loss term: 4x4 matrix logarithm, no SE(3) helpers.
double reference_term(const Pose& pred, const Pose& target, double delta) {
    const Eigen::Matrix4d m = pred.matrix().inverse() * target.matrix();
    const Eigen::Matrix4d l = m.log();
    const double n = std::sqrt(l(0, 3) * l(0, 3) + l(1, 3) * l(1, 3) + l(2, 3) * l(2, 3)
                               + l(2, 1) * l(2, 1) + l(0, 2) * l(0, 2) + l(1, 0) * l(1, 0));
    return n <= delta ? 0.5 * n * n : delta * n - 0.5 * delta * delta;
}

std::vector<Pose> perturbed(const std::vector<Pose>& base, std::mt19937_64& rng, double angle,
                            double trans) {
    std::vector<Pose> out;
    for (const auto& p : base) {
        out.push_back(compose(p, exp_se3(random_twist(rng, angle, trans))));
    }
    return out;
}

// Camera trajectory moving forward with landmarks scattered ahead.
struct FlowFixture {
    std::vector<Pose> gt;
    std::vector<Vec3> landmarks;
    std::vector<std::vector<int>> visible;
    std::vector<PairPoints> pairs;
};

FlowFixture make_flow_fixture(std::mt19937_64& rng, int frames, int landmarks) {
    FlowFixture f;
    for (int k = 0; k < frames; ++k) {
        const Twist wiggle(Vec3(0.05 * std::sin(k), 0.02 * k, 0.5 * k),
                           Vec3(0.01 * k, 0.03 * std::cos(k), 0.0));
        f.gt.push_back(exp_se3(wiggle));
    }
    std::uniform_real_distribution<double> ux(-4.0, 4.0);
    std::uniform_real_distribution<double> uz(4.0, 12.0 + 0.5 * frames);
    for (int i = 0; i < landmarks; ++i) {
        const double x = ux(rng);
        const double y = ux(rng);
        const double z = uz(rng);
        f.landmarks.emplace_back(x, y, z);
    }
    f.visible.resize(f.gt.size());
    for (std::size_t k = 0; k < f.gt.size(); ++k) {
        const Pose w2c = inverse(f.gt[k]);
        for (int i = 0; i < landmarks; ++i) {
            const Vec3 c = w2c.transform(f.landmarks[static_cast<std::size_t>(i)]);
            if (c.z() > 1.0 && std::abs(c.x() / c.z()) < 1.0 && std::abs(c.y() / c.z()) < 1.0) {
                f.visible[k].push_back(i);
            }
        }
    }
    f.pairs = make_pair_points(f.gt, f.landmarks, f.visible);
    return f;
}

} // namespace

TEST_CASE("huber examples") {
    const HuberParam one(1.0);
    CHECK(huber(0.0, one) == 0.0);
    CHECK(huber(0.5, one) == 0.125);
    CHECK(huber(2.0, one) == 1.5);
    CHECK(huber_grad(0.5, one) == 0.5);
    CHECK(huber_grad(2.0, one) == 1.0);
    CHECK(huber_grad(-2.0, one) == -1.0);
    CHECK_THROWS_AS(HuberParam(0.0), autoloop::error);
}

TEST_CASE("huber properties") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ud(0.1, 3.0);
    std::uniform_real_distribution<double> ux(-10.0, 10.0);
    for (int i = 0; i < 100; ++i) {
        const HuberParam h(ud(rng));
        const double d = h.delta;
        const double eps = 1e-10;
        CHECK(std::abs(huber(d - eps, h) - huber(d + eps, h)) < 1e-9);
        CHECK(std::abs(huber_grad(d - eps, h) - huber_grad(d + eps, h)) < 1e-9);
        CHECK(std::abs(huber(-d - eps, h) - huber(-d + eps, h)) < 1e-9);

        const double x = ux(rng);
        CHECK(huber(x, h) <= 0.5 * x * x);
        CHECK(huber(x, h) == huber(-x, h));
        CHECK(huber(std::abs(x) + 0.1, h) >= huber(x, h));

        if (std::abs(std::abs(x) - d) > 1e-3) {
            const double fd = (huber(x + 1e-6, h) - huber(x - 1e-6, h)) / 2e-6;
            CHECK(std::abs(fd - huber_grad(x, h)) < 1e-7);
            CHECK(std::abs(fd - huber_grad(x, h)) <= 1e-4 * std::max(std::abs(fd), 1e-8));
        }
    }
}

TEST_CASE("SE(3) left Jacobian inverse matches the BCH expansion") {
    std::mt19937_64 rng(11);
    for (double max_angle : {1e-7, 5e-3, 2e-2, 1.0, 3.0}) {
        for (int i = 0; i < 50; ++i) {
            const Twist xi = random_twist(rng, max_angle, 3.0);
            const Mat6 jl_inv = jacobian::se3_left_inverse(xi);
            CHECK((jacobian::se3_left(xi) * jl_inv - Mat6::Identity()).norm() < 1e-9);
            Mat6 numeric;
            for (int d = 0; d < 6; ++d) {
                Vec6 e = Vec6::Zero();
                e(d) = 1e-6;
                const Vec6 plus =
                    liegroup::log_se3(compose(exp_se3(Twist::from_vector(e)), exp_se3(xi))).vector();
                const Vec6 minus =
                    liegroup::log_se3(compose(exp_se3(Twist::from_vector(-e)), exp_se3(xi))).vector();
                numeric.col(d) = (plus - minus) / 2e-6;
            }
            CAPTURE(max_angle);
            CHECK((numeric - jl_inv).norm() < 1e-6);
        }
    }
}

TEST_CASE("adjoint moves perturbations across poses") {
    std::mt19937_64 rng(12);
    const Pose t = random_pose(rng);
    const Twist xi = random_twist(rng, 1.0, 1.0);
    const Pose lhs = compose(compose(t, exp_se3(xi)), inverse(t));
    const Pose rhs = exp_se3(Twist::from_vector(jacobian::adjoint(t) * xi.vector()));
    CHECK(autoloop::test::pose_gap(lhs, rhs) < 1e-9);
}

TEST_CASE("loop loss examples") {
    const HuberParam one(1.0);
    std::mt19937_64 rng(3);
    std::vector<Pose> preds;
    for (int i = 0; i < 5; ++i) {
        preds.push_back(random_pose(rng));
    }
    std::vector<LoopConstraint> exact = {{1, preds[1]}, {3, preds[3]}};
    CHECK(loop_loss(preds, exact, one).value < 1e-18);
    for (const auto& g : loop_loss_grad(preds, exact, one)) {
        CHECK(g.vector().norm() < 1e-9);
    }

    const std::vector<Pose> single = {tx(1.0)};
    const std::vector<LoopConstraint> target = {{0, Pose::identity()}};
    CHECK(loop_loss(single, target, one).value == 0.5);

    const auto g = loop_loss_grad(single, target, one);
    const Vec6 residual = liegroup::log_se3(inverse(single[0])).vector();
    CHECK(g[0].vector().normalized().dot(-residual.normalized()) == doctest::Approx(1.0));
    CHECK(g[0].vector().norm() == doctest::Approx(1.0).epsilon(1e-4));
    const auto fd = numeric_gradient(single, [&](const std::vector<Pose>& p) {
        return loop_loss(p, target, one).value;
    });
    CHECK(relative_error(g[0].vector(), fd[0]) < 1e-4);

    const auto partial = loop_loss_grad(preds, std::vector<LoopConstraint>{{2, tx(0.3)}}, one);
    CHECK(partial[0].vector() == Vec6::Zero());
    CHECK(partial[4].vector() == Vec6::Zero());
}

TEST_CASE("loop loss with no constraints is flagged zero") {
    const std::vector<Pose> preds = {tx(1.0)};
    const LoopTerm t = loop_loss(preds, {}, HuberParam(1.0));
    CHECK(t.empty);
    CHECK(t.value == 0.0);
    CHECK_THROWS_AS(loop_loss(preds, std::vector<LoopConstraint>{{4, tx(0.0)}}, HuberParam()),
                    autoloop::error);
}

TEST_CASE("loop loss matches the straight-line reference") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Pose> preds;
        std::vector<LoopConstraint> cons;
        for (int i = 0; i < 10; ++i) {
            preds.push_back(random_pose(rng));
        }
        double ref = 0.0;
        for (int i = 0; i < 10; ++i) {
            const auto idx = static_cast<std::size_t>(rng() % preds.size());
            const Pose target = compose(preds[idx], exp_se3(random_twist(rng, 0.3, 0.8)));
            cons.push_back({idx, target});
            ref += reference_term(preds[idx], target, 0.5);
        }
        ref /= 10.0;
        CHECK(loop_loss(preds, cons, HuberParam(0.5)).value == doctest::Approx(ref).epsilon(1e-10));

        auto shuffled = cons;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(loop_loss(preds, shuffled, HuberParam(0.5)).value
              == doctest::Approx(ref).epsilon(1e-12));
    }
}

TEST_CASE("near-pi loop residuals are clamped, not fatal") {
    const std::vector<Pose> preds = {Pose::identity()};
    const Pose flipped{liegroup::exp_so3(Vec3(0, 0, std::numbers::pi)), Vec3::Zero()};
    const std::vector<LoopConstraint> cons = {{0, flipped}};
    const LoopTerm t = loop_loss(preds, cons, HuberParam(1.0));
    CHECK(t.clamped == 1);
    CHECK(t.value == doctest::Approx(huber(std::numbers::pi, HuberParam(1.0))));
    CHECK(loop_loss_grad(preds, cons, HuberParam(1.0))[0].vector() == Vec6::Zero());
}

TEST_CASE("loop loss gradient matches finite differences") {
    std::mt19937_64 rng(31);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Pose> preds;
        for (int i = 0; i < 6; ++i) {
            preds.push_back(random_pose(rng, 3.0));
        }
        std::vector<LoopConstraint> cons;
        for (int i = 0; i < 5; ++i) {
            const auto idx = static_cast<std::size_t>(rng() % preds.size());
            cons.push_back({idx, compose(preds[idx], exp_se3(random_twist(rng, 2.0, 1.5)))});
        }
        const HuberParam h(trial % 2 == 0 ? 1.0 : 0.3);
        const auto fd = numeric_gradient(preds, [&](const std::vector<Pose>& p) {
            return loop_loss(p, cons, h).value;
        });
        worst = std::max(worst, relative_error(stack(loop_loss_grad(preds, cons, h)), stack(fd)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("pose loss examples") {
    const HuberParam one(1.0);
    std::mt19937_64 rng(41);
    std::vector<Pose> gt;
    for (int i = 0; i < 8; ++i) {
        gt.push_back(random_pose(rng));
    }
    CHECK(pose_loss(gt, gt, one) < 1e-20);

    const Pose global = random_pose(rng);
    std::vector<Pose> moved;
    for (const auto& p : gt) {
        moved.push_back(compose(global, p));
    }
    CHECK(pose_loss(moved, gt, one) < 1e-18);

    const std::vector<Pose> two_gt = {Pose::identity(), tx(1.0)};
    const std::vector<Pose> two_pred = {Pose::identity(), tx(1.2)};
    CHECK(pose_loss(two_pred, two_gt, one) == doctest::Approx(0.02).epsilon(1e-12));

    CHECK_THROWS_AS(pose_loss(two_pred, gt, one), autoloop::error);
    const std::vector<Pose> lone = {Pose::identity()};
    CHECK_THROWS_AS(pose_loss(lone, lone, one), autoloop::error);
}

TEST_CASE("pose loss gauge invariance") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Pose> gt;
        for (int i = 0; i < 6; ++i) {
            gt.push_back(random_pose(rng));
        }
        const auto pred = perturbed(gt, rng, 0.5, 0.8);
        const Pose g = random_pose(rng);
        std::vector<Pose> pred_g;
        std::vector<Pose> gt_g;
        for (std::size_t i = 0; i < gt.size(); ++i) {
            pred_g.push_back(compose(g, pred[i]));
            gt_g.push_back(compose(g, gt[i]));
        }
        CHECK(std::abs(pose_loss(pred, gt, HuberParam()) - pose_loss(pred_g, gt_g, HuberParam()))
              < 1e-9);
    }
}

TEST_CASE("pose loss gradient matches finite differences") {
    std::mt19937_64 rng(43);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Pose> gt;
        for (int i = 0; i < 5; ++i) {
            gt.push_back(random_pose(rng, 2.0));
        }
        const auto pred = perturbed(gt, rng, 1.0, 1.0);
        const HuberParam h(trial % 2 == 0 ? 1.0 : 0.25);
        const auto fd = numeric_gradient(pred, [&](const std::vector<Pose>& p) {
            return pose_loss(p, gt, h);
        });
        worst = std::max(worst, relative_error(stack(pose_loss_grad(pred, gt, h)), stack(fd)));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("flow loss") {
    std::mt19937_64 rng(51);
    const FlowFixture f = make_flow_fixture(rng, 6, 400);
    for (const auto& p : f.pairs) {
        REQUIRE(!p.empty());
    }

    SUBCASE("zero at ground truth") {
        CHECK(flow_loss(f.gt, f.gt, f.pairs) == 0.0);
        for (const auto& g : flow_loss_grad(f.gt, f.gt, f.pairs)) {
            CHECK(g.vector().norm() == 0.0);
        }
    }

    SUBCASE("gradient matches finite differences") {
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const auto pred = perturbed(f.gt, rng, 0.05, 0.1);
            const auto fd = numeric_gradient(pred, [&](const std::vector<Pose>& p) {
                return flow_loss(p, f.gt, f.pairs);
            });
            worst = std::max(worst, relative_error(stack(flow_loss_grad(pred, f.gt, f.pairs)),
                                                   stack(fd)));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("no co-visible landmarks") {
        std::vector<PairPoints> empty(f.pairs.size());
        CHECK_THROWS_AS(flow_loss(f.gt, f.gt, empty), autoloop::error);
    }
}

TEST_CASE("flow loss mean is stable when landmarks double") {
    std::mt19937_64 rng(52);
    const FlowFixture small = make_flow_fixture(rng, 5, 600);
    const FlowFixture large = make_flow_fixture(rng, 5, 1200);
    std::mt19937_64 prng(53);
    const auto pred = perturbed(small.gt, prng, 0.02, 0.05);

    // Per-term values give the standard error of each mean.
    auto stats = [&](const FlowFixture& f) {
        std::vector<double> terms;
        for (std::size_t k = 0; k < f.pairs.size(); ++k) {
            const Pose pr = liegroup::between(pred[k + 1], pred[k]);
            const Pose gr = liegroup::between(f.gt[k + 1], f.gt[k]);
            for (const auto& c : f.pairs[k]) {
                const Vec3 a = pr.transform(c);
                const Vec3 b = gr.transform(c);
                terms.push_back((a.head<2>() / a.z() - b.head<2>() / b.z()).squaredNorm());
            }
        }
        double mean = 0.0;
        for (double t : terms) mean += t;
        mean /= static_cast<double>(terms.size());
        double var = 0.0;
        for (double t : terms) var += (t - mean) * (t - mean);
        var /= static_cast<double>(terms.size() - 1);
        return std::pair{mean, std::sqrt(var / static_cast<double>(terms.size()))};
    };
    const auto [m_small, se_small] = stats(small);
    const auto [m_large, se_large] = stats(large);
    CHECK(flow_loss(pred, small.gt, small.pairs) == doctest::Approx(m_small).epsilon(1e-12));
    CHECK(flow_loss(pred, large.gt, large.pairs) == doctest::Approx(m_large).epsilon(1e-12));
    CHECK(std::abs(m_small - m_large) < 4.0 * std::hypot(se_small, se_large));
}

TEST_CASE("total loss") {
    const LossBreakdown baseline = total_loss(1.0, 1.0, 1.0, {10.0, 0.1, 0.0});
    CHECK(baseline.total == doctest::Approx(10.1).epsilon(1e-15));
    CHECK(total_loss(1.0, 1.0, 1.0, {10.0, 0.1, 0.62}).total
          == doctest::Approx(10.72).epsilon(1e-15));
    CHECK(total_loss(0.0, 0.0, 0.0, {10.0, 0.1, 0.62}).total == 0.0);

    // w_loop = 0 reduces bit for bit to s_p * pose + s_f * flow.
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (int i = 0; i < 1000; ++i) {
        const double p = u(rng), f = u(rng), l = u(rng);
        const double by_hand = 10.0 * p + 0.1 * f;
        const double combined = total_loss(p, f, l, {10.0, 0.1, 0.0}).total;
        CHECK(std::memcmp(&by_hand, &combined, sizeof(double)) == 0);

        const LossWeights w{10.0, 0.1, 0.62};
        const double a = total_loss(p, f, l, w).total + total_loss(2 * p, 0, 0, w).total;
        CHECK(total_loss(3 * p, f, l, w).total == doctest::Approx(a).epsilon(1e-12));
    }
    CHECK_THROWS_AS((LossWeights{-1.0, 0.1, 0.0}.validate()), autoloop::error);
}
