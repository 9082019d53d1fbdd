#pragma once

#include "autoloop/liegroup.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <numbers>
#include <random>

namespace autoloop::test {

using liegroup::Pose;
using liegroup::Twist;
using liegroup::Vec3;

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    const double x = u(rng);
    const double y = u(rng);
    const double z = u(rng);
    return {x, y, z};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        const double x = n(rng);
        const double y = n(rng);
        const double z = n(rng);
        v = Vec3(x, y, z);
    } while (v.norm() < 1e-9);
    return v.normalized();
}

/// Twist with rotation angle uniform in [0, max_angle].
inline Twist random_twist(std::mt19937_64& rng, double max_angle, double trans_scale) {
    std::uniform_real_distribution<double> angle(0.0, max_angle);
    const Vec3 rho = random_vec(rng, trans_scale);
    const double a = angle(rng);
    return {rho, a * random_unit(rng)};
}

inline Pose random_pose(std::mt19937_64& rng, double trans_scale = 5.0) {
    return liegroup::exp_se3(random_twist(rng, std::numbers::pi - 0.1, trans_scale));
}

/// Translation norm plus rotation angle of a^-1 b.
inline double pose_gap(const Pose& a, const Pose& b) {
    const Pose d = liegroup::between(a, b);
    return d.translation.norm() + d.rotation.angle();
}

/// |a - b| / max(|b|, floor)
template <typename V>
double relative_error(const V& a, const V& b, double floor = 1e-8) {
    return (a - b).norm() / std::max(b.norm(), floor);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("autoloop_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace autoloop::test
