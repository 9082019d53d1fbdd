#include "autoloop/liegroup.hpp"
#include "autoloop/error.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <vector>

namespace autoloop::liegroup {

namespace {

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
    q.normalize();
    if (q.w() < 0.0) {
        q.coeffs() *= -1.0;
    }
    return q;
}

// V^-1 = I - W/2 + c W^2 with c = (1 - (theta/2) cot(theta/2)) / theta^2
double inverse_v_coefficient(double theta) {
    if (theta < small_angle) {
        return 1.0 / 12.0 + theta * theta / 720.0;
    }
    const double half = 0.5 * theta;
    return (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
}

} // namespace

Rotation::Rotation(const Eigen::Quaterniond& q) : q_(canonical(q)) {}

Rotation Rotation::from_near_unit(const Eigen::Quaterniond& q, double tolerance) {
    Rotation r;
    if (std::abs(q.norm() - 1.0) <= tolerance) {
        r.q_ = q;
        if (r.q_.w() < 0.0) {
            r.q_.coeffs() *= -1.0;
        }
    } else {
        r.q_ = canonical(q);
    }
    return r;
}

double Rotation::angle() const {
    return 2.0 * std::atan2(q_.vec().norm(), q_.w());
}

Eigen::Matrix4d Pose::matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.matrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
}

Vec6 Twist::vector() const {
    Vec6 v;
    v << rho, omega;
    return v;
}

Pose compose(const Pose& a, const Pose& b) {
    return {Rotation(a.rotation.quaternion() * b.rotation.quaternion()),
            a.translation + a.rotation.rotate(b.translation)};
}

Pose inverse(const Pose& p) {
    const Eigen::Quaterniond qi = p.rotation.quaternion().conjugate();
    return {Rotation(qi), -(qi * p.translation)};
}

Pose between(const Pose& a, const Pose& b) {
    return compose(inverse(a), b);
}

Mat3 hat(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
         -v.y(), v.x(), 0.0;
    return m;
}

Rotation exp_so3(const Vec3& omega) {
    const double theta = omega.norm();
    double w;
    double s;
    if (theta < small_angle) {
        const double t2 = theta * theta;
        w = 1.0 - t2 / 8.0;
        s = 0.5 - t2 / 48.0;
    } else {
        w = std::cos(0.5 * theta);
        s = std::sin(0.5 * theta) / theta;
    }
    return Rotation(Eigen::Quaterniond(w, s * omega.x(), s * omega.y(), s * omega.z()));
}

Vec3 log_so3(const Rotation& r) {
    const Eigen::Quaterniond& q = r.quaternion();
    const double n = q.vec().norm();
    const double w = q.w();
    if (n < 0.5 * small_angle) {
        // 2 atan(n/w) / n ~ (2/w)(1 - n^2 / (3 w^2))
        return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * q.vec();
    }
    return (2.0 * std::atan2(n, w) / n) * q.vec();
}

Pose exp_se3(const Twist& xi) {
    const double theta = xi.omega.norm();
    const Mat3 w = hat(xi.omega);
    double a;
    double b;
    if (theta < small_angle) {
        const double t2 = theta * theta;
        a = 0.5 - t2 / 24.0;
        b = 1.0 / 6.0 - t2 / 120.0;
    } else {
        const double sh = std::sin(0.5 * theta);
        a = 2.0 * sh * sh / (theta * theta);
        b = (theta - std::sin(theta)) / (theta * theta * theta);
    }
    const Mat3 v = Mat3::Identity() + a * w + b * w * w;
    return {exp_so3(xi.omega), v * xi.rho};
}

Twist log_se3(const Pose& p) {
    const double theta = p.rotation.angle();
    if (theta > std::numbers::pi - near_pi_margin) {
        throw error(error_code::angle_near_pi,
                    "rotation angle " + std::to_string(theta) + " is within 1e-6 of pi");
    }
    const Vec3 omega = log_so3(p.rotation);
    const Mat3 w = hat(omega);
    const Mat3 v_inv = Mat3::Identity() - 0.5 * w + inverse_v_coefficient(theta) * w * w;
    return {v_inv * p.translation, omega};
}

double twist_norm(const Twist& xi) {
    return std::sqrt(xi.rho.squaredNorm() + xi.omega.squaredNorm());
}

StampedPose parse_tum_line(std::string_view line, std::size_t line_number) {
    std::array<double, 8> v{};
    std::size_t count = 0;
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) {
        throw error(error_code::malformed_line,
                    "line " + std::to_string(line_number) + ": " + why);
    };
    while (pos < line.size()) {
        while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) {
            ++pos;
        }
        if (pos >= line.size()) {
            break;
        }
        std::size_t end = pos;
        while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) {
            ++end;
        }
        if (count == v.size()) {
            fail("expected 8 fields, found more");
        }
        const std::string_view token = line.substr(pos, end - pos);
        const auto res = std::from_chars(token.data(), token.data() + token.size(), v[count]);
        if (res.ec != std::errc() || res.ptr != token.data() + token.size()
            || !std::isfinite(v[count])) {
            fail("non-numeric token '" + std::string(token) + "'");
        }
        ++count;
        pos = end;
    }
    if (count != v.size()) {
        fail("expected 8 fields, found " + std::to_string(count));
    }
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-3) {
        fail("quaternion norm " + std::to_string(q.norm()) + " is not within 1e-3 of 1");
    }
    // 9-digit output keeps the norm within 1e-9, so re-reading our own files is exact.
    return {v[0], Pose{Rotation::from_near_unit(q, 1e-9), Vec3(v[1], v[2], v[3])}};
}

std::string format_tum_line(const StampedPose& sp) {
    const Eigen::Quaterniond& q = sp.pose.rotation.quaternion();
    const Vec3& t = sp.pose.translation;
    // "+ 0.0" folds negative zero so the output is canonical.
    std::array<char, 256> buf{};
    std::snprintf(buf.data(), buf.size(), "%.6f %.9g %.9g %.9g %.9g %.9g %.9g %.9g",
                  sp.timestamp + 0.0, t.x() + 0.0, t.y() + 0.0, t.z() + 0.0, q.x() + 0.0,
                  q.y() + 0.0, q.z() + 0.0, q.w() + 0.0);
    return buf.data();
}

} // namespace autoloop::liegroup
