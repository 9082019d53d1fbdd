#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <string>
#include <string_view>
#include <utility>

namespace autoloop::liegroup {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Below this rotation angle exp/log switch to second-order Taylor series.
inline constexpr double small_angle = 1e-6;
/// log_se3 refuses rotations whose angle is within this margin of pi.
inline constexpr double near_pi_margin = 1e-6;

/// Unit quaternion, renormalized on construction with canonical sign w >= 0.
class Rotation {
public:
    Rotation() : q_(Eigen::Quaterniond::Identity()) {}
    explicit Rotation(const Eigen::Quaterniond& q);
    Rotation(double w, double x, double y, double z) : Rotation(Eigen::Quaterniond(w, x, y, z)) {}

    static Rotation from_matrix(const Mat3& m) { return Rotation(Eigen::Quaterniond(m)); }
    /// Keeps q as given when its norm is already within `tolerance` of 1, otherwise renormalizes.
    static Rotation from_near_unit(const Eigen::Quaterniond& q, double tolerance);

    const Eigen::Quaterniond& quaternion() const { return q_; }
    Mat3 matrix() const { return q_.toRotationMatrix(); }
    Vec3 rotate(const Vec3& v) const { return q_ * v; }
    /// Rotation angle in [0, pi].
    double angle() const;

private:
    Eigen::Quaterniond q_;
};

/// Rigid transform x -> R x + t.
struct Pose {
    Rotation rotation;
    Vec3 translation = Vec3::Zero();

    static Pose identity() { return {}; }
    static Pose from_translation(const Vec3& t) { return {Rotation(), t}; }

    Vec3 transform(const Vec3& p) const { return rotation.rotate(p) + translation; }
    Eigen::Matrix4d matrix() const;
};

/// Element of se(3): translational part first, rotational part second.
struct Twist {
    Vec3 rho = Vec3::Zero();
    Vec3 omega = Vec3::Zero();

    Twist() = default;
    Twist(const Vec3& rho_, const Vec3& omega_) : rho(rho_), omega(omega_) {}
    static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
    Vec6 vector() const;
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
/// a^-1 * b
Pose between(const Pose& a, const Pose& b);

Pose exp_se3(const Twist& xi);
/// Throws error(angle_near_pi) when the rotation angle is within near_pi_margin of pi.
Twist log_se3(const Pose& p);

double twist_norm(const Twist& xi);

Mat3 hat(const Vec3& v);
Rotation exp_so3(const Vec3& omega);
/// Unchecked rotation log; well defined up to and including angle pi.
Vec3 log_so3(const Rotation& r);

/// Row of a TUM trajectory file.
struct StampedPose {
    double timestamp = 0.0;
    Pose pose;
};

/// Parses `timestamp tx ty tz qx qy qz qw`. `line_number` is only used for diagnostics.
StampedPose parse_tum_line(std::string_view line, std::size_t line_number = 0);
/// Inverse of parse_tum_line, 9 significant digits per field.
std::string format_tum_line(const StampedPose& sp);

} // namespace autoloop::liegroup
