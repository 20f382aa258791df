#pragma once

#include <Eigen/Core>
#include <cmath>

namespace manip {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;

/// Wraps an angle to (-pi, pi].
inline double normalize_angle(double a) {
    a = std::fmod(a + M_PI, 2.0 * M_PI);
    if (a <= 0.0) a += 2.0 * M_PI;
    return a - M_PI;
}

inline Mat2 rotation2(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 r;
    r << c, -s, s, c;
    return r;
}

/// d/dtheta of rotation2(theta).
inline Mat2 rotation2_deriv(double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    Mat2 r;
    r << -s, -c, c, -s;
    return r;
}

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Planar pose (x, y, theta). theta is kept in (-pi, pi].
struct Pose2 {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    Pose2() = default;
    Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(normalize_angle(theta_)) {}

    Vec2 translation() const { return {x, y}; }
    Mat2 rotation() const { return rotation2(theta); }
    Vec3 vec() const { return {x, y, theta}; }

    static Pose2 from_vec(const Vec3& v) { return Pose2(v[0], v[1], v[2]); }

    /// Body-frame point to world frame.
    Vec2 apply(const Vec2& body_point) const { return rotation() * body_point + translation(); }

    /// World-frame point to body frame.
    Vec2 apply_inverse(const Vec2& world_point) const {
        return rotation().transpose() * (world_point - translation());
    }

    Pose2 compose(const Pose2& rhs) const {
        const Vec2 t = apply({rhs.x, rhs.y});
        return Pose2(t.x(), t.y(), theta + rhs.theta);
    }

    Pose2 inverse() const {
        const Vec2 t = -(rotation().transpose() * translation());
        return Pose2(t.x(), t.y(), -theta);
    }

    friend bool operator==(const Pose2&, const Pose2&) = default;
};

}  // namespace manip
