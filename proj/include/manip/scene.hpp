#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "manip/pose.hpp"

namespace manip {

/// One straight contact surface of the object, stored in body frame.
///
/// The local frame maps (normal, tangent) coordinates to body coordinates:
/// the first axis is the outward normal, the second runs from `a` to `b`.
/// Construction re-orders (a, b) so that this frame is right-handed.
struct Surface {
    int id = 0;            // 0-based surface index
    Vec2 a = Vec2::Zero();
    Vec2 b = Vec2::Zero();
    Vec2 outward_normal = Vec2::Zero();
    double length = 0.0;

    Vec2 tangent() const { return (b - a) / length; }
};

struct ObjectModel {
    double mass = 0.0;                  // kg
    std::vector<Vec2> vertices;         // body frame, CCW simple polygon
    std::vector<Surface> surfaces;
    Vec2 com = Vec2::Zero();            // body frame
    std::vector<double> mu_env;         // per-vertex environment friction

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_surfaces() const { return static_cast<int>(surfaces.size()); }
};

/// Linear predicate on the object pose that forbids robot contact.
/// Contact is forbidden at step t when coeffs . q_t >= rhs, or when t is
/// listed explicitly in steps.
struct WorkspaceGate {
    Vec3 coeffs = Vec3::Zero();
    double rhs = 0.0;
    std::set<int> steps;

    bool forbids(const Vec3& pose, int t) const {
        if (steps.count(t) > 0) return true;
        if (coeffs.isZero()) return false;
        return coeffs.dot(pose) >= rhs;
    }
};

struct RobotSpec {
    int id = 0;
    double mu = 0.5;
    Vec2 vel_lb = Vec2(-1.0, -1.0);     // m/s
    Vec2 vel_ub = Vec2(1.0, 1.0);
    std::vector<WorkspaceGate> workspace_gates;
};

struct Halfspace {
    Vec2 normal = Vec2::Zero();         // unit; free space is {x : n.x >= d}
    double offset = 0.0;

    Vec2 tangent() const { return {-normal.y(), normal.x()}; }
    double distance(const Vec2& p) const { return normal.dot(p) - offset; }
};

struct EnvModel {
    std::vector<Halfspace> halfspaces;
};

/// Per-step box bounds on the pose and pose rate.
struct PoseBounds {
    Vec3 lower = Vec3(-1.0, -1.0, -2.0 * M_PI);
    Vec3 upper = Vec3(1.0, 1.0, 2.0 * M_PI);
    Vec3 rate_lower = Vec3(-1.0, -1.0, -4.0);
    Vec3 rate_upper = Vec3(1.0, 1.0, 4.0);
};

struct Scenario {
    ObjectModel object;
    std::vector<RobotSpec> robots;
    EnvModel env;
    Pose2 q_start;
    Pose2 q_goal;
    int horizon = 2;                    // T steps (poses run t = 0..T)
    double step = 0.1;                  // h, seconds
    Vec2 gravity = Vec2(0.0, -9.81);
    std::vector<PoseBounds> pose_bounds;  // size horizon + 1

    int num_robots() const { return static_cast<int>(robots.size()); }

    const PoseBounds& bounds_at(int t) const { return pose_bounds.at(static_cast<size_t>(t)); }
};

/// Validates invariants and fills defaults (surfaces from polygon edges,
/// per-step bounds, pinned start/goal bounds). Throws std::invalid_argument.
void finalize_scenario(Scenario& s, bool pin_endpoints = true);

/// Builds surfaces from the polygon edges of a CCW vertex list.
std::vector<Surface> surfaces_from_polygon(const std::vector<Vec2>& vertices);

/// Returns true if `vertices` form a simple (non-self-intersecting) polygon
/// and `point` lies strictly inside it.
bool polygon_contains(const std::vector<Vec2>& vertices, const Vec2& point);
bool polygon_is_simple(const std::vector<Vec2>& vertices);
double polygon_signed_area(const std::vector<Vec2>& vertices);

struct SurfaceFrame {
    Mat2 rotation;   // maps local (normal, tangent) coordinates to world
    Vec2 origin;     // world position of endpoint a
};

/// World-frame contact frame of a surface at object pose q. The rotation is
/// orthonormal with determinant +1; its first column is the world direction
/// of the outward normal, its second the a->b tangent.
SurfaceFrame surface_frame(const Surface& surface, const Pose2& q);

/// World position of vertex v at pose q. Throws std::out_of_range.
Vec2 vertex_world(const ObjectModel& object, int v, const Pose2& q);

/// Per-vertex signed distance to the environment: min over halfspaces of
/// n . vertex_world - d. Negative means penetration.
std::vector<double> sdf(const Scenario& scenario, const Pose2& q);

/// Index of the halfspace attaining the minimum distance for vertex v.
int closest_halfspace(const Scenario& scenario, const Pose2& q, int v);

}  // namespace manip
