#include "manip/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace manip {

namespace {

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
    const auto orient = [](const Vec2& a, const Vec2& b, const Vec2& c) {
        return cross2(b - a, c - a);
    };
    const double d1 = orient(q1, q2, p1);
    const double d2 = orient(q1, q2, p2);
    const double d3 = orient(p1, p2, q1);
    const double d4 = orient(p1, p2, q2);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
           ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

double polygon_signed_area(const std::vector<Vec2>& v) {
    double acc = 0.0;
    const size_t n = v.size();
    for (size_t i = 0; i < n; ++i) acc += cross2(v[i], v[(i + 1) % n]);
    return 0.5 * acc;
}

bool polygon_is_simple(const std::vector<Vec2>& v) {
    const size_t n = v.size();
    if (n < 3) return false;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            // Skip adjacent edges (they share an endpoint).
            if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
            if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])) return false;
        }
    }
    return true;
}

bool polygon_contains(const std::vector<Vec2>& v, const Vec2& p) {
    bool inside = false;
    const size_t n = v.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        const bool crosses = (v[i].y() > p.y()) != (v[j].y() > p.y());
        if (crosses) {
            const double x_at =
                v[j].x() + (v[i].x() - v[j].x()) * (p.y() - v[j].y()) / (v[i].y() - v[j].y());
            if (p.x() < x_at) inside = !inside;
        }
    }
    return inside;
}

std::vector<Surface> surfaces_from_polygon(const std::vector<Vec2>& vertices) {
    std::vector<Surface> out;
    const size_t n = vertices.size();
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Surface s;
        s.id = static_cast<int>(i);
        s.a = vertices[i];
        s.b = vertices[(i + 1) % n];
        const Vec2 d = s.b - s.a;
        s.length = d.norm();
        const Vec2 t = d / s.length;
        s.outward_normal = Vec2(t.y(), -t.x());  // CCW polygon: right of travel
        out.push_back(s);
    }
    return out;
}

void finalize_scenario(Scenario& s, bool pin_endpoints) {
    auto& obj = s.object;
    if (obj.mass <= 0.0) throw std::invalid_argument("object mass must be positive");
    if (obj.num_vertices() < 3) throw std::invalid_argument("object needs at least 3 vertices");
    if (!polygon_is_simple(obj.vertices)) throw std::invalid_argument("object polygon is not simple");
    if (polygon_signed_area(obj.vertices) < 0.0)
        throw std::invalid_argument("object polygon must be CCW");
    if (!polygon_contains(obj.vertices, obj.com))
        throw std::invalid_argument("center of mass must lie inside the polygon");

    if (obj.surfaces.empty()) obj.surfaces = surfaces_from_polygon(obj.vertices);
    for (size_t i = 0; i < obj.surfaces.size(); ++i) {
        Surface& p = obj.surfaces[i];
        p.id = static_cast<int>(i);
        p.length = (p.b - p.a).norm();
        if (p.length <= 0.0) throw std::invalid_argument("surface has zero length");
        if (p.outward_normal.isZero()) {
            const Vec2 t = (p.b - p.a) / p.length;
            p.outward_normal = Vec2(t.y(), -t.x());
        }
        p.outward_normal.normalize();
        if (std::abs(p.outward_normal.dot(p.b - p.a)) > 1e-9 * p.length)
            throw std::invalid_argument("surface normal must be perpendicular to the segment");
        // Keep the (normal, tangent) frame right-handed; swap endpoints if not.
        if (cross2(p.outward_normal, (p.b - p.a) / p.length) < 0.0) std::swap(p.a, p.b);
    }

    if (obj.mu_env.empty()) obj.mu_env.assign(static_cast<size_t>(obj.num_vertices()), 0.5);
    if (static_cast<int>(obj.mu_env.size()) != obj.num_vertices())
        throw std::invalid_argument("mu_env size must match vertex count");
    for (double mu : obj.mu_env)
        if (mu < 0.0) throw std::invalid_argument("mu_env must be nonnegative");

    for (size_t i = 0; i < s.robots.size(); ++i) {
        RobotSpec& r = s.robots[i];
        r.id = static_cast<int>(i);
        if (r.mu < 0.0) throw std::invalid_argument("robot friction must be nonnegative");
        if ((r.vel_lb.array() >= r.vel_ub.array()).any())
            throw std::invalid_argument("robot velocity bounds must satisfy lb < ub");
    }

    for (auto& hs : s.env.halfspaces) {
        const double n = hs.normal.norm();
        if (n <= 0.0) throw std::invalid_argument("environment halfspace needs a nonzero normal");
        hs.normal /= n;
        hs.offset /= n;
    }

    if (s.horizon < 2) throw std::invalid_argument("horizon must be at least 2");
    if (s.step <= 0.0) throw std::invalid_argument("step size must be positive");

    if (s.pose_bounds.empty()) s.pose_bounds.assign(static_cast<size_t>(s.horizon) + 1, PoseBounds{});
    if (static_cast<int>(s.pose_bounds.size()) != s.horizon + 1)
        throw std::invalid_argument("pose_bounds must have horizon + 1 entries");
    for (int t = 0; t <= s.horizon; ++t) {
        const auto& b = s.bounds_at(t);
        if ((b.lower.array() > b.upper.array()).any())
            throw std::invalid_argument("pose bounds must satisfy lower <= upper");
    }
    // Containment is checked before pinning; pinning would make it vacuous.
    const auto inside = [&](const Vec3& q, int t) {
        const auto& b = s.bounds_at(t);
        return (q.array() >= b.lower.array() - 1e-12).all() &&
               (q.array() <= b.upper.array() + 1e-12).all();
    };
    if (!inside(s.q_start.vec(), 0) || !inside(s.q_goal.vec(), s.horizon))
        throw std::invalid_argument("start/goal must lie within pose bounds");
    if (pin_endpoints) {
        s.pose_bounds.front().lower = s.pose_bounds.front().upper = s.q_start.vec();
        s.pose_bounds.back().lower = s.pose_bounds.back().upper = s.q_goal.vec();
    }
}

SurfaceFrame surface_frame(const Surface& surface, const Pose2& q) {
    const Mat2 rot = q.rotation();
    SurfaceFrame f;
    f.rotation.col(0) = rot * surface.outward_normal;
    f.rotation.col(1) = rot * surface.tangent();
    f.origin = q.apply(surface.a);
    return f;
}

Vec2 vertex_world(const ObjectModel& object, int v, const Pose2& q) {
    if (v < 0 || v >= object.num_vertices())
        throw std::out_of_range("vertex index out of range");
    return q.apply(object.vertices[static_cast<size_t>(v)]);
}

std::vector<double> sdf(const Scenario& scenario, const Pose2& q) {
    const auto& obj = scenario.object;
    std::vector<double> out(static_cast<size_t>(obj.num_vertices()),
                            std::numeric_limits<double>::infinity());
    for (int v = 0; v < obj.num_vertices(); ++v) {
        const Vec2 w = q.apply(obj.vertices[static_cast<size_t>(v)]);
        for (const auto& hs : scenario.env.halfspaces)
            out[static_cast<size_t>(v)] = std::min(out[static_cast<size_t>(v)], hs.distance(w));
    }
    return out;
}

int closest_halfspace(const Scenario& scenario, const Pose2& q, int v) {
    const Vec2 w = vertex_world(scenario.object, v, q);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < scenario.env.halfspaces.size(); ++k) {
        const double d = scenario.env.halfspaces[k].distance(w);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

}  // namespace manip
