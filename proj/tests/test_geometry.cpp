#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/LU>

#include "manip/pose.hpp"
#include "manip/scene.hpp"

using namespace manip;

namespace {

Scenario box_on_floor() {
    Scenario s;
    s.object.mass = 1.2;
    s.object.vertices = {{-0.035, -0.025}, {0.035, -0.025}, {0.035, 0.025}, {-0.035, 0.025}};
    s.object.com = {0.0, 0.0};
    s.env.halfspaces.push_back({{0.0, 1.0}, 0.0});
    s.robots.push_back({});
    s.q_start = Pose2(0.0, 0.025, 0.0);
    s.q_goal = Pose2(0.0, 0.025, 0.0);
    s.horizon = 4;
    return s;
}

}  // namespace

TEST_CASE("normalize_angle wraps into (-pi, pi]") {
    CHECK(normalize_angle(0.0) == 0.0);
    CHECK(normalize_angle(M_PI) == doctest::Approx(M_PI));
    CHECK(normalize_angle(-M_PI) == doctest::Approx(M_PI));
    CHECK(normalize_angle(1.5 * M_PI) == doctest::Approx(-0.5 * M_PI));
    CHECK(normalize_angle(7.0 * M_PI) == doctest::Approx(M_PI));
    CHECK(normalize_angle(-7.5 * M_PI) == doctest::Approx(0.5 * M_PI));
}

TEST_CASE("rotation2 and its derivative") {
    const Vec2 e1(1.0, 0.0);
    CHECK((rotation2(M_PI_2) * e1 - Vec2(0.0, 1.0)).norm() == doctest::Approx(0.0));
    const double theta = 0.37;
    const double eps = 1e-7;
    const Mat2 fd = (rotation2(theta + eps) - rotation2(theta - eps)) / (2.0 * eps);
    CHECK((fd - rotation2_deriv(theta)).norm() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("cross2 sign convention") {
    CHECK(cross2({1.0, 0.0}, {0.0, 1.0}) == 1.0);
    CHECK(cross2({0.0, 1.0}, {1.0, 0.0}) == -1.0);
}

TEST_CASE("Pose2 apply matches a hand-rotated point") {
    const Pose2 q(0.0, 0.0, M_PI);
    const Vec2 w = q.apply({0.035, -0.025});
    CHECK(w.x() == doctest::Approx(-0.035));
    CHECK(w.y() == doctest::Approx(0.025));
}

TEST_CASE("Pose2 compose and inverse round-trip") {
    const Pose2 a(0.2, -0.1, 0.8), b(-0.05, 0.3, -2.5);
    const Pose2 ab = a.compose(b);
    const Vec2 p(0.07, -0.02);
    CHECK((ab.apply(p) - a.apply(b.apply(p))).norm() == doctest::Approx(0.0));
    const Pose2 id = a.compose(a.inverse());
    CHECK(id.x == doctest::Approx(0.0));
    CHECK(id.y == doctest::Approx(0.0));
    CHECK(id.theta == doctest::Approx(0.0));
    CHECK((a.apply_inverse(a.apply(p)) - p).norm() == doctest::Approx(0.0));
}

TEST_CASE("polygon predicates") {
    const std::vector<Vec2> square = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    CHECK(polygon_signed_area(square) == doctest::Approx(1.0));
    CHECK(polygon_is_simple(square));
    CHECK(polygon_contains(square, {0.5, 0.5}));
    CHECK_FALSE(polygon_contains(square, {1.5, 0.5}));
    const std::vector<Vec2> bowtie = {{0, 0}, {1, 1}, {1, 0}, {0, 1}};
    CHECK_FALSE(polygon_is_simple(bowtie));
}

TEST_CASE("finalize_scenario derives surfaces with outward normals") {
    Scenario s = box_on_floor();
    finalize_scenario(s);
    REQUIRE(s.object.num_surfaces() == 4);
    const Surface& bottom = s.object.surfaces[0];
    CHECK(bottom.outward_normal.x() == doctest::Approx(0.0));
    CHECK(bottom.outward_normal.y() == doctest::Approx(-1.0));
    CHECK(bottom.length == doctest::Approx(0.07));
    for (const Surface& f : s.object.surfaces) {
        CHECK(f.outward_normal.norm() == doctest::Approx(1.0));
        CHECK(std::abs(f.outward_normal.dot(f.tangent())) < 1e-12);
        CHECK(cross2(f.outward_normal, f.tangent()) == doctest::Approx(1.0));
    }
    CHECK(s.object.mu_env.size() == 4);
    CHECK(s.object.mu_env[0] == 0.5);
    CHECK(s.pose_bounds.size() == 5);
    CHECK((s.bounds_at(0).lower - s.q_start.vec()).norm() == 0.0);
    CHECK((s.bounds_at(4).upper - s.q_goal.vec()).norm() == 0.0);
}

TEST_CASE("finalize_scenario rejects bad input") {
    Scenario s = box_on_floor();
    s.object.mass = 0.0;
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);

    s = box_on_floor();
    std::reverse(s.object.vertices.begin(), s.object.vertices.end());  // clockwise
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);

    s = box_on_floor();
    s.object.com = {1.0, 0.0};
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);

    s = box_on_floor();
    s.horizon = 1;
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);

    s = box_on_floor();
    s.env.halfspaces[0].normal = {0.0, 0.0};
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);

    s = box_on_floor();
    s.q_start = Pose2(5.0, 0.0, 0.0);  // outside the default pose box
    s.pose_bounds.clear();
    CHECK_THROWS_AS(finalize_scenario(s), std::invalid_argument);
}

TEST_CASE("surface endpoint order is fixed to keep the frame right-handed") {
    Scenario s = box_on_floor();
    Surface flipped;
    flipped.a = {0.035, -0.025};
    flipped.b = {-0.035, -0.025};
    flipped.outward_normal = {0.0, -1.0};
    s.object.surfaces = {flipped};
    finalize_scenario(s);
    const Surface& fixed = s.object.surfaces[0];
    CHECK(fixed.a.x() == doctest::Approx(-0.035));
    CHECK(cross2(fixed.outward_normal, fixed.tangent()) == doctest::Approx(1.0));
}

TEST_CASE("surface_frame rotates the outward normal into world coordinates") {
    Scenario s = box_on_floor();
    finalize_scenario(s);
    const Pose2 q(0.1, 0.2, M_PI_2);
    const SurfaceFrame f = surface_frame(s.object.surfaces[0], q);
    CHECK(f.rotation.col(0).x() == doctest::Approx(1.0));
    CHECK(f.rotation.col(0).y() == doctest::Approx(0.0));
    CHECK(f.rotation.determinant() == doctest::Approx(1.0));
    CHECK((f.origin - q.apply(s.object.surfaces[0].a)).norm() == doctest::Approx(0.0));
}

TEST_CASE("sdf reports per-vertex penetration depth") {
    Scenario s = box_on_floor();
    finalize_scenario(s);
    const auto d = sdf(s, Pose2(0.0, -0.01, 0.0));
    REQUIRE(d.size() == 4);
    CHECK(d[0] == doctest::Approx(-0.035));
    CHECK(d[1] == doctest::Approx(-0.035));
    CHECK(d[2] == doctest::Approx(0.015));
    CHECK(d[3] == doctest::Approx(0.015));
}

TEST_CASE("closest_halfspace picks the active environment face") {
    Scenario s = box_on_floor();
    s.env.halfspaces.push_back({{1.0, 0.0}, -0.2});  // wall at x = -0.2
    finalize_scenario(s);
    CHECK(closest_halfspace(s, Pose2(0.0, 0.025, 0.0), 0) == 0);
    CHECK(closest_halfspace(s, Pose2(-0.19, 0.5, 0.0), 0) == 1);
}

TEST_CASE("workspace gates forbid by step or pose predicate") {
    WorkspaceGate gate;
    gate.steps = {3};
    CHECK(gate.forbids({0, 0, 0}, 3));
    CHECK_FALSE(gate.forbids({0, 0, 0}, 2));
    WorkspaceGate tilt;
    tilt.coeffs = {0.0, 0.0, 1.0};
    tilt.rhs = M_PI / 4.0;
    CHECK(tilt.forbids({0.0, 0.0, 1.0}, 0));
    CHECK_FALSE(tilt.forbids({0.0, 0.0, 0.5}, 0));
}

TEST_CASE("vertex_world range checks") {
    Scenario s = box_on_floor();
    finalize_scenario(s);
    CHECK_THROWS_AS(vertex_world(s.object, 4, Pose2()), std::out_of_range);
    const Vec2 w = vertex_world(s.object, 1, Pose2(0.0, 0.0, M_PI));
    CHECK(w.x() == doctest::Approx(-0.035));
    CHECK(w.y() == doctest::Approx(0.025));
}
