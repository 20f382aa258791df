#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "manip/copt.hpp"
#include "manip/kopt.hpp"
#include "manip/qopt.hpp"
#include "manip/scene.hpp"

using namespace manip;
using copt::Relaxation;

namespace {

constexpr double kMass = 1.2;
constexpr double kMg = kMass * 9.81;

// 7 x 5 cm box resting on (or moving along) a flat floor.
Scenario box_scenario(int horizon, Pose2 start, Pose2 goal) {
    Scenario s;
    s.object.mass = kMass;
    s.object.vertices = {{-0.035, -0.025}, {0.035, -0.025}, {0.035, 0.025}, {-0.035, 0.025}};
    s.robots.push_back({});
    s.env.halfspaces.push_back({Vec2(0.0, 1.0), 0.0});
    s.q_start = start;
    s.q_goal = goal;
    s.horizon = horizon;
    s.step = 0.1;
    return s;
}

kopt::KinematicsSolution kin_from_poses(const Scenario& s, std::vector<Pose2> poses) {
    kopt::KinematicsSolution k;
    k.poses = std::move(poses);
    k.rates.assign(static_cast<size_t>(s.horizon), Vec3::Zero());
    kopt::extract_contact_maps(s, k.poses, k.contact_map, k.slip_map);
    return k;
}

Scenario rest_scenario(int horizon) {
    const Pose2 q(0.0, 0.025, 0.0);
    Scenario s = box_scenario(horizon, q, q);
    finalize_scenario(s);
    return s;
}

kopt::KinematicsSolution rest_kin(const Scenario& s) {
    return kin_from_poses(s, std::vector<Pose2>(static_cast<size_t>(s.horizon) + 1,
                                                Pose2(0.0, 0.025, 0.0)));
}

// All-false assignments, zero forces, dimensions matching the scenario.
copt::ContactSchedule blank_schedule(const Scenario& s) {
    const size_t S = static_cast<size_t>(s.horizon) + 1;
    const size_t I = static_cast<size_t>(s.num_robots());
    const size_t P = static_cast<size_t>(s.object.num_surfaces());
    const size_t V = static_cast<size_t>(s.object.num_vertices());
    copt::ContactSchedule sched;
    sched.z.assign(S, std::vector<std::vector<bool>>(I, std::vector<bool>(P, false)));
    sched.alpha.assign(S, std::vector<double>(I, 0.0));
    sched.p_world.assign(S, std::vector<Vec2>(I, Vec2::Zero()));
    sched.u.assign(S, std::vector<Vec2>(I, Vec2::Zero()));
    sched.lambda.assign(S, std::vector<std::vector<Vec2>>(I, std::vector<Vec2>(P, Vec2::Zero())));
    sched.f.assign(S, std::vector<Vec2>(V, Vec2::Zero()));
    return sched;
}

// Floor rest with the weight split across the bottom vertices; no robot.
copt::ContactSchedule rest_schedule(const Scenario& s) {
    copt::ContactSchedule sched = blank_schedule(s);
    for (size_t t = 0; t < sched.f.size(); ++t) {
        sched.f[t][0] = Vec2(0.0, 0.5 * kMg);
        sched.f[t][1] = Vec2(0.0, 0.5 * kMg);
    }
    return sched;
}

// The object slides +x under a pusher restricted to the top surface.
Scenario slide_scenario(double mu_robot) {
    Scenario s = box_scenario(3, Pose2(0.0, 0.025, 0.0), Pose2(0.15, 0.025, 0.0));
    s.object.surfaces = {{0, Vec2(0.035, 0.025), Vec2(-0.035, 0.025), Vec2::Zero(), 0.0}};
    s.robots[0].mu = mu_robot;
    finalize_scenario(s);
    return s;
}

std::vector<Pose2> slide_poses() {
    std::vector<Pose2> q;
    for (int t = 0; t <= 3; ++t) q.emplace_back(0.05 * t, 0.025, 0.0);
    return q;
}

// Rotation about the lower-right vertex v1, anchored at (0.035, 0).
Pose2 pivot_pose(double phi) {
    const Vec2 xy = Vec2(0.035, 0.0) - rotation2(phi) * Vec2(0.035, -0.025);
    return Pose2(xy.x(), xy.y(), phi);
}

Scenario pivot_scenario(int horizon, double angle) {
    Scenario s = box_scenario(horizon, pivot_pose(0.0), pivot_pose(angle));
    s.object.surfaces = {{0, Vec2(0.035, 0.025), Vec2(-0.035, 0.025), Vec2::Zero(), 0.0}};
    s.robots[0].mu = 0.8;
    finalize_scenario(s);
    return s;
}

std::vector<Pose2> pivot_poses(int horizon, double angle) {
    std::vector<Pose2> q;
    for (int t = 0; t <= horizon; ++t) q.push_back(pivot_pose(angle * t / horizon));
    return q;
}

nlp::Vector perturbed(const qopt::QoptProblem& prob, std::mt19937& rng) {
    std::uniform_real_distribution<double> mag(0.005, 0.02);
    std::bernoulli_distribution flip(0.5);
    nlp::Vector x = prob.nlp.x0;
    for (int k = 0; k < x.size(); ++k) x[k] += (flip(rng) ? 1.0 : -1.0) * mag(rng);
    return x.cwiseMax(prob.nlp.lower).cwiseMin(prob.nlp.upper);
}

// Spec'd convergence: every contact either sticks (small velocity) or rides
// the cone boundary (small margin).
void check_complementarity_split(const Scenario& s, const qopt::Trajectory& traj,
                                 double final_eps) {
    const double root = 1.1 * std::sqrt(final_eps);
    const int T = static_cast<int>(traj.poses.size()) - 1;
    for (int t = 0; t <= T; ++t) {
        const int ta = std::min(t, T - 1);
        for (int v = 0; v < s.object.num_vertices(); ++v) {
            if (!traj.contact[v][t]) continue;
            const Halfspace& hs = s.env.halfspaces[closest_halfspace(s, traj.poses[t], v)];
            const Vec2 f = traj.f[t][v];
            const double margin =
                s.object.mu_env[v] * hs.normal.dot(f) - std::abs(hs.tangent().dot(f));
            const double w = hs.tangent().dot(vertex_world(s.object, v, traj.poses[ta + 1]) -
                                              vertex_world(s.object, v, traj.poses[ta])) /
                             s.step;
            CHECK(std::min(std::abs(margin), std::abs(w)) <= root);
        }
        for (int i = 0; i < s.num_robots(); ++i) {
            if (traj.surface[t][i] < 0 || traj.surface[ta][i] != traj.surface[ta + 1][i]) continue;
            const Vec2 l = traj.lambda[t][i];
            const double margin = s.robots[i].mu * l.x() - std::abs(l.y());
            const double w = (traj.alpha[ta + 1][i] - traj.alpha[ta][i]) / s.step;
            CHECK(std::min(std::abs(margin), std::abs(w)) <= root);
        }
    }
}

}  // namespace

TEST_CASE("build rejects mismatched inputs") {
    const Scenario s = rest_scenario(3);
    const kopt::KinematicsSolution kin = rest_kin(s);
    const copt::ContactSchedule sched = rest_schedule(s);

    kopt::KinematicsSolution bad_kin = kin;
    bad_kin.poses.pop_back();
    CHECK_THROWS_AS(qopt::build_qopt(s, bad_kin, sched), std::invalid_argument);

    copt::ContactSchedule bad = sched;
    bad.alpha.pop_back();
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, bad), std::invalid_argument);

    bad = sched;
    bad.z[0][0].pop_back();
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, bad), std::invalid_argument);

    bad = sched;
    bad.pose_shift.assign(2, Vec3::Zero());
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, bad), std::invalid_argument);

    qopt::QoptOptions opt;
    opt.robustness_weight = -1.0;
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, sched, opt), std::invalid_argument);

    opt.robustness_weight = 0.0;
    opt.eps_schedule.clear();
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, sched, opt), std::invalid_argument);
    opt.eps_schedule = {1e-2, 0.0};
    CHECK_THROWS_AS(qopt::build_qopt(s, kin, sched, opt), std::invalid_argument);
}

TEST_CASE("static rest refines to zero objective and residuals") {
    const Scenario s = rest_scenario(3);
    const kopt::KinematicsSolution kin = rest_kin(s);
    qopt::QoptProblem prob = qopt::build_qopt(s, kin, rest_schedule(s));
    const qopt::QoptResult res = qopt::solve_qopt(prob);

    REQUIRE(res.ok());
    CHECK(*prob.eps == 1e-6);
    const qopt::Trajectory& traj = *res.trajectory;
    CHECK(std::abs(traj.objective) <= 1e-9);
    CHECK(traj.robustness ==
          doctest::Approx(4.0 * std::hypot(0.035, 0.025)).epsilon(1e-9));
    for (int t = 0; t <= 3; ++t) {
        CHECK((traj.poses[t].vec() - Vec3(0.0, 0.025, 0.0)).norm() <= 1e-8);
        CHECK(traj.u[t][0].norm() <= 1e-9);
        CHECK(traj.surface[t][0] == -1);
        CHECK((traj.f[t][0] + traj.f[t][1] - Vec2(0.0, kMg)).norm() <= 1e-7);
    }

    const qopt::ResidualReport rep = verify_trajectory(s, traj);
    CHECK(rep.worst_physical() <= 1e-8);
    CHECK(rep.complementarity <= 1e-8);
}

TEST_CASE("analytic derivatives match finite differences") {
    std::mt19937 rng(7);

    // Rest instance with a robustness term: environment contacts only.
    {
        const Scenario s = rest_scenario(3);
        const kopt::KinematicsSolution kin = rest_kin(s);
        qopt::QoptOptions opt;
        opt.robustness_weight = 2.0;
        const qopt::QoptProblem prob = qopt::build_qopt(s, kin, rest_schedule(s), opt);
        for (int k = 0; k < 10; ++k) {
            const nlp::GradientReport rep = nlp::check_gradients(prob.nlp, perturbed(prob, rng));
            CHECK(rep.passed);
            CHECK(rep.max_error() <= 1e-5);
        }
    }

    // Sliding instance: assigned robot contact, sliding extrinsic contacts.
    {
        const Scenario s = slide_scenario(2.0);
        const kopt::KinematicsSolution kin = kin_from_poses(s, slide_poses());
        const copt::CoptSolve sol = copt::solve_copt(copt::build_copt(s, kin, Relaxation::encoded(4)));
        REQUIRE(sol.feasible());
        const qopt::QoptProblem prob = qopt::build_qopt(s, kin, sol.schedule);
        for (int k = 0; k < 10; ++k) {
            const nlp::GradientReport rep = nlp::check_gradients(prob.nlp, perturbed(prob, rng));
            CHECK(rep.passed);
            CHECK(rep.max_error() <= 1e-5);
        }
    }
}

TEST_CASE("sliding refinement rides the friction cone boundary") {
    const Scenario s = slide_scenario(2.0);
    const kopt::KinematicsSolution kin = kin_from_poses(s, slide_poses());
    const copt::CoptSolve sol = copt::solve_copt(copt::build_copt(s, kin, Relaxation::encoded(4)));
    REQUIRE(sol.feasible());

    qopt::QoptProblem prob = qopt::build_qopt(s, kin, sol.schedule);
    const qopt::QoptResult res = qopt::solve_qopt(prob);
    REQUIRE(res.ok());
    const qopt::Trajectory& traj = *res.trajectory;

    const qopt::ResidualReport rep = verify_trajectory(s, traj);
    CHECK(rep.worst_physical() <= 1e-6);
    CHECK(rep.complementarity <= 2e-6);
    check_complementarity_split(s, traj, 1e-6);

    // Kinetic friction saturates opposite the slide. The ground tangent is
    // (-1, 0), so a +x slide means w < 0 and the tangential load rides the
    // f_s = +mu f_n edge within eps / |w| wherever the contact carries load.
    int loaded = 0;
    for (int t = 0; t <= 3; ++t) {
        const int ta = std::min(t, 2);
        for (int v : {0, 1}) {
            const Halfspace& hs = s.env.halfspaces[0];
            const Vec2 f = traj.f[t][v];
            const double fn = hs.normal.dot(f);
            const double fs = hs.tangent().dot(f);
            const double w = hs.tangent().dot(vertex_world(s.object, v, traj.poses[ta + 1]) -
                                              vertex_world(s.object, v, traj.poses[ta])) /
                             s.step;
            CHECK(w <= -0.4);
            if (fn < 0.5) continue;
            ++loaded;
            CHECK(fs > 0.0);
            CHECK(std::abs(s.object.mu_env[v] * fn - fs) <= 1e-6 / std::abs(w) + 4e-6);
        }
    }
    CHECK(loaded >= 4);
}

TEST_CASE("pivot refinement reaches the goal with frozen assignments") {
    const Scenario s = pivot_scenario(4, -0.3);
    const kopt::KinematicsSolution kin = kin_from_poses(s, pivot_poses(4, -0.3));
    REQUIRE(kin.contact_map[1][0]);
    REQUIRE(kin.contact_map[1][4]);
    REQUIRE(kin.contact_map[0][0]);
    REQUIRE_FALSE(kin.contact_map[0][1]);

    const copt::CoptSolve sol = copt::solve_copt(copt::build_copt(s, kin, Relaxation::encoded(2)));
    REQUIRE(sol.feasible());

    qopt::QoptProblem prob = qopt::build_qopt(s, kin, sol.schedule);
    const qopt::QoptResult res = qopt::solve_qopt(prob);
    REQUIRE(res.ok());
    const qopt::Trajectory& traj = *res.trajectory;

    CHECK((traj.poses.back().vec() - s.q_goal.vec()).lpNorm<Eigen::Infinity>() <= 1e-3);
    for (int t = 0; t <= 4; ++t) {
        CHECK(traj.surface[t][0] == sol.schedule.assigned_surface(t, 0));
    }

    const qopt::ResidualReport rep = verify_trajectory(s, traj);
    CHECK(rep.worst_physical() <= 1e-6);
    check_complementarity_split(s, traj, 1e-6);
}

TEST_CASE("a robustness weight raises the margin term") {
    const Scenario s = pivot_scenario(4, -0.3);
    const kopt::KinematicsSolution kin = kin_from_poses(s, pivot_poses(4, -0.3));
    const copt::CoptSolve sol = copt::solve_copt(copt::build_copt(s, kin, Relaxation::encoded(2)));
    REQUIRE(sol.feasible());

    qopt::QoptProblem plain = qopt::build_qopt(s, kin, sol.schedule);
    const qopt::QoptResult base = qopt::solve_qopt(plain);
    REQUIRE(base.ok());

    qopt::QoptOptions opt;
    opt.robustness_weight = 2.0;
    qopt::QoptProblem weighted = qopt::build_qopt(s, kin, sol.schedule, opt);
    const qopt::QoptResult robust = qopt::solve_qopt(weighted);
    REQUIRE(robust.ok());

    CHECK(robust.trajectory->robustness >= base.trajectory->robustness + 1e-5);
    CHECK(verify_trajectory(s, *robust.trajectory).worst_physical() <= 1e-6);
}

TEST_CASE("an impossible schedule reports its assignments") {
    // A frictionless-enough pusher cannot drag the box +x from the top alone;
    // the forced assignment makes the balance rows unsatisfiable.
    const Scenario s = slide_scenario(0.5);
    const kopt::KinematicsSolution kin = kin_from_poses(s, slide_poses());
    copt::ContactSchedule sched = blank_schedule(s);
    for (int t = 0; t <= 3; ++t) {
        sched.z[t][0][0] = true;
        sched.alpha[t][0] = 0.035;
        sched.p_world[t][0] = Vec2(0.05 * t, 0.05);
        sched.lambda[t][0][0] = Vec2(0.5 * kMg, -0.25 * kMg);
    }

    qopt::QoptProblem prob = qopt::build_qopt(s, kin, sched);
    const qopt::QoptResult res = qopt::solve_qopt(prob);
    REQUIRE_FALSE(res.ok());
    CHECK(res.report.nlp.status != nlp::NlpStatus::Converged);
    CHECK(res.report.eps == 1e-2);
    CHECK(!res.report.message.empty());
    REQUIRE(res.report.active.size() == 4);
    for (int t = 0; t <= 3; ++t) {
        CHECK(res.report.active[t].t == t);
        CHECK(res.report.active[t].i == 0);
        CHECK(res.report.active[t].p == 0);
    }
}

TEST_CASE("verification flags corruption by its exact magnitude") {
    const Scenario s = rest_scenario(3);
    const kopt::KinematicsSolution kin = rest_kin(s);

    // Zero-force trajectory on a resting pose misses exactly the weight.
    qopt::Trajectory zero;
    zero.poses = kin.poses;
    zero.rates.assign(3, Vec3::Zero());
    zero.p.assign(4, std::vector<Vec2>(1, Vec2::Zero()));
    zero.alpha.assign(4, std::vector<double>(1, 0.0));
    zero.surface.assign(4, std::vector<int>(1, -1));
    zero.lambda.assign(4, std::vector<Vec2>(1, Vec2::Zero()));
    zero.u = zero.lambda;
    zero.f.assign(4, std::vector<Vec2>(4, Vec2::Zero()));
    zero.contact = kin.contact_map;
    const qopt::ResidualReport missing = verify_trajectory(s, zero);
    CHECK(missing.force == doctest::Approx(kMg).epsilon(1e-12));
    CHECK(missing.moment <= 1e-12);
    CHECK(missing.pose_dynamics <= 1e-12);

    // A converged trajectory with one corrupted force flags that force.
    qopt::QoptProblem prob = qopt::build_qopt(s, kin, rest_schedule(s));
    const qopt::QoptResult res = qopt::solve_qopt(prob);
    REQUIRE(res.ok());
    qopt::Trajectory bent = *res.trajectory;
    bent.f[1][0].x() += 0.3;
    const qopt::ResidualReport rep = verify_trajectory(s, bent);
    CHECK(rep.force == doctest::Approx(0.3).epsilon(1e-5));
    // Extra tangential pull at v0 also twists: arm_y * 0.3 about the com.
    CHECK(rep.moment == doctest::Approx(0.025 * 0.3).epsilon(1e-4));
    // 0.3 sideways against mu * mg / 2 of grip stays inside the cone.
    CHECK(rep.cone <= 1e-6);
}
