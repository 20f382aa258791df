#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "manip/copt.hpp"
#include "manip/kopt.hpp"
#include "manip/milp/model.hpp"
#include "manip/scene.hpp"

using namespace manip;
using copt::Relaxation;

namespace {

constexpr double kMass = 1.2;
constexpr double kMg = kMass * 9.81;

// 7 x 5 cm box resting on (or sliding along) a flat floor.
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

// Box tilted onto its lower-right vertex v1; theta < 0 makes v1 lowest.
Scenario tilt_scenario(int horizon, double theta) {
    const Vec2 low = rotation2(theta) * Vec2(0.035, -0.025);
    const Pose2 q(0.0, -low.y(), theta);
    Scenario s = box_scenario(horizon, q, q);
    finalize_scenario(s);
    return s;
}

struct ScheduleChecks {
    double p_tol = 1e-5;       // decoded contact point vs model p variables
    bool exact_force = true;   // force residual solver-exact (no pose products)
};

void check_schedule(const copt::CoptModel& model, const copt::CoptSolve& sol,
                    const ScheduleChecks& opts = {}) {
    REQUIRE(sol.feasible());
    REQUIRE(milp::verify_solution(model.model, sol.raw.values).worst() <= 1e-6);
    const Scenario& s = *model.scenario;
    const copt::ContactSchedule& sched = sol.schedule;
    const copt::CoptIndex& ix = model.index;

    for (int t = 0; t < ix.steps; ++t) {
        for (int i = 0; i < ix.robots; ++i) {
            const bool off = model.gated[static_cast<size_t>(t)][static_cast<size_t>(i)];
            int assigned = 0;
            for (int p = 0; p < ix.surfaces; ++p) {
                const Vec2 lam = sched.lambda[t][i][p];
                if (sched.z[t][i][p]) {
                    ++assigned;
                } else {
                    CHECK(lam.lpNorm<Eigen::Infinity>() <= 1e-6);
                }
                CHECK(lam.x() >= -1e-9);
                CHECK(std::abs(lam.y()) <=
                      s.robots[static_cast<size_t>(i)].mu * lam.x() + 1e-6);
            }
            CHECK(assigned == (off ? 0 : 1));
            const int p = sched.assigned_surface(t, i);
            if (p >= 0) {
                CHECK(sched.alpha[t][i] >= -1e-12);
                CHECK(sched.alpha[t][i] <=
                      s.object.surfaces[static_cast<size_t>(p)].length + 1e-9);
                const Vec2 raw(sol.raw.values[static_cast<size_t>(ix.px[ix.ti(t, i)].index)],
                               sol.raw.values[static_cast<size_t>(ix.py[ix.ti(t, i)].index)]);
                CHECK((sched.p_world[t][i] - raw).norm() <= opts.p_tol);
            }
        }
        for (int v = 0; v < ix.vertices; ++v) {
            const Vec2 f = sched.f[t][v];
            if (!model.kin.contact_map[static_cast<size_t>(v)][static_cast<size_t>(t)]) {
                CHECK(f.norm() <= 1e-12);
                continue;
            }
            const int j = closest_halfspace(s, model.kin.poses[static_cast<size_t>(t)], v);
            const Halfspace& hs = s.env.halfspaces[static_cast<size_t>(j)];
            const double fn = hs.normal.dot(f);
            CHECK(fn >= -1e-6);
            CHECK(std::abs(hs.tangent().dot(f)) <=
                  s.object.mu_env[static_cast<size_t>(v)] * fn + 1e-6);
        }
    }
    const copt::EquilibriumResidual res = copt::equilibrium_residual(model, sched);
    if (opts.exact_force) CHECK(res.force <= 1e-6);
    CHECK(res.moment <= copt::moment_gap_bound(model) + 1e-6);
}

}  // namespace

TEST_CASE("build rejects mismatched inputs") {
    const Scenario s = rest_scenario(3);
    kopt::KinematicsSolution kin = rest_kin(s);

    kopt::KinematicsSolution bad = kin;
    bad.poses.pop_back();
    CHECK_THROWS_AS(copt::build_copt(s, bad, Relaxation::mccormick()), std::invalid_argument);

    bad = kin;
    bad.contact_map.pop_back();
    CHECK_THROWS_AS(copt::build_copt(s, bad, Relaxation::mccormick()), std::invalid_argument);

    copt::CoptModel model = copt::build_copt(s, kin, Relaxation::mccormick());
    CHECK_THROWS_AS(copt::relax_pose_variables(model, kin, {Vec3::Zero()}),
                    std::invalid_argument);
    CHECK_THROWS_AS(copt::add_no_good_cut(model, {}), std::invalid_argument);
    CHECK_THROWS_AS(copt::add_no_good_cut(model, {{99, 0, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(copt::add_no_good_cut(model, {{0, 0, 7}}), std::invalid_argument);
}

TEST_CASE("static rest admits a hand-built equilibrium") {
    const Scenario s = rest_scenario(4);
    const kopt::KinematicsSolution kin = rest_kin(s);
    const copt::CoptModel model = copt::build_copt(s, kin, Relaxation::mccormick());
    const copt::CoptIndex& ix = model.index;

    // Robot parked mid-top with zero force; the floor carries the weight
    // symmetrically at the two bottom vertices.
    std::vector<double> x(static_cast<size_t>(model.model.num_vars()), 0.0);
    for (int t = 0; t <= 4; ++t) {
        x[static_cast<size_t>(ix.z[ix.tip(t, 0, 2)].index)] = 1.0;
        x[static_cast<size_t>(ix.alpha[ix.ti(t, 0)].index)] = 0.035;
        x[static_cast<size_t>(ix.px[ix.ti(t, 0)].index)] = 0.0;
        x[static_cast<size_t>(ix.py[ix.ti(t, 0)].index)] = 0.05;
        x[static_cast<size_t>(ix.fy[ix.tv(t, 0)].index)] = kMg / 2.0;
        x[static_cast<size_t>(ix.fy[ix.tv(t, 1)].index)] = kMg / 2.0;
    }
    CHECK(milp::verify_solution(model.model, x).worst() <= 1e-6);

    const copt::CoptSolve sol = copt::solve_copt(model);
    check_schedule(model, sol);
}

TEST_CASE("static rest schedule invariants across relaxations") {
    const Scenario s = rest_scenario(3);
    const kopt::KinematicsSolution kin = rest_kin(s);
    for (const Relaxation rel :
         {Relaxation::mccormick(), Relaxation::naive(3), Relaxation::encoded(4)}) {
        CAPTURE(static_cast<int>(rel.kind));
        const copt::CoptModel model = copt::build_copt(s, kin, rel);
        check_schedule(model, copt::solve_copt(model));
    }
    const double g_mc = copt::moment_gap_bound(copt::build_copt(s, kin, Relaxation::mccormick()));
    const double g_n3 = copt::moment_gap_bound(copt::build_copt(s, kin, Relaxation::naive(3)));
    const double g_e4 = copt::moment_gap_bound(copt::build_copt(s, kin, Relaxation::encoded(4)));
    CHECK(g_mc == doctest::Approx(3.0 * g_n3));
    CHECK(g_mc == doctest::Approx(4.0 * g_e4));
}

TEST_CASE("single support balances only with robot help") {
    const Scenario base = tilt_scenario(2, -0.3);

    // Exactly one vertex carries the floor reaction; its lever arm about the
    // com leaves an uncancelled moment unless the robot pushes.
    {
        const kopt::KinematicsSolution kin = kin_from_poses(
            base, std::vector<Pose2>(3, base.q_start));
        int touching = 0;
        for (int v = 0; v < 4; ++v)
            if (kin.contact_map[static_cast<size_t>(v)][0]) ++touching;
        REQUIRE(touching == 1);
        REQUIRE(kin.contact_map[1][0]);
    }

    Scenario gated = base;
    for (int t = 0; t <= 2; ++t) gated.robots[0].workspace_gates.push_back({Vec3::Zero(), 0.0, {t}});
    {
        const kopt::KinematicsSolution kin = kin_from_poses(
            gated, std::vector<Pose2>(3, gated.q_start));
        const copt::CoptModel model = copt::build_copt(gated, kin, Relaxation::mccormick());
        for (int t = 0; t <= 2; ++t) CHECK(model.gated[static_cast<size_t>(t)][0]);
        CHECK_FALSE(copt::solve_copt(model).feasible());
    }

    // Same gating through the pose predicate: forbid contact while the box
    // leans past -0.25 rad.
    Scenario leaned = base;
    leaned.robots[0].workspace_gates.push_back({Vec3(0.0, 0.0, -1.0), 0.25, {}});
    {
        const kopt::KinematicsSolution kin = kin_from_poses(
            leaned, std::vector<Pose2>(3, leaned.q_start));
        const copt::CoptModel model = copt::build_copt(leaned, kin, Relaxation::mccormick());
        CHECK(model.gated[0][0]);
        CHECK_FALSE(copt::solve_copt(model).feasible());
    }

    const kopt::KinematicsSolution kin = kin_from_poses(
        base, std::vector<Pose2>(3, base.q_start));
    const copt::CoptModel model = copt::build_copt(base, kin, Relaxation::mccormick());

    // Bracing the lifted bottom corner v0 restores balance: the hand-built
    // force triple below satisfies every row exactly.
    {
        const copt::CoptIndex& ix = model.index;
        const Pose2 q = base.q_start;
        const Vec2 arm = vertex_world(base.object, 1, q) - q.apply(base.object.com);
        const double lam = arm.x() * kMg / 0.07;
        const SurfaceFrame bottom = surface_frame(base.object.surfaces[0], q);
        const Vec2 u = bottom.rotation * Vec2(-lam, 0.0);
        const Vec2 f = Vec2(0.0, kMg) - u;
        std::vector<double> x(static_cast<size_t>(model.model.num_vars()), 0.0);
        for (int t = 0; t <= 2; ++t) {
            x[static_cast<size_t>(ix.z[ix.tip(t, 0, 0)].index)] = 1.0;
            x[static_cast<size_t>(ix.lam_n[ix.tip(t, 0, 0)].index)] = lam;
            x[static_cast<size_t>(ix.px[ix.ti(t, 0)].index)] = bottom.origin.x();
            x[static_cast<size_t>(ix.py[ix.ti(t, 0)].index)] = bottom.origin.y();
            x[static_cast<size_t>(ix.ux[ix.ti(t, 0)].index)] = u.x();
            x[static_cast<size_t>(ix.uy[ix.ti(t, 0)].index)] = u.y();
            x[static_cast<size_t>(ix.fx[ix.tv(t, 1)].index)] = f.x();
            x[static_cast<size_t>(ix.fy[ix.tv(t, 1)].index)] = f.y();
        }
        CHECK(milp::verify_solution(model.model, x).worst() <= 1e-6);
    }

    check_schedule(model, copt::solve_copt(model));
}

TEST_CASE("sliding with a top-only pusher needs grip") {
    // The object slides +x; the robot may only touch the top surface, so all
    // horizontal push comes through its friction cone.
    const auto make = [](double mu_robot) {
        Scenario s = box_scenario(3, Pose2(0.0, 0.025, 0.0), Pose2(0.15, 0.025, 0.0));
        s.object.surfaces = {{0, Vec2(0.035, 0.025), Vec2(-0.035, 0.025), Vec2::Zero(), 0.0}};
        s.robots[0].mu = mu_robot;
        finalize_scenario(s);
        return s;
    };
    const auto poses = [] {
        std::vector<Pose2> q;
        for (int t = 0; t <= 3; ++t) q.emplace_back(0.05 * t, 0.025, 0.0);
        return q;
    };

    {
        const Scenario s = make(0.0);
        const kopt::KinematicsSolution kin = kin_from_poses(s, poses());
        REQUIRE(kin.slip_map[0][0]);
        REQUIRE(kin.slip_map[1][3]);
        CHECK_FALSE(copt::solve_copt(copt::build_copt(s, kin, Relaxation::mccormick())).feasible());
    }

    const Scenario s = make(2.0);
    const kopt::KinematicsSolution kin = kin_from_poses(s, poses());
    const copt::CoptModel model = copt::build_copt(s, kin, Relaxation::encoded(4));
    const copt::CoptSolve sol = copt::solve_copt(model);
    check_schedule(model, sol);

    // Kinetic friction sits on the cone boundary opposing the +x slide.
    for (int t = 0; t <= 3; ++t) {
        for (int v : {0, 1}) {
            const Vec2 f = sol.schedule.f[t][v];
            CHECK(std::abs(f.x() + 0.5 * f.y()) <= 2e-5);
        }
        CHECK(sol.schedule.u[t][0].x() > 0.5 * kMg - 1e-6);
    }

    // The hand-derived slide equilibrium passes the raw rows.
    {
        const copt::CoptModel mc = copt::build_copt(s, kin, Relaxation::mccormick());
        const copt::CoptIndex& ix = mc.index;
        const double lam_n = 0.5 * kMg, lam_s = -0.75 * kMg;
        const double f1y = 9.0 * kMg / 7.0, f0y = 3.0 * kMg / 14.0;
        std::vector<double> x(static_cast<size_t>(mc.model.num_vars()), 0.0);
        for (int t = 0; t <= 3; ++t) {
            x[static_cast<size_t>(ix.z[ix.tip(t, 0, 0)].index)] = 1.0;
            x[static_cast<size_t>(ix.alpha[ix.ti(t, 0)].index)] = 0.035;
            x[static_cast<size_t>(ix.lam_n[ix.tip(t, 0, 0)].index)] = lam_n;
            x[static_cast<size_t>(ix.lam_s[ix.tip(t, 0, 0)].index)] = lam_s;
            x[static_cast<size_t>(ix.w_n[ix.tip(t, 0, 0)].index)] = 0.035 * lam_n;
            x[static_cast<size_t>(ix.w_s[ix.tip(t, 0, 0)].index)] = 0.035 * lam_s;
            x[static_cast<size_t>(ix.ux[ix.ti(t, 0)].index)] = -lam_s;
            x[static_cast<size_t>(ix.uy[ix.ti(t, 0)].index)] = -lam_n;
            x[static_cast<size_t>(ix.px[ix.ti(t, 0)].index)] = 0.05 * t;
            x[static_cast<size_t>(ix.py[ix.ti(t, 0)].index)] = 0.05;
            x[static_cast<size_t>(ix.fx[ix.tv(t, 0)].index)] = -0.5 * f0y;
            x[static_cast<size_t>(ix.fy[ix.tv(t, 0)].index)] = f0y;
            x[static_cast<size_t>(ix.fx[ix.tv(t, 1)].index)] = -0.5 * f1y;
            x[static_cast<size_t>(ix.fy[ix.tv(t, 1)].index)] = f1y;
            if (t < 3) x[static_cast<size_t>(ix.vx[ix.ti(t, 0)].index)] = 0.5;
        }
        CHECK(milp::verify_solution(mc.model, x).worst() <= 1e-6);
    }
}

TEST_CASE("stance changes zero the handoff force") {
    Scenario s = rest_scenario(2);
    s.robots[0].workspace_gates.push_back({Vec3::Zero(), 0.0, {1}});
    const kopt::KinematicsSolution kin = rest_kin(s);
    const copt::CoptModel model = copt::build_copt(s, kin, Relaxation::mccormick());
    const copt::CoptSolve sol = copt::solve_copt(model);
    check_schedule(model, sol);

    // z flips off entering step 1 and back on after, so the stability rows
    // wipe the robot force on every step.
    CHECK(sol.schedule.assigned_surface(1, 0) == -1);
    for (int t = 0; t <= 2; ++t) {
        CHECK(sol.schedule.u[t][0].norm() <= 2e-6);
        for (int p = 0; p < 4; ++p) {
            CHECK(sol.schedule.lambda[t][0][p].lpNorm<Eigen::Infinity>() <= 1e-6);
        }
    }
}

TEST_CASE("no-good cuts steer reassignment") {
    const Scenario s = rest_scenario(2);
    const kopt::KinematicsSolution kin = rest_kin(s);
    copt::CoptModel model = copt::build_copt(s, kin, Relaxation::encoded(2));

    std::vector<std::vector<copt::ActiveAssignment>> cuts;
    for (int round = 0; round < 3; ++round) {
        const copt::CoptSolve sol = copt::solve_copt(model);
        check_schedule(model, sol);
        std::vector<copt::ActiveAssignment> active;
        for (int t = 0; t <= 2; ++t) {
            active.push_back({t, 0, sol.schedule.assigned_surface(t, 0)});
        }
        // Every earlier cut stays satisfied: at least one entry moved away.
        for (const auto& cut : cuts) {
            int still = 0;
            for (const auto& a : cut)
                if (sol.schedule.z[a.t][a.i][a.p]) ++still;
            CHECK(still < static_cast<int>(cut.size()));
        }
        copt::add_no_good_cut(model, active);
        cuts.push_back(std::move(active));
    }

    // A singleton cut bans that one assignment outright.
    const copt::CoptSolve before = copt::solve_copt(model);
    REQUIRE(before.feasible());
    const int p0 = before.schedule.assigned_surface(0, 0);
    copt::add_no_good_cut(model, {{0, 0, p0}});
    const copt::CoptSolve after = copt::solve_copt(model);
    REQUIRE(after.feasible());
    CHECK_FALSE(after.schedule.z[0][0][static_cast<size_t>(p0)]);
}

TEST_CASE("pose relaxation discriminates by box size") {
    // Lean the box a hair past the angle where v1 sits under the com. The
    // fixed-pose model is unbalanced without the robot, and only a rotation
    // deviation of about 0.01 rad can repair it.
    const double theta_star = std::atan2(-0.035, 0.025);
    Scenario s = tilt_scenario(2, theta_star + 0.01);
    for (int t = 0; t <= 2; ++t) s.robots[0].workspace_gates.push_back({Vec3::Zero(), 0.0, {t}});
    const kopt::KinematicsSolution kin = kin_from_poses(s, std::vector<Pose2>(3, s.q_start));
    REQUIRE(kin.contact_map[1][0]);

    const copt::CoptModel fixed = copt::build_copt(s, kin, Relaxation::mccormick());
    CHECK_FALSE(copt::solve_copt(fixed).feasible());

    // Zero-width deviations change nothing.
    const copt::CoptModel frozen =
        copt::relax_pose_variables(fixed, kin, std::vector<Vec3>(3, Vec3::Zero()));
    CHECK_FALSE(copt::solve_copt(frozen).feasible());

    const copt::CoptModel wide = copt::relax_pose_variables(
        fixed, kin, std::vector<Vec3>(3, Vec3(0.01, 0.01, 0.02)));
    const copt::CoptSolve sol = copt::solve_copt(wide);
    ScheduleChecks relaxed;
    relaxed.p_tol = 1e-3;
    relaxed.exact_force = false;
    check_schedule(wide, sol, relaxed);
    REQUIRE(sol.schedule.pose_shift.size() == 3);
    for (const Vec3& d : sol.schedule.pose_shift) CHECK(std::abs(d.z()) <= 0.02 + 1e-9);
    CHECK(copt::moment_gap_bound(wide) > copt::moment_gap_bound(fixed));

    const copt::CoptModel narrow = copt::relax_pose_variables(
        fixed, kin, std::vector<Vec3>(3, Vec3(0.01, 0.01, 1e-4)));
    CHECK_FALSE(copt::solve_copt(narrow).feasible());
}

TEST_CASE("zero pose box keeps a feasible model feasible") {
    const Scenario s = rest_scenario(2);
    const kopt::KinematicsSolution kin = rest_kin(s);
    const copt::CoptModel model = copt::build_copt(s, kin, Relaxation::mccormick());
    const copt::CoptModel frozen =
        copt::relax_pose_variables(model, kin, std::vector<Vec3>(3, Vec3::Zero()));
    const copt::CoptSolve sol = copt::solve_copt(frozen);
    ScheduleChecks opts;
    opts.exact_force = true;  // zero-width products are pinned to zero
    check_schedule(frozen, sol, opts);
    for (const Vec3& d : sol.schedule.pose_shift) CHECK(d.norm() <= 1e-12);
}

TEST_CASE("fully gated rest leaves the floor carrying the weight") {
    Scenario s = rest_scenario(2);
    for (int t = 0; t <= 2; ++t) s.robots[0].workspace_gates.push_back({Vec3::Zero(), 0.0, {t}});
    const kopt::KinematicsSolution kin = rest_kin(s);
    const copt::CoptModel model = copt::build_copt(s, kin, Relaxation::encoded(4));
    const copt::CoptSolve sol = copt::solve_copt(model);
    check_schedule(model, sol);
    for (int t = 0; t <= 2; ++t) {
        CHECK(sol.schedule.assigned_surface(t, 0) == -1);
        CHECK(sol.schedule.u[t][0].norm() <= 1e-6);
        Vec2 total = Vec2::Zero();
        for (int v = 0; v < 4; ++v) total += sol.schedule.f[t][v];
        CHECK(std::abs(total.x()) <= 2e-5);
        CHECK(std::abs(total.y() - kMg) <= 2e-5);
    }
}
