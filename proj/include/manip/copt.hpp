#pragma once

#include <stdexcept>
#include <vector>

#include "manip/kopt.hpp"
#include "manip/milp/branch_and_bound.hpp"
#include "manip/milp/model.hpp"
#include "manip/pose.hpp"
#include "manip/scene.hpp"

namespace manip::copt {

/// Relaxation of the alpha-force moment bilinearities.
struct Relaxation {
    enum class Kind { McCormick, NaivePiecewise, BinaryEncoded };
    Kind kind = Kind::BinaryEncoded;
    int regions = 4;  // region count C; meaningless for plain McCormick

    static Relaxation mccormick() { return {Kind::McCormick, 1}; }
    static Relaxation naive(int c) { return {Kind::NaivePiecewise, c}; }
    static Relaxation encoded(int c) { return {Kind::BinaryEncoded, c}; }
};

/// Decoded contact plan. Robot force components live in the frame of the
/// assigned surface: lambda = (lambda_n, lambda_s) with lambda_n >= 0
/// pushing along the inward surface normal; the world force is
/// u = R_surface (-lambda_n, lambda_s).
struct ContactSchedule {
    std::vector<std::vector<std::vector<bool>>> z;        // [t][i][p]
    std::vector<std::vector<double>> alpha;               // [t][i], meters from endpoint a
    std::vector<std::vector<Vec2>> p_world;               // [t][i], recovered from (z, alpha)
    std::vector<std::vector<Vec2>> u;                     // [t][i], world robot force
    std::vector<std::vector<std::vector<Vec2>>> lambda;   // [t][i][p], (n, s) components
    std::vector<std::vector<Vec2>> f;                     // [t][v], world extrinsic force
    std::vector<Vec3> pose_shift;                         // [t], nonempty after pose relaxation

    /// Index of the surface with z = 1, or -1 when the step is gated.
    int assigned_surface(int t, int i) const;
};

/// Variable handles into the MILP, addressed by flattened (t, i, p, v).
struct CoptIndex {
    int steps = 0, robots = 0, surfaces = 0, vertices = 0;
    std::vector<milp::VarId> px, py, ux, uy, alpha;  // [t*I + i]
    std::vector<milp::VarId> vx, vy;                 // [t*I + i], t < T only
    std::vector<milp::VarId> z, lam_n, lam_s;        // [(t*I + i)*P + p]
    std::vector<milp::VarId> w_n, w_s;               // auxiliary alpha*lambda products
    std::vector<milp::VarId> fx, fy;                 // [t*V + v]
    // Pose-relaxation extras; empty unless relax_pose_variables built this.
    std::vector<milp::VarId> dq;                     // [t*3 + k]
    std::vector<milp::VarId> qdot;                   // [t*3 + k], t < T
    std::vector<milp::VarId> w_th_ln, w_th_ls;       // dtheta * lambda, [(t*I + i)*P + p]
    std::vector<milp::VarId> w_th_fx, w_th_fy;       // dtheta * f, [t*V + v]
    std::vector<milp::VarId> w_th_alpha;             // dtheta * alpha, [t*I + i]

    int ti(int t, int i) const { return t * robots + i; }
    int tip(int t, int i, int p) const { return (t * robots + i) * surfaces + p; }
    int tv(int t, int v) const { return t * vertices + v; }
};

struct CoptModel {
    milp::Model model;
    CoptIndex index;
    const Scenario* scenario = nullptr;
    kopt::KinematicsSolution kin;
    Relaxation relaxation;
    std::vector<Vec3> pose_box;             // per-step |dq| bounds; empty when not relaxed
    std::vector<std::vector<bool>> gated;   // [t][i] contact forbidden by workspace gates
    double lambda_cap = 0.0;                // per-component robot force bound, 5 m g
    double f_cap = 0.0;                     // per-component extrinsic bound, 10 m g
    double alpha_max = 0.0;                 // longest surface
};

/// Quasi-static contact MILP over the fixed pose trajectory: robot contact
/// dynamics and velocity boxes, surface-frame force conversion, force and
/// moment balance (moment bilinearities replaced per `relaxation`), one-hot
/// surface assignment with big-M segment membership, friction cones with
/// slip-pinned extrinsic friction, zero force across contact changes, and
/// workspace gating. Pure feasibility objective. The model borrows the
/// scenario; it must outlive the model.
CoptModel build_copt(const Scenario& scenario, const kopt::KinematicsSolution& kin,
                     const Relaxation& relaxation);

/// Same model with per-step pose deviations dq_t (|dq_t| <= pose_box[t]):
/// rotation-dependent rows are linearized to first order about the kin
/// poses, the new deviation-force products are McCormick-relaxed, and the
/// deviations obey the scenario rate bounds through forward-Euler rows.
CoptModel relax_pose_variables(const CoptModel& model, const kopt::KinematicsSolution& kin,
                               const std::vector<Vec3>& pose_box);

ContactSchedule decode(const CoptModel& model, const std::vector<double>& values);

struct CoptSolve {
    milp::SolveStatus status = milp::SolveStatus::Infeasible;
    ContactSchedule schedule;  // populated when feasible()
    milp::Solution raw;

    bool feasible() const {
        return status == milp::SolveStatus::Optimal || status == milp::SolveStatus::Feasible;
    }
};

CoptSolve solve_copt(const CoptModel& model, const milp::SolveConfig& config = {});

struct ActiveAssignment {
    int t = 0, i = 0, p = 0;
};

/// No-good cut sum z over the active set <= N - 1, excluding the rejected
/// assignment as a whole. Throws std::invalid_argument on an empty set.
int add_no_good_cut(CoptModel& model, const std::vector<ActiveAssignment>& active_set);

/// Equilibrium residuals of a decoded schedule with the true bilinear
/// products (worst step). Without pose relaxation the force row is exact
/// and the moment is off by at most moment_gap_bound; with it both pick up
/// the deviation-product envelope gaps.
struct EquilibriumResidual {
    double force = 0.0;   // infinity norm of Q_force
    double moment = 0.0;  // absolute Q_mom residual
};

EquilibriumResidual equilibrium_residual(const CoptModel& model, const ContactSchedule& schedule);

/// Sum of per-term envelope gaps appearing in one step's moment row.
double moment_gap_bound(const CoptModel& model);

}  // namespace manip::copt
