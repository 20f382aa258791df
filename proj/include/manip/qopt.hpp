#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "manip/copt.hpp"
#include "manip/kopt.hpp"
#include "manip/nlp.hpp"
#include "manip/pose.hpp"
#include "manip/scene.hpp"

namespace manip::qopt {

struct QoptOptions {
    /// Weight on the stability margin term; 0 keeps pure tracking.
    double robustness_weight = 0.0;
    /// Complementarity relaxation continuation, solved in order.
    std::vector<double> eps_schedule = {1e-2, 1e-3, 1e-4, 1e-6};
};

/// Refined trajectory with exact contact forces. lambda is (n, s) in the
/// frame of the assigned surface; u = R_surface (-lambda_n, lambda_s) is the
/// derived world force. Entries for gated robots and inactive vertices are
/// zero. surface[t][i] and contact[v][t] carry the frozen assignment so the
/// trajectory verifies on its own.
struct Trajectory {
    std::vector<Pose2> poses;                // t = 0..T
    std::vector<Vec3> rates;                 // t < T
    std::vector<std::vector<Vec2>> p;        // [t][i], robot contact point
    std::vector<std::vector<double>> alpha;  // [t][i], meters from endpoint a
    std::vector<std::vector<int>> surface;   // [t][i], assigned index or -1
    std::vector<std::vector<Vec2>> lambda;   // [t][i], (n, s) components
    std::vector<std::vector<Vec2>> u;        // [t][i], world robot force
    std::vector<std::vector<Vec2>> f;        // [t][v], world extrinsic force
    std::vector<std::vector<bool>> contact;  // A[v][t]
    double objective = 0.0;
    double robustness = 0.0;  // unweighted sum R_t cos^2 theta_t
};

/// Offsets into the flat decision vector [q, qdot, p, alpha, lambda, f].
/// lambda exists only for assigned (t, i) and f only for active (t, v);
/// absent blocks map to -1.
struct QoptLayout {
    int steps = 0, robots = 0, vertices = 0;
    int q0 = 0, qd0 = 0, p0 = 0, a0 = 0;
    std::vector<int> lam;  // [t*I + i] offset of (lambda_n, lambda_s) or -1
    std::vector<int> fv;   // [t*V + v] offset of (f_x, f_y) or -1
    int n = 0;

    int q(int t, int k) const { return q0 + 3 * t + k; }
    int qd(int t, int k) const { return qd0 + 3 * t + k; }
    int p(int t, int i, int k) const { return p0 + 2 * (t * robots + i) + k; }
    int a(int t, int i) const { return a0 + t * robots + i; }
};

/// Smooth refinement NLP over a frozen contact schedule: tracking objective
/// minus the weighted stability margin, exact rotation-dependent force and
/// moment balance, membership equalities on assigned surfaces, friction
/// cones, velocity boxes, and eps-relaxed sticking/sliding complementarity.
/// eps is live: solve_qopt tightens it through options.eps_schedule without
/// rebuilding. The problem borrows the scenario; it must outlive it.
struct QoptProblem {
    nlp::NlpProblem nlp;
    QoptLayout layout;
    const Scenario* scenario = nullptr;
    kopt::KinematicsSolution kin;
    copt::ContactSchedule schedule;
    QoptOptions options;
    std::shared_ptr<double> eps;
    /// Per-variable units of the solver-space decision vector; physical
    /// values are scale .* x. Keeps force and length entries near unity.
    nlp::Vector scale;
    /// The solver sees objective_scale * (physical objective) so its
    /// curvature matches the rescaled constraint rows.
    double objective_scale = 1.0;
};

/// Throws std::invalid_argument when the schedule or kinematic solution does
/// not match the scenario dimensions.
QoptProblem build_qopt(const Scenario& scenario, const kopt::KinematicsSolution& kin,
                       const copt::ContactSchedule& schedule, const QoptOptions& options = {});

Trajectory decode_trajectory(const QoptProblem& problem, const nlp::Vector& x);

/// Carries the schedule's active assignments when refinement fails, the
/// input for a no-good cut on the contact MILP.
struct InfeasibilityReport {
    std::vector<copt::ActiveAssignment> active;
    nlp::NlpResult nlp;
    double eps = 0.0;
    std::string message;
};

struct QoptResult {
    std::optional<Trajectory> trajectory;
    InfeasibilityReport report;  // meaningful only when !ok()

    bool ok() const { return trajectory.has_value(); }
};

/// Continuation over options.eps_schedule, warm-starting every stage from
/// the previous solution. Success requires the final stage to converge with
/// constraint violation within 1e-6.
QoptResult solve_qopt(QoptProblem& problem);

/// Exact per-family residuals, no smoothing or relaxation. A converged
/// trajectory keeps every family within 1e-6 except complementarity, which
/// stays within the final eps.
struct ResidualReport {
    double pose_dynamics = 0.0;     // forward-Euler defect
    double robot_velocity = 0.0;    // contact-point velocity box excess
    double force = 0.0;             // force balance, infinity norm
    double moment = 0.0;            // moment balance
    double membership = 0.0;        // distance to the assigned segment point
    double cone = 0.0;              // friction cone and normal-sign excess
    double bounds = 0.0;            // pose, rate, and alpha box excess
    double complementarity = 0.0;   // max of |c v| and positive g_s v

    double worst_physical() const;  // everything except complementarity
};

ResidualReport verify_trajectory(const Scenario& scenario, const Trajectory& trajectory);

}  // namespace manip::qopt
