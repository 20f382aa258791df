#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace manip::nlp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Smooth constrained program over a box:
///   min f(x)  s.t.  c(x) = 0,  g(x) >= 0,  lower <= x <= upper.
/// Residual callables may be absent. Analytic derivatives are optional per
/// callable; central finite differences fill any gap.
struct NlpProblem {
    int n = 0;
    std::function<double(const Vector&)> objective;
    std::function<Vector(const Vector&)> objective_grad;
    std::function<Vector(const Vector&)> eq_residuals;
    std::function<Matrix(const Vector&)> eq_jacobian;
    std::function<Vector(const Vector&)> ineq_residuals;  // g(x) >= 0 feasible
    std::function<Matrix(const Vector&)> ineq_jacobian;
    Vector lower, upper;
    Vector x0;
    /// Optional per-row feasibility tolerances. Scaled problems mix rows of
    /// different units; when set, row i is feasible at |c_i| <= eq_tol[i]
    /// (resp. g_i >= -ineq_tol[i]) instead of the uniform NlpConfig value.
    Vector eq_tol, ineq_tol;
};

enum class NlpStatus { Converged, MaxIter, Diverged };

struct NlpResult {
    NlpStatus status = NlpStatus::Diverged;
    Vector x;
    double objective = 0.0;
    double max_eq_violation = 0.0;
    double max_ineq_violation = 0.0;
    /// Infinity norm of the projected merit gradient at the returned point.
    double stationarity = 0.0;
    int outer_iterations = 0;
    int inner_iterations = 0;
    std::string message;
};

struct NlpConfig {
    double feas_tol = 1e-6;
    double opt_tol = 1e-6;
    int max_outer = 50;
    double penalty_growth = 10.0;
    double initial_penalty = 10.0;
    int max_inner = 400;
    int lbfgs_memory = 10;
    /// Called with the merit value after every accepted inner step.
    std::function<void(int outer, int inner, double merit)> on_inner_step;
};

/// Augmented-Lagrangian outer loop around a projected L-BFGS inner
/// minimizer. Multipliers update every outer iteration; the penalty grows
/// whenever the constraint violation fails to shrink by a factor of 4.
NlpResult solve(const NlpProblem& problem, const NlpConfig& config = {});

/// Maximum relative error between supplied analytic derivatives and central
/// finite differences with step 1e-6 (1 + |x_i|). Parts without an analytic
/// callable are skipped and report zero.
struct GradientReport {
    double objective_error = 0.0;
    double eq_error = 0.0;
    double ineq_error = 0.0;
    bool passed = true;
    double max_error() const;
};

GradientReport check_gradients(const NlpProblem& problem, const Vector& x, double rel_tol = 1e-5);

}  // namespace manip::nlp
