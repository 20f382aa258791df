#include "manip/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace manip::nlp {
namespace {

struct diverged_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw diverged_error(std::string(what) + " returned a non-finite value");
}

void require_finite(const Vector& v, const char* what) {
    if (!v.allFinite()) throw diverged_error(std::string(what) + " returned a non-finite value");
}

double fd_step(double xi) { return 1e-6 * (1.0 + std::abs(xi)); }

Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
    Vector g(x.size());
    Vector p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = fd_step(x[i]);
        p[i] = x[i] + h;
        const double fp = f(p);
        p[i] = x[i] - h;
        const double fm = f(p);
        p[i] = x[i];
        require_finite(fp, "objective");
        require_finite(fm, "objective");
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix fd_jacobian(const std::function<Vector(const Vector&)>& r, const Vector& x, Eigen::Index rows) {
    Matrix j(rows, x.size());
    Vector p = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = fd_step(x[i]);
        p[i] = x[i] + h;
        const Vector rp = r(p);
        p[i] = x[i] - h;
        const Vector rm = r(p);
        p[i] = x[i];
        require_finite(rp, "residual");
        require_finite(rm, "residual");
        j.col(i) = (rp - rm) / (2.0 * h);
    }
    return j;
}

struct LbfgsPair {
    Vector s, y;
    double rho;
};

// Two-loop recursion with the usual gamma scaling of the seed Hessian.
Vector lbfgs_direction(const Vector& grad, const std::deque<LbfgsPair>& mem) {
    Vector q = -grad;
    if (mem.empty()) {
        const double scale = std::max(1.0, q.lpNorm<Eigen::Infinity>());
        return q / scale;
    }
    std::vector<double> alpha(mem.size());
    for (size_t i = mem.size(); i-- > 0;) {
        alpha[i] = mem[i].rho * mem[i].s.dot(q);
        q -= alpha[i] * mem[i].y;
    }
    const LbfgsPair& last = mem.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
    for (size_t i = 0; i < mem.size(); ++i) {
        const double beta = mem[i].rho * mem[i].y.dot(q);
        q += (alpha[i] - beta) * mem[i].s;
    }
    return q;
}

struct Evaluator {
    const NlpProblem& p;
    double rho = 10.0;
    Vector lambda;  // equality multipliers
    Vector mu;      // inequality multipliers, >= 0

    explicit Evaluator(const NlpProblem& problem) : p(problem) {}

    bool has_eq() const { return static_cast<bool>(p.eq_residuals); }
    bool has_ineq() const { return static_cast<bool>(p.ineq_residuals); }

    Vector eq(const Vector& x) const {
        Vector c = p.eq_residuals(x);
        require_finite(c, "eq_residuals");
        return c;
    }
    Vector ineq(const Vector& x) const {
        Vector g = p.ineq_residuals(x);
        require_finite(g, "ineq_residuals");
        return g;
    }

    double eq_term(const Vector& c) const {
        return lambda.dot(c) + 0.5 * rho * c.squaredNorm();
    }
    // Slack-free term for g(x) >= 0: (1 / 2rho) sum max(0, mu - rho g)^2 - mu^2.
    double ineq_term(const Vector& g) const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double a = std::max(0.0, mu[i] - rho * g[i]);
            acc += a * a - mu[i] * mu[i];
        }
        return acc / (2.0 * rho);
    }

    double merit(const Vector& x) const {
        double m = p.objective(x);
        require_finite(m, "objective");
        if (has_eq()) m += eq_term(eq(x));
        if (has_ineq()) m += ineq_term(ineq(x));
        return m;
    }

    Vector merit_grad(const Vector& x) const {
        Vector g = p.objective_grad ? p.objective_grad(x)
                                    : fd_gradient([this](const Vector& z) { return p.objective(z); }, x);
        require_finite(g, "objective gradient");
        // Differencing the residuals (not the penalty scalar) keeps the
        // finite-difference error independent of the penalty size.
        if (has_eq()) {
            const Vector c = eq(x);
            const Matrix je = p.eq_jacobian
                                  ? p.eq_jacobian(x)
                                  : fd_jacobian([this](const Vector& z) { return eq(z); }, x, c.size());
            g += je.transpose() * (lambda + rho * c);
        }
        if (has_ineq()) {
            const Vector gi = ineq(x);
            const Matrix ji = p.ineq_jacobian
                                  ? p.ineq_jacobian(x)
                                  : fd_jacobian([this](const Vector& z) { return ineq(z); }, x,
                                                gi.size());
            Vector w(gi.size());
            for (Eigen::Index i = 0; i < gi.size(); ++i) {
                w[i] = -std::max(0.0, mu[i] - rho * gi[i]);
            }
            g += ji.transpose() * w;
        }
        require_finite(g, "merit gradient");
        return g;
    }
};

}  // namespace

double GradientReport::max_error() const {
    return std::max(objective_error, std::max(eq_error, ineq_error));
}

NlpResult solve(const NlpProblem& problem, const NlpConfig& config) {
    if (problem.n <= 0 || !problem.objective) {
        throw std::invalid_argument("NlpProblem needs a dimension and an objective");
    }
    if (problem.lower.size() != problem.n || problem.upper.size() != problem.n ||
        problem.x0.size() != problem.n) {
        throw std::invalid_argument("NlpProblem box and x0 must have dimension n");
    }
    for (int i = 0; i < problem.n; ++i) {
        if (!(problem.lower[i] <= problem.upper[i])) {
            throw std::invalid_argument("NlpProblem box is empty");
        }
        if (problem.x0[i] < problem.lower[i] - 1e-12 || problem.x0[i] > problem.upper[i] + 1e-12) {
            throw std::invalid_argument("x0 lies outside the box");
        }
    }

    const auto project = [&](Vector v) {
        return v.cwiseMax(problem.lower).cwiseMin(problem.upper);
    };

    NlpResult result;
    result.x = project(problem.x0);

    Evaluator ev(problem);
    ev.rho = config.initial_penalty;

    try {
        const Eigen::Index me = ev.has_eq() ? ev.eq(result.x).size() : 0;
        const Eigen::Index mi = ev.has_ineq() ? ev.ineq(result.x).size() : 0;
        ev.lambda = Vector::Zero(me);
        ev.mu = Vector::Zero(mi);
        if ((problem.eq_tol.size() && problem.eq_tol.size() != me) ||
            (problem.ineq_tol.size() && problem.ineq_tol.size() != mi) ||
            (problem.eq_tol.size() && problem.eq_tol.minCoeff() <= 0.0) ||
            (problem.ineq_tol.size() && problem.ineq_tol.minCoeff() <= 0.0)) {
            throw std::invalid_argument("per-row tolerances must be positive and match row counts");
        }

        double prev_viol = std::numeric_limits<double>::infinity();
        bool inner_converged = false;

        for (int outer = 0; outer < config.max_outer; ++outer) {
            result.outer_iterations = outer + 1;
            Vector x = result.x;
            double m = ev.merit(x);
            Vector g = ev.merit_grad(x);
            std::deque<LbfgsPair> mem;
            inner_converged = false;

            for (int inner = 0; inner < config.max_inner; ++inner) {
                const double stat = (project(x - g) - x).lpNorm<Eigen::Infinity>();
                if (stat <= config.opt_tol) {
                    inner_converged = true;
                    break;
                }
                Vector xn, gn;
                double mn = 0.0;
                const auto search = [&](const Vector& d) {
                    double alpha = 1.0;
                    while (alpha >= 1e-14) {
                        xn = project(x + alpha * d);
                        const Vector step = xn - x;
                        const double slope = g.dot(step);
                        if (slope <= 0.0 && step.lpNorm<Eigen::Infinity>() > 0.0) {
                            mn = ev.merit(xn);
                            if (mn <= m + 1e-4 * slope) return true;
                        }
                        alpha *= 0.5;
                    }
                    return false;
                };
                Vector d = lbfgs_direction(g, mem);
                if (g.dot(d) >= 0.0) {
                    mem.clear();
                    d = lbfgs_direction(g, mem);
                }
                bool accepted = search(d);
                if (!accepted && !mem.empty()) {
                    // Curvature pairs spanning an active-set change can yield
                    // unusable directions; retry once from steepest descent.
                    mem.clear();
                    accepted = search(lbfgs_direction(g, mem));
                }
                if (!accepted) break;  // at the numerical floor of the line search
                result.inner_iterations += 1;
                gn = ev.merit_grad(xn);
                const Vector s = xn - x;
                const Vector y = gn - g;
                const double sy = s.dot(y);
                if (sy > 1e-12 * s.norm() * y.norm()) {
                    mem.push_back({s, y, 1.0 / sy});
                    if (static_cast<int>(mem.size()) > config.lbfgs_memory) mem.pop_front();
                }
                x = xn;
                g = gn;
                m = mn;
                if (config.on_inner_step) config.on_inner_step(outer, inner, m);
                if (m < -1e30) throw diverged_error("merit function is unbounded below");
            }

            result.x = x;
            result.stationarity = (project(x - g) - x).lpNorm<Eigen::Infinity>();
            const Vector c = ev.has_eq() ? ev.eq(x) : Vector();
            const Vector gi = ev.has_ineq() ? ev.ineq(x) : Vector();
            result.max_eq_violation = c.size() ? c.lpNorm<Eigen::Infinity>() : 0.0;
            result.max_ineq_violation = gi.size() ? (-gi.cwiseMin(0.0)).maxCoeff() : 0.0;
            // Violation relative to each row's tolerance; 1.0 sits exactly at
            // the feasibility boundary.
            double viol = 0.0;
            for (Eigen::Index i = 0; i < c.size(); ++i) {
                const double tol = problem.eq_tol.size() ? problem.eq_tol[i] : config.feas_tol;
                viol = std::max(viol, std::abs(c[i]) / tol);
            }
            for (Eigen::Index i = 0; i < gi.size(); ++i) {
                const double tol = problem.ineq_tol.size() ? problem.ineq_tol[i] : config.feas_tol;
                viol = std::max(viol, std::max(0.0, -gi[i]) / tol);
            }

            if (viol <= 1.0 && inner_converged) {
                result.status = NlpStatus::Converged;
                result.objective = problem.objective(x);
                return result;
            }
            if (ev.has_eq()) ev.lambda += ev.rho * c;
            for (Eigen::Index i = 0; i < gi.size(); ++i) {
                ev.mu[i] = std::max(0.0, ev.mu[i] - ev.rho * gi[i]);
            }
            // Growing the penalty near or below feasibility tolerance only
            // corrupts conditioning; multiplier updates finish the endgame.
            if (viol > 10.0 && viol > 0.25 * prev_viol) {
                ev.rho *= config.penalty_growth;
            }
            prev_viol = viol;
        }
        result.status = NlpStatus::MaxIter;
        result.objective = problem.objective(result.x);
        result.message = "outer iteration limit reached";
    } catch (const diverged_error& e) {
        result.status = NlpStatus::Diverged;
        result.message = e.what();
    }
    return result;
}

GradientReport check_gradients(const NlpProblem& problem, const Vector& x, double rel_tol) {
    GradientReport report;
    const auto rel = [](const auto& analytic, const auto& numeric) {
        double worst = 0.0;
        for (Eigen::Index i = 0; i < analytic.size(); ++i) {
            const double err = std::abs(analytic(i) - numeric(i)) / (1.0 + std::abs(numeric(i)));
            worst = std::max(worst, err);
        }
        return worst;
    };
    if (problem.objective_grad) {
        const Vector a = problem.objective_grad(x);
        const Vector f = fd_gradient(problem.objective, x);
        report.objective_error = rel(a, f);
    }
    if (problem.eq_residuals && problem.eq_jacobian) {
        const Matrix a = problem.eq_jacobian(x);
        const Matrix f = fd_jacobian(problem.eq_residuals, x, a.rows());
        report.eq_error = rel(a.reshaped(), f.reshaped());
    }
    if (problem.ineq_residuals && problem.ineq_jacobian) {
        const Matrix a = problem.ineq_jacobian(x);
        const Matrix f = fd_jacobian(problem.ineq_residuals, x, a.rows());
        report.ineq_error = rel(a.reshaped(), f.reshaped());
    }
    report.passed = report.max_error() <= rel_tol;
    return report;
}

}  // namespace manip::nlp
