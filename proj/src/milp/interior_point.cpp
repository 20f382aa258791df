#include "manip/milp/interior_point.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace manip::milp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double max_step(const Eigen::ArrayXd& v, const Eigen::ArrayXd& dv) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
    }
    return alpha;
}

}  // namespace

LpSolver::LpSolver(const Model& model) : model_(model) {
    n_ = model.num_vars();
    std::vector<Eigen::Triplet<double>> eq_trip, ineq_trip;
    std::vector<double> eq_rhs, ineq_rhs;
    for (int r = 0; r < model.num_constraints(); ++r) {
        const Constraint& con = model.constraint(r);
        const double sign = con.sense == Sense::Ge ? -1.0 : 1.0;
        std::vector<Eigen::Triplet<double>>& trip = con.sense == Sense::Eq ? eq_trip : ineq_trip;
        const int row = static_cast<int>(con.sense == Sense::Eq ? eq_rhs.size() : ineq_rhs.size());
        for (const LinTerm& term : con.expr) trip.emplace_back(row, term.var.index, sign * term.coef);
        (con.sense == Sense::Eq ? eq_rhs : ineq_rhs).push_back(sign * con.rhs);
    }
    me_ = static_cast<int>(eq_rhs.size());
    mi_ = static_cast<int>(ineq_rhs.size());
    eq_mat_.resize(me_, n_);
    eq_mat_.setFromTriplets(eq_trip.begin(), eq_trip.end());
    ineq_mat_.resize(mi_, n_);
    ineq_mat_.setFromTriplets(ineq_trip.begin(), ineq_trip.end());
    eq_rhs_ = Eigen::Map<Eigen::VectorXd>(eq_rhs.data(), me_);
    ineq_rhs_ = Eigen::Map<Eigen::VectorXd>(ineq_rhs.data(), mi_);
    cost_ = Eigen::VectorXd::Zero(n_);
    if (model.objective_sense() == ObjSense::Minimize) {
        for (const LinTerm& term : model.objective()) cost_[term.var.index] += term.coef;
    }
    build_structure();
}

void LpSolver::build_structure() {
    const int dim = n_ + me_;
    std::vector<Eigen::Triplet<double>> pattern;
    for (int i = 0; i < dim; ++i) pattern.emplace_back(i, i, 0.0);
    for (int r = 0; r < mi_; ++r) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(ineq_mat_, r); it; ++it) {
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator jt(ineq_mat_, r); jt; ++jt) {
                if (jt.col() > it.col()) continue;
                pattern.emplace_back(it.col(), jt.col(), 0.0);  // lower triangle: row >= col
            }
        }
    }
    for (int r = 0; r < me_; ++r) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(eq_mat_, r); it; ++it) {
            pattern.emplace_back(n_ + r, it.col(), 0.0);
        }
    }
    kkt_.resize(dim, dim);
    kkt_.setFromTriplets(pattern.begin(), pattern.end());
    kkt_.makeCompressed();

    std::unordered_map<long long, int> offset_of;
    offset_of.reserve(static_cast<size_t>(kkt_.nonZeros()) * 2);
    for (int col = 0; col < dim; ++col) {
        for (int idx = kkt_.outerIndexPtr()[col]; idx < kkt_.outerIndexPtr()[col + 1]; ++idx) {
            offset_of[static_cast<long long>(kkt_.innerIndexPtr()[idx]) * dim + col] = idx;
        }
    }
    auto offset = [&](int row, int col) { return offset_of.at(static_cast<long long>(row) * dim + col); };

    diag_offset_.resize(dim);
    for (int i = 0; i < dim; ++i) diag_offset_[i] = offset(i, i);
    for (int r = 0; r < mi_; ++r) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(ineq_mat_, r); it; ++it) {
            for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator jt(ineq_mat_, r); jt; ++jt) {
                if (jt.col() > it.col()) continue;
                contribs_.push_back({offset(static_cast<int>(it.col()), static_cast<int>(jt.col())), r,
                                     static_cast<int>(it.col()), static_cast<int>(jt.col()),
                                     it.value() * jt.value()});
            }
        }
    }
    for (int r = 0; r < me_; ++r) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(eq_mat_, r); it; ++it) {
            eq_entries_.push_back({offset(n_ + r, static_cast<int>(it.col())), static_cast<int>(it.col()), it.value()});
        }
    }
}

bool LpSolver::assemble_and_factor(const Eigen::VectorXd& theta_row, const Eigen::VectorXd& theta_bnd,
                                   const Eigen::VectorXd& eq_diag, double delta) {
    double* vals = kkt_.valuePtr();
    std::fill(vals, vals + kkt_.nonZeros(), 0.0);
    for (const EEntry& e : eq_entries_) {
        if (!fixed_[e.col]) vals[e.offset] += e.value;
    }
    for (const HContrib& c : contribs_) {
        if (!fixed_[c.col_j] && !fixed_[c.col_k]) vals[c.offset] += theta_row[c.row] * c.prod;
    }
    for (int j = 0; j < n_; ++j) vals[diag_offset_[j]] += fixed_[j] ? 1.0 : theta_bnd[j] + delta;
    for (int i = 0; i < me_; ++i) vals[diag_offset_[n_ + i]] -= eq_diag[i] + delta;
    if (!analyzed_) {
        ldlt_.analyzePattern(kkt_);
        analyzed_ = true;
    }
    ldlt_.factorize(kkt_);
    return ldlt_.info() == Eigen::Success;
}

Eigen::VectorXd LpSolver::solve_kkt(const Eigen::VectorXd& rhs, const Eigen::VectorXd& theta_row,
                                    const Eigen::VectorXd& theta_bnd, const Eigen::VectorXd& eq_diag) const {
    // Iterative refinement against the unregularized matrix recovers the
    // accuracy lost to the primal/dual shifts in the factorization.
    auto apply = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd xv = v.head(n_);
        for (int j = 0; j < n_; ++j) {
            if (fixed_[j]) xv[j] = 0.0;
        }
        Eigen::VectorXd out(n_ + me_);
        Eigen::VectorXd gx = ineq_mat_ * xv;
        out.head(n_) = ineq_mat_.transpose() * theta_row.cwiseProduct(gx).eval() + theta_bnd.cwiseProduct(xv) +
                       eq_mat_.transpose() * v.tail(me_);
        out.tail(me_) = eq_mat_ * xv - eq_diag.cwiseProduct(v.tail(me_));
        for (int j = 0; j < n_; ++j) {
            if (fixed_[j]) out[j] = v[j];
        }
        return out;
    };
    Eigen::VectorXd sol = ldlt_.solve(rhs);
    const double scale = 1.0 + rhs.lpNorm<Eigen::Infinity>();
    for (int pass = 0; pass < 3; ++pass) {
        Eigen::VectorXd resid = rhs - apply(sol);
        if (resid.lpNorm<Eigen::Infinity>() <= 1e-11 * scale) break;
        sol += ldlt_.solve(resid);
    }
    return sol;
}

LpResult LpSolver::solve(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, bool elastic,
                         const LpOptions& opts) {
    if (lo.size() != n_ || hi.size() != n_) throw std::invalid_argument("bound vector size mismatch");
    using Arr = Eigen::ArrayXd;
    fixed_.assign(n_, 0);
    std::vector<signed char> has_lo(n_, 0), has_hi(n_, 0);
    for (int j = 0; j < n_; ++j) {
        if (hi[j] - lo[j] < 1e-12) {
            fixed_[j] = 1;
        } else {
            has_lo[j] = std::isfinite(lo[j]);
            has_hi[j] = std::isfinite(hi[j]);
        }
    }

    Arr x(n_);
    for (int j = 0; j < n_; ++j) {
        if (fixed_[j]) x[j] = 0.5 * (lo[j] + hi[j]);
        else if (has_lo[j] && has_hi[j]) x[j] = 0.5 * (lo[j] + hi[j]);
        else if (has_lo[j]) x[j] = lo[j] + 1.0;
        else if (has_hi[j]) x[j] = hi[j] - 1.0;
        else x[j] = 0.0;
    }
    Arr y = Arr::Zero(me_);
    Arr z = Arr::Constant(mi_, elastic ? 0.5 : 1.0);
    Arr zl = Arr::Zero(n_), zu = Arr::Zero(n_);
    for (int j = 0; j < n_; ++j) {
        if (has_lo[j]) zl[j] = 1.0;
        if (has_hi[j]) zu[j] = 1.0;
    }
    Arr s(mi_), ei(mi_), ep(me_), em(me_);
    {
        Arr ri = ineq_rhs_.array() - (ineq_mat_ * x.matrix()).array();
        for (int i = 0; i < mi_; ++i) {
            s[i] = std::max(1.0, 1.0 + ri[i]);
            ei[i] = s[i] - ri[i];
        }
        Arr re = eq_rhs_.array() - (eq_mat_ * x.matrix()).array();
        for (int i = 0; i < me_; ++i) {
            em[i] = std::max(1.0, 1.0 - re[i]);
            ep[i] = re[i] + em[i];
        }
        if (!elastic) s = ri.max(1.0);
    }

    int pair_count = mi_;
    for (int j = 0; j < n_; ++j) pair_count += has_lo[j] + has_hi[j];
    if (elastic) pair_count += 2 * me_ + mi_;
    pair_count = std::max(pair_count, 1);

    Arr cvec = elastic ? Arr::Zero(n_) : Arr(cost_.array());
    const double cscale = 1.0 + (elastic ? 0.0 : cost_.lpNorm<Eigen::Infinity>());
    const double bscale = 1.0 + std::max(me_ ? eq_rhs_.lpNorm<Eigen::Infinity>() : 0.0,
                                         mi_ ? ineq_rhs_.lpNorm<Eigen::Infinity>() : 0.0);

    LpResult result;
    double delta = opts.regularization;
    double best_pres = kInf;
    int stall = 0;

    for (int iter = 0; iter <= opts.max_iter; ++iter) {
        // Residuals of the perturbed KKT system.
        Arr r_eq = (eq_mat_ * x.matrix()).array() - eq_rhs_.array();
        Arr r_in = (ineq_mat_ * x.matrix()).array() + s - ineq_rhs_.array();
        if (elastic) {
            r_eq += ep - em;
            r_in -= ei;
        }
        Arr r_dual = cvec + (eq_mat_.transpose() * y.matrix()).array() +
                     (ineq_mat_.transpose() * z.matrix()).array() - zl + zu;
        for (int j = 0; j < n_; ++j) {
            if (fixed_[j]) r_dual[j] = 0.0;
        }
        double mu = s.matrix().dot(z.matrix());
        for (int j = 0; j < n_; ++j) {
            if (has_lo[j]) mu += (x[j] - lo[j]) * zl[j];
            if (has_hi[j]) mu += (hi[j] - x[j]) * zu[j];
        }
        if (elastic) mu += ep.matrix().dot((1.0 + y).matrix()) + em.matrix().dot((1.0 - y).matrix()) +
                           ei.matrix().dot((1.0 - z).matrix());
        mu /= pair_count;

        const double obj = elastic ? ep.sum() + em.sum() + ei.sum() : cost_.dot(x.matrix());
        const double pres = std::max(me_ ? r_eq.abs().maxCoeff() : 0.0, mi_ ? r_in.abs().maxCoeff() : 0.0) / bscale;
        const double dres = (n_ ? r_dual.abs().maxCoeff() : 0.0) / cscale;

        result.x = x.matrix();
        result.objective = elastic ? obj : cost_.dot(x.matrix());
        result.violation = elastic ? obj : 0.0;
        result.iterations = iter;

        if (pres <= opts.tol_primal && dres <= opts.tol_dual && mu <= opts.tol_gap * (1.0 + std::abs(obj))) {
            result.status = LpStatus::Optimal;
            return result;
        }
        if (!std::isfinite(mu) || !std::isfinite(pres) || mu > 1e16) {
            result.status = LpStatus::NumericalTrouble;
            return result;
        }
        if (iter == opts.max_iter) break;
        if (pres < best_pres * 0.999) {
            best_pres = pres;
            stall = 0;
        } else if (++stall > 12 && mu < 1e-10 * (1.0 + std::abs(obj))) {
            break;  // converged in the complementarity measure but primal stuck: infeasible
        }

        // Row weights and bound weights for the condensed system.
        Arr dist_l(n_), dist_u(n_);
        Arr theta_bnd = Arr::Zero(n_);
        for (int j = 0; j < n_; ++j) {
            dist_l[j] = has_lo[j] ? std::max(x[j] - lo[j], 1e-300) : 1.0;
            dist_u[j] = has_hi[j] ? std::max(hi[j] - x[j], 1e-300) : 1.0;
            if (has_lo[j]) theta_bnd[j] += zl[j] / dist_l[j];
            if (has_hi[j]) theta_bnd[j] += zu[j] / dist_u[j];
        }
        Arr one_mz = elastic ? Arr(1.0 - z) : Arr::Ones(mi_);
        Arr one_py = elastic ? Arr(1.0 + y) : Arr::Ones(me_);
        Arr one_my = elastic ? Arr(1.0 - y) : Arr::Ones(me_);
        Arr theta_row(mi_);
        for (int i = 0; i < mi_; ++i) {
            double d = s[i] / std::max(z[i], 1e-300);
            if (elastic) d += ei[i] / std::max(one_mz[i], 1e-300);
            theta_row[i] = 1.0 / std::max(d, 1e-300);
        }
        Arr eq_diag = Arr::Zero(me_);
        if (elastic) eq_diag = ep / one_py.max(1e-300) + em / one_my.max(1e-300);

        bool factored = false;
        double try_delta = delta;
        while (try_delta <= 1e-2) {
            if (assemble_and_factor(theta_row.matrix(), theta_bnd.matrix(), eq_diag.matrix(), try_delta)) {
                factored = true;
                break;
            }
            try_delta *= 100.0;
        }
        if (!factored) {
            result.status = LpStatus::NumericalTrouble;
            return result;
        }

        auto newton = [&](const Arr& rc_s, const Arr& rc_e, const Arr& rc_p, const Arr& rc_m,
                          const Arr& rc_l, const Arr& rc_u) {
            Arr t = r_in + rc_s / z.max(1e-300);
            if (elastic) t -= rc_e / one_mz.max(1e-300);
            Eigen::VectorXd rhs(n_ + me_);
            Arr rhs_x = -r_dual - (ineq_mat_.transpose() * (theta_row * t).matrix()).array();
            for (int j = 0; j < n_; ++j) {
                if (fixed_[j]) {
                    rhs_x[j] = 0.0;
                    continue;
                }
                if (has_lo[j]) rhs_x[j] += rc_l[j] / dist_l[j];
                if (has_hi[j]) rhs_x[j] -= rc_u[j] / dist_u[j];
            }
            rhs.head(n_) = rhs_x.matrix();
            Arr rhs_y = -r_eq;
            if (elastic) rhs_y += -rc_p / one_py.max(1e-300) + rc_m / one_my.max(1e-300);
            rhs.tail(me_) = rhs_y.matrix();
            Eigen::VectorXd sol = solve_kkt(rhs, theta_row.matrix(), theta_bnd.matrix(), eq_diag.matrix());
            struct Step {
                Arr dx, dy, dz, ds, dei, dep, dem, dzl, dzu;
            } st;
            st.dx = sol.head(n_).array();
            for (int j = 0; j < n_; ++j) {
                if (fixed_[j]) st.dx[j] = 0.0;
            }
            st.dy = sol.tail(me_).array();
            st.dz = theta_row * ((ineq_mat_ * st.dx.matrix()).array() + t);
            st.ds = (rc_s - s * st.dz) / z.max(1e-300);
            st.dei = elastic ? Arr((rc_e + ei * st.dz) / one_mz.max(1e-300)) : Arr::Zero(mi_);
            st.dep = elastic ? Arr((rc_p - ep * st.dy) / one_py.max(1e-300)) : Arr::Zero(me_);
            st.dem = elastic ? Arr((rc_m + em * st.dy) / one_my.max(1e-300)) : Arr::Zero(me_);
            st.dzl = Arr::Zero(n_);
            st.dzu = Arr::Zero(n_);
            for (int j = 0; j < n_; ++j) {
                if (has_lo[j]) st.dzl[j] = (rc_l[j] - zl[j] * st.dx[j]) / dist_l[j];
                if (has_hi[j]) st.dzu[j] = (rc_u[j] + zu[j] * st.dx[j]) / dist_u[j];
            }
            return st;
        };

        auto primal_alpha = [&](const auto& st) {
            double a = std::min(max_step(s, st.ds), 1.0);
            for (int j = 0; j < n_; ++j) {
                if (fixed_[j]) continue;
                if (has_lo[j] && st.dx[j] < 0.0) a = std::min(a, -dist_l[j] / st.dx[j]);
                if (has_hi[j] && st.dx[j] > 0.0) a = std::min(a, dist_u[j] / st.dx[j]);
            }
            if (elastic) {
                a = std::min(a, max_step(ei, st.dei));
                a = std::min(a, max_step(ep, st.dep));
                a = std::min(a, max_step(em, st.dem));
            }
            return a;
        };
        auto dual_alpha = [&](const auto& st) {
            double a = std::min(max_step(z, st.dz), 1.0);
            a = std::min(a, max_step(zl, st.dzl));
            a = std::min(a, max_step(zu, st.dzu));
            if (elastic) {
                a = std::min(a, max_step(one_mz, Arr(-st.dz)));
                a = std::min(a, max_step(one_py, st.dy));
                a = std::min(a, max_step(one_my, Arr(-st.dy)));
            }
            return a;
        };

        // Predictor.
        Arr zero_i = Arr::Zero(mi_), zero_e = Arr::Zero(me_);
        Arr rc_l_aff = Arr::Zero(n_), rc_u_aff = Arr::Zero(n_);
        for (int j = 0; j < n_; ++j) {
            if (has_lo[j]) rc_l_aff[j] = -dist_l[j] * zl[j];
            if (has_hi[j]) rc_u_aff[j] = -dist_u[j] * zu[j];
        }
        auto aff = newton(Arr(-s * z), elastic ? Arr(-ei * one_mz) : zero_i,
                          elastic ? Arr(-ep * one_py) : zero_e, elastic ? Arr(-em * one_my) : zero_e,
                          rc_l_aff, rc_u_aff);
        const double ap_aff = primal_alpha(aff);
        const double ad_aff = dual_alpha(aff);
        double mu_aff = (s + ap_aff * aff.ds).matrix().dot((z + ad_aff * aff.dz).matrix());
        for (int j = 0; j < n_; ++j) {
            if (has_lo[j]) mu_aff += (dist_l[j] + ap_aff * aff.dx[j]) * (zl[j] + ad_aff * aff.dzl[j]);
            if (has_hi[j]) mu_aff += (dist_u[j] - ap_aff * aff.dx[j]) * (zu[j] + ad_aff * aff.dzu[j]);
        }
        if (elastic) {
            mu_aff += (ep + ap_aff * aff.dep).matrix().dot((one_py + ad_aff * aff.dy).matrix());
            mu_aff += (em + ap_aff * aff.dem).matrix().dot((one_my - ad_aff * aff.dy).matrix());
            mu_aff += (ei + ap_aff * aff.dei).matrix().dot((one_mz - ad_aff * aff.dz).matrix());
        }
        mu_aff /= pair_count;
        const double sigma = std::pow(std::clamp(mu_aff / std::max(mu, 1e-300), 0.0, 1.0), 3);
        const double sm = sigma * mu;

        // Corrector.
        Arr rc_l(n_), rc_u(n_);
        for (int j = 0; j < n_; ++j) {
            rc_l[j] = has_lo[j] ? sm - dist_l[j] * zl[j] - aff.dx[j] * aff.dzl[j] : 0.0;
            rc_u[j] = has_hi[j] ? sm - dist_u[j] * zu[j] + aff.dx[j] * aff.dzu[j] : 0.0;
        }
        auto st = newton(Arr(sm - s * z - aff.ds * aff.dz),
                         elastic ? Arr(sm - ei * one_mz + aff.dei * aff.dz) : zero_i,
                         elastic ? Arr(sm - ep * one_py - aff.dep * aff.dy) : zero_e,
                         elastic ? Arr(sm - em * one_my + aff.dem * aff.dy) : zero_e, rc_l, rc_u);

        const double tau = 0.9995;
        const double ap = tau * primal_alpha(st);
        const double ad = tau * dual_alpha(st);
        if (ap < 1e-12 && ad < 1e-12) break;

        x += ap * st.dx;
        s += ap * st.ds;
        y += ad * st.dy;
        z += ad * st.dz;
        zl += ad * st.dzl;
        zu += ad * st.dzu;
        if (elastic) {
            ei += ap * st.dei;
            ep += ap * st.dep;
            em += ap * st.dem;
        }
        for (int j = 0; j < n_; ++j) {
            if (fixed_[j]) x[j] = 0.5 * (lo[j] + hi[j]);
        }
    }

    result.status = LpStatus::IterationLimit;
    return result;
}

LpResult solve_lp_relaxation(const Model& model, const LpOptions& opts) {
    LpSolver solver(model);
    const int n = model.num_vars();
    Eigen::VectorXd lo(n), hi(n);
    for (int j = 0; j < n; ++j) {
        lo[j] = model.var(j).lb;
        hi[j] = model.var(j).ub;
    }
    const bool pure_feasibility =
        model.objective_sense() == ObjSense::Feasibility || model.objective().empty();
    if (!pure_feasibility) {
        LpResult res = solver.solve(lo, hi, false, opts);
        if (res.status == LpStatus::Optimal) return res;
    }
    LpResult el = solver.solve(lo, hi, true, opts);
    if (el.status == LpStatus::Optimal) {
        if (el.violation > opts.feas_eps) {
            el.status = LpStatus::Infeasible;
            return el;
        }
        if (!pure_feasibility) {
            // Feasible but the objective pass failed: report the feasible
            // point with its true objective rather than an elastic artifact.
            el.status = LpStatus::IterationLimit;
        }
        el.objective = 0.0;
        for (const LinTerm& term : model.objective()) el.objective += term.coef * el.x[term.var.index];
        return el;
    }
    return el;
}

}  // namespace manip::milp
