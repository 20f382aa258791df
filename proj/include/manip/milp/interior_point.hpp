#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "manip/milp/model.hpp"

namespace manip::milp {

enum class LpStatus { Optimal, Infeasible, IterationLimit, NumericalTrouble };

struct LpOptions {
    int max_iter = 120;
    double tol_primal = 1e-9;
    double tol_dual = 1e-9;
    double tol_gap = 1e-10;
    double regularization = 1e-8;
    double feas_eps = 1e-7;   // elastic violation above this certifies infeasibility
};

struct LpResult {
    LpStatus status = LpStatus::NumericalTrouble;
    Eigen::VectorXd x;            // structural variable values
    double objective = 0.0;       // model objective at x (elastic mode: total violation)
    double violation = 0.0;       // total elastic violation (elastic mode only)
    int iterations = 0;
};

/// Interior-point LP solver for one model's linear relaxation.
///
/// The constraint rows are split into equalities and inequalities and the
/// Newton systems are condensed onto (x, y_eq), so the factored matrix has
/// dimension num_vars + num_equalities regardless of inequality count. The
/// sparsity pattern is analyzed once per model; repeated solves with
/// different variable bounds (branch-and-bound nodes) reuse it.
///
/// Elastic mode solves min sum(violations) with every row relaxed by
/// nonnegative elastics. The elastics are eliminated analytically (they
/// appear as dual bounds y in [-1,1], z in [0,1]), so both modes share the
/// same KKT pattern. An elastic optimum above feas_eps is an infeasibility
/// certificate: no point in the variable box can violate less.
class LpSolver {
public:
    explicit LpSolver(const Model& model);

    /// Solves with the given bound overrides (size num_vars). Entries with
    /// lo == hi are treated as fixed and eliminated from the Newton system.
    LpResult solve(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, bool elastic,
                   const LpOptions& opts = {});

    int num_vars() const { return n_; }

private:
    void build_structure();
    bool assemble_and_factor(const Eigen::VectorXd& theta_row, const Eigen::VectorXd& theta_bnd,
                             const Eigen::VectorXd& eq_diag, double delta);
    Eigen::VectorXd solve_kkt(const Eigen::VectorXd& rhs, const Eigen::VectorXd& theta_row,
                              const Eigen::VectorXd& theta_bnd, const Eigen::VectorXd& eq_diag) const;

    const Model& model_;
    int n_ = 0, me_ = 0, mi_ = 0;
    Eigen::SparseMatrix<double, Eigen::RowMajor> eq_mat_, ineq_mat_;
    Eigen::VectorXd eq_rhs_, ineq_rhs_;
    Eigen::VectorXd cost_;

    Eigen::SparseMatrix<double> kkt_;  // lower triangle, dimension n_ + me_
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
    bool analyzed_ = false;

    struct HContrib {
        int offset;   // index into kkt_ value array
        int row;      // inequality row
        int col_j, col_k;
        double prod;  // G(row, j) * G(row, k)
    };
    std::vector<HContrib> contribs_;
    struct EEntry {
        int offset;
        int col;
        double value;
    };
    std::vector<EEntry> eq_entries_;
    std::vector<int> diag_offset_;           // n_ + me_ diagonal offsets
    std::vector<signed char> fixed_;         // per-variable fixed mask (current solve)
};

/// One-shot LP relaxation solve (integrality ignored) with the model's own
/// bounds; used by tests and the exhaustive-enumeration oracle.
LpResult solve_lp_relaxation(const Model& model, const LpOptions& opts = {});

}  // namespace manip::milp
