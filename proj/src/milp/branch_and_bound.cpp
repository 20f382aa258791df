#include "manip/milp/branch_and_bound.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>

#include "manip/milp/interior_point.hpp"

namespace manip::milp {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Node {
    int parent = -1;
    int branch_var = -1;
    signed char branch_val = 0;
    int depth = 0;
    double bound = -kInf;
};

struct QueueEntry {
    double bound;
    int depth;
    long seq;
    int idx;
};

struct QueueCompare {
    bool operator()(const QueueEntry& a, const QueueEntry& b) const {
        if (a.bound != b.bound) return a.bound > b.bound;  // smaller bound first
        if (a.depth != b.depth) return a.depth < b.depth;  // then deeper (diving)
        return a.seq < b.seq;                              // then most recent
    }
};

}  // namespace

Solution solve(const Model& model, const SolveConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    const auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    const int n = model.num_vars();
    std::vector<int> binaries;
    for (int j = 0; j < n; ++j) {
        if (model.var(j).kind == VarKind::Binary) binaries.push_back(j);
    }
    const bool pure_feasibility =
        model.objective_sense() == ObjSense::Feasibility || model.objective().empty();

    Eigen::VectorXd root_lo(n), root_hi(n);
    for (int j = 0; j < n; ++j) {
        root_lo[j] = model.var(j).lb;
        root_hi[j] = model.var(j).ub;
    }

    LpSolver lp(model);
    LpOptions lp_opts;

    Solution sol;
    sol.status = SolveStatus::Infeasible;
    double incumbent_obj = kInf;
    bool have_incumbent = false;

    auto objective_at = [&](const Eigen::VectorXd& x) {
        double v = 0.0;
        if (model.objective_sense() == ObjSense::Minimize) {
            for (const LinTerm& term : model.objective()) v += term.coef * x[term.var.index];
        }
        return v;
    };
    auto try_accept = [&](const Eigen::VectorXd& x) {
        std::vector<double> values(x.data(), x.data() + n);
        ViolationReport report = verify_solution(model, values);
        if (report.worst() > config.tolerance) return false;
        const double obj = objective_at(x);
        if (!have_incumbent || obj < incumbent_obj - 1e-12) {
            have_incumbent = true;
            incumbent_obj = obj;
            sol.values = std::move(values);
            sol.objective = obj;
        }
        return true;
    };
    auto integral = [&](const Eigen::VectorXd& x) {
        for (int j : binaries) {
            if (std::abs(x[j] - std::round(x[j])) > config.tolerance) return false;
        }
        return true;
    };

    // Node LP: objective models get a bounding pass with an elastic fallback
    // for infeasibility certification; feasibility models go straight to the
    // elastic formulation, whose zero-violation optima are feasible points.
    struct NodeLpOutcome {
        bool infeasible = false;
        bool have_point = false;
        bool have_bound = false;
        double bound = -kInf;
        Eigen::VectorXd x;
    };
    auto solve_node = [&](const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
        NodeLpOutcome out;
        if (!pure_feasibility) {
            LpResult res = lp.solve(lo, hi, false, lp_opts);
            if (res.status == LpStatus::Optimal) {
                out.have_point = true;
                out.have_bound = true;
                out.bound = res.objective;
                out.x = std::move(res.x);
                return out;
            }
        }
        LpResult el = lp.solve(lo, hi, true, lp_opts);
        if (el.status == LpStatus::Optimal && el.violation > lp_opts.feas_eps) {
            out.infeasible = true;
            return out;
        }
        if (el.status == LpStatus::Optimal || el.status == LpStatus::IterationLimit) {
            out.have_point = true;
            out.x = std::move(el.x);
            if (pure_feasibility && el.status == LpStatus::Optimal) {
                out.have_bound = true;
                out.bound = 0.0;
            }
        }
        return out;
    };

    // Rounding heuristic: fix every binary to its rounded relaxation value
    // and solve for the continuous completion.
    auto rounding_heuristic = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                  const Eigen::VectorXd& hi) {
        if (binaries.empty()) return false;
        Eigen::VectorXd flo = lo, fhi = hi;
        for (int j : binaries) {
            const double v = std::round(std::clamp(x[j], lo[j], hi[j]));
            flo[j] = fhi[j] = v;
        }
        if (!pure_feasibility) {
            LpResult res = lp.solve(flo, fhi, false, lp_opts);
            if (res.status == LpStatus::Optimal && integral(res.x)) return try_accept(res.x);
        }
        LpResult el = lp.solve(flo, fhi, true, lp_opts);
        if (el.status == LpStatus::Optimal && el.violation <= lp_opts.feas_eps && integral(el.x)) {
            return try_accept(el.x);
        }
        return false;
    };

    std::vector<Node> arena;
    std::priority_queue<QueueEntry, std::vector<QueueEntry>, QueueCompare> queue;
    arena.push_back({});
    long seq = 0;
    queue.push({-kInf, 0, seq++, 0});

    Eigen::VectorXd lo(n), hi(n);
    bool hit_time = false, hit_nodes = false, numerical = false;

    while (!queue.empty()) {
        if (elapsed() > config.time_limit) {
            hit_time = true;
            break;
        }
        if (sol.nodes >= config.node_limit) {
            hit_nodes = true;
            break;
        }
        const QueueEntry entry = queue.top();
        queue.pop();
        if (have_incumbent && entry.bound >= incumbent_obj - 1e-9) continue;
        ++sol.nodes;

        lo = root_lo;
        hi = root_hi;
        for (int a = entry.idx; a != -1; a = arena[a].parent) {
            const Node& node = arena[a];
            if (node.branch_var >= 0) lo[node.branch_var] = hi[node.branch_var] = node.branch_val;
        }

        NodeLpOutcome out = solve_node(lo, hi);
        if (out.infeasible) continue;
        if (!out.have_point) {
            numerical = true;
            continue;
        }
        if (out.have_bound && have_incumbent && out.bound >= incumbent_obj - 1e-9) continue;

        if (integral(out.x) && try_accept(out.x)) {
            if (pure_feasibility) break;
            continue;
        }

        if (!have_incumbent && sol.nodes % 8 == 1) rounding_heuristic(out.x, lo, hi);
        if (pure_feasibility && have_incumbent) break;

        // Most fractional binary, lowest index on ties.
        int pick = -1;
        double best_score = -1.0;
        for (int j : binaries) {
            if (hi[j] - lo[j] < 0.5) continue;  // already fixed on this node
            const double f = out.x[j] - std::floor(out.x[j]);
            const double score = std::min(f, 1.0 - f);
            if (score > best_score + 1e-12) {
                best_score = score;
                pick = j;
            }
        }
        if (pick < 0) continue;  // all binaries fixed yet not integral: LP noise, drop

        const double child_bound = out.have_bound ? out.bound : arena[entry.idx].bound;
        const signed char preferred = static_cast<signed char>(std::round(out.x[pick]));
        const int depth = entry.depth + 1;
        for (const signed char val : {static_cast<signed char>(1 - preferred), preferred}) {
            arena.push_back({entry.idx, pick, val, depth, child_bound});
            queue.push({child_bound, depth, seq++, static_cast<int>(arena.size()) - 1});
        }
    }

    if (have_incumbent) {
        const bool exhausted = queue.empty() || pure_feasibility;
        sol.status = pure_feasibility ? SolveStatus::Feasible
                     : (exhausted && !hit_time && !hit_nodes) ? SolveStatus::Optimal
                                                              : SolveStatus::Feasible;
        return sol;
    }
    if (hit_time) {
        sol.status = SolveStatus::TimeLimit;
        sol.message = "time limit before a feasible solution";
    } else if (hit_nodes) {
        sol.status = SolveStatus::NodeLimit;
        sol.message = "node limit before a feasible solution";
    } else if (numerical) {
        sol.status = SolveStatus::NumericalTrouble;
        sol.message = "search exhausted with unresolved nodes";
    } else {
        sol.status = SolveStatus::Infeasible;
    }
    return sol;
}

}  // namespace manip::milp
