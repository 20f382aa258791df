#pragma once

#include <string>
#include <vector>

#include "manip/milp/model.hpp"

namespace manip::milp {

enum class SolveStatus { Optimal, Feasible, Infeasible, TimeLimit, NodeLimit, NumericalTrouble };

struct SolveConfig {
    double time_limit = 120.0;   // seconds of wall clock
    long node_limit = 2000000;
    double tolerance = 1e-6;     // integrality and constraint tolerance
    bool verbose = false;
};

struct Solution {
    SolveStatus status = SolveStatus::NumericalTrouble;
    std::vector<double> values;  // one entry per model variable when available
    double objective = 0.0;
    long nodes = 0;
    std::string message;

    bool feasible() const { return status == SolveStatus::Optimal || status == SolveStatus::Feasible; }
};

/// Solves a mixed-binary model by best-first branch and bound over an
/// interior-point LP relaxation. Deterministic: node order depends only on
/// the model. Every returned solution has been re-verified against the model
/// rows and bounds at the configured tolerance.
///
/// Feasibility models return at the first integral solution; objective
/// models prove optimality or report the incumbent at a limit.
Solution solve(const Model& model, const SolveConfig& config = {});

}  // namespace manip::milp
