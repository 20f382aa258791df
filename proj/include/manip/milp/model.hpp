#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace manip::milp {

enum class VarKind { Continuous, Binary };
enum class Sense { Le, Eq, Ge };
enum class ObjSense { Minimize, Feasibility };

/// Opaque handle into a model's variable table. Valid only for the model
/// that issued it.
struct VarId {
    int index = -1;
    bool valid() const { return index >= 0; }
    friend bool operator==(const VarId&, const VarId&) = default;
};

struct LinTerm {
    VarId var;
    double coef = 0.0;
};
using LinExpr = std::vector<LinTerm>;

inline LinExpr operator*(double c, VarId v) { return {{v, c}}; }
inline LinExpr& operator+=(LinExpr& e, LinTerm t) {
    e.push_back(t);
    return e;
}

struct Variable {
    std::string name;
    VarKind kind = VarKind::Continuous;
    double lb = 0.0;
    double ub = 0.0;
};

struct Constraint {
    LinExpr expr;
    Sense sense = Sense::Le;
    double rhs = 0.0;
};

/// Solver-neutral mixed-integer linear model: a variable table, linear
/// constraints with <= / = / >= senses, and a sparse linear objective.
class Model {
public:
    VarId add_var(std::string name, VarKind kind, double lb, double ub);
    int add_constraint(LinExpr expr, Sense sense, double rhs);
    void set_objective(LinExpr expr, ObjSense sense = ObjSense::Minimize);

    /// Tightens a variable's bounds; lb may equal ub to fix it.
    void set_bounds(VarId v, double lb, double ub);

    int num_vars() const { return static_cast<int>(vars_.size()); }
    int num_constraints() const { return static_cast<int>(cons_.size()); }
    int num_binaries() const { return num_binary_; }

    const Variable& var(VarId v) const { return vars_.at(check(v)); }
    const Variable& var(int index) const { return vars_.at(check(VarId{index})); }
    const Constraint& constraint(int i) const { return cons_.at(static_cast<size_t>(i)); }
    const std::vector<Variable>& variables() const { return vars_; }
    const std::vector<Constraint>& constraints() const { return cons_; }
    const LinExpr& objective() const { return objective_; }
    ObjSense objective_sense() const { return obj_sense_; }

    double eval(const LinExpr& expr, std::span<const double> values) const;

private:
    size_t check(VarId v) const {
        if (!v.valid() || v.index >= num_vars()) throw std::invalid_argument("unknown VarId");
        return static_cast<size_t>(v.index);
    }

    std::vector<Variable> vars_;
    std::vector<Constraint> cons_;
    LinExpr objective_;
    ObjSense obj_sense_ = ObjSense::Feasibility;
    int num_binary_ = 0;
};

/// Independent re-check of a candidate assignment against the raw model data.
struct ViolationReport {
    double max_row_violation = 0.0;
    double max_bound_violation = 0.0;
    double max_integrality_gap = 0.0;

    double worst() const {
        return std::max({max_row_violation, max_bound_violation, max_integrality_gap});
    }
};

ViolationReport verify_solution(const Model& model, std::span<const double> values);

}  // namespace manip::milp
