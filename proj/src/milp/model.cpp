#include "manip/milp/model.hpp"

#include <algorithm>

namespace manip::milp {

VarId Model::add_var(std::string name, VarKind kind, double lb, double ub) {
    if (std::isnan(lb) || std::isnan(ub) || lb > ub)
        throw std::invalid_argument("invalid bounds for variable " + name);
    if (kind == VarKind::Binary && (lb != 0.0 || ub != 1.0))
        throw std::invalid_argument("binary variable must have bounds [0, 1]: " + name);
    if (kind == VarKind::Binary) ++num_binary_;
    vars_.push_back(Variable{std::move(name), kind, lb, ub});
    return VarId{static_cast<int>(vars_.size()) - 1};
}

int Model::add_constraint(LinExpr expr, Sense sense, double rhs) {
    if (expr.empty()) throw std::invalid_argument("empty constraint expression");
    if (!std::isfinite(rhs)) throw std::invalid_argument("constraint rhs must be finite");
    for (const auto& t : expr) {
        check(t.var);
        if (!std::isfinite(t.coef)) throw std::invalid_argument("constraint coefficient must be finite");
    }
    cons_.push_back(Constraint{std::move(expr), sense, rhs});
    return static_cast<int>(cons_.size()) - 1;
}

void Model::set_objective(LinExpr expr, ObjSense sense) {
    for (const auto& t : expr) {
        check(t.var);
        if (!std::isfinite(t.coef)) throw std::invalid_argument("objective coefficient must be finite");
    }
    objective_ = std::move(expr);
    obj_sense_ = sense;
}

void Model::set_bounds(VarId v, double lb, double ub) {
    if (std::isnan(lb) || std::isnan(ub) || lb > ub)
        throw std::invalid_argument("invalid bounds");
    auto& var = vars_.at(check(v));
    var.lb = lb;
    var.ub = ub;
}

double Model::eval(const LinExpr& expr, std::span<const double> values) const {
    double acc = 0.0;
    for (const auto& t : expr) acc += t.coef * values[check(t.var)];
    return acc;
}

ViolationReport verify_solution(const Model& model, std::span<const double> values) {
    ViolationReport rep;
    for (int j = 0; j < model.num_vars(); ++j) {
        const auto& v = model.variables()[static_cast<size_t>(j)];
        const double x = values[static_cast<size_t>(j)];
        rep.max_bound_violation = std::max({rep.max_bound_violation, v.lb - x, x - v.ub});
        if (v.kind == VarKind::Binary)
            rep.max_integrality_gap = std::max(rep.max_integrality_gap, std::abs(x - std::round(x)));
    }
    for (const auto& c : model.constraints()) {
        const double lhs = model.eval(c.expr, values);
        double viol = 0.0;
        switch (c.sense) {
            case Sense::Le: viol = lhs - c.rhs; break;
            case Sense::Ge: viol = c.rhs - lhs; break;
            case Sense::Eq: viol = std::abs(lhs - c.rhs); break;
        }
        rep.max_row_violation = std::max(rep.max_row_violation, viol);
    }
    return rep;
}

}  // namespace manip::milp
