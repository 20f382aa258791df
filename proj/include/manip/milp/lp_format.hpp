#pragma once

#include <string>

#include "manip/milp/model.hpp"

namespace manip::milp {

/// Serializes the model in LP text format with deterministic section order:
/// Minimize, Subject To, Bounds, Binaries, End. Variables keep model order,
/// constraints are labeled c0, c1, ... in model order, and coefficients are
/// printed with 17 significant digits so every value survives a round-trip
/// exactly. Feasibility models carry the objective line "obj: 0".
std::string write_lp_string(const Model& model);
void write_lp(const Model& model, const std::string& path);

/// Parses LP text back into a model. Supports the subset emitted by the
/// writer plus common hand-written variants: Maximize (negated into
/// Minimize), free/one-sided bounds, inline comments after a backslash, and
/// multi-line expressions. Unknown sections raise std::runtime_error.
Model read_lp_string(const std::string& text);
Model read_lp(const std::string& path);

}  // namespace manip::milp
