#include "manip/relax.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <stdexcept>

namespace manip::relax {
namespace {

using milp::LinExpr;
using milp::Model;
using milp::Sense;
using milp::VarId;

void append(LinExpr& expr, VarId v, double coef) {
    if (coef != 0.0) expr.push_back({v, coef});
}

struct Row {
    LinExpr expr;
    double rhs;
};

// The four Eq.-style envelope inequalities for w ~ x*y over a box, in
// <=-form. Exact at every corner of the box.
std::array<Row, 4> envelope_rows(VarId w, VarId x, VarId y, const Interval& bx, const Interval& by) {
    std::array<Row, 4> rows;
    auto make = [&](double wc, double yc, double xc, double rhs) {
        Row r;
        r.expr.push_back({w, wc});
        append(r.expr, y, yc);
        append(r.expr, x, xc);
        r.rhs = rhs;
        return r;
    };
    rows[0] = make(-1.0, bx.lo, by.lo, bx.lo * by.lo);   // w >= xL y + yL x - xL yL
    rows[1] = make(-1.0, bx.hi, by.hi, bx.hi * by.hi);   // w >= xU y + yU x - xU yU
    rows[2] = make(1.0, -bx.hi, -by.lo, -bx.hi * by.lo); // w <= xU y + yL x - xU yL
    rows[3] = make(1.0, -bx.lo, -by.hi, -bx.lo * by.hi); // w <= xL y + yU x - xL yU
    return rows;
}

void require_inside(const Model& model, VarId v, const Interval& bounds, const char* which) {
    const auto& var = model.var(v);
    const double tol = 1e-9 * (1.0 + std::max(std::abs(bounds.lo), std::abs(bounds.hi)));
    if (var.lb < bounds.lo - tol || var.ub > bounds.hi + tol) {
        throw std::invalid_argument(std::string(which) + " variable bounds exceed the term box");
    }
}

int add_gated_row(Model& model, const RegionSelector& sel, int region, Row row) {
    const double big_m = compute_big_m(model, row.expr, -row.rhs);
    if (sel.encoded) {
        // eta == 0 activates the region; any mismatch makes eta >= 1.
        row.expr.push_back({sel.eta[static_cast<size_t>(region)], -big_m});
        return model.add_constraint(std::move(row.expr), Sense::Le, row.rhs);
    }
    row.expr.push_back({sel.eta[static_cast<size_t>(region)], big_m});
    return model.add_constraint(std::move(row.expr), Sense::Le, row.rhs + big_m);
}

void add_gated_box(Model& model, RegionSelector& sel, int region, VarId v, const Interval& tight,
                   const Interval& global) {
    const double tol = 1e-12 * (1.0 + std::max(std::abs(global.lo), std::abs(global.hi)));
    if (tight.hi < global.hi - tol) {
        sel.rows.push_back(add_gated_row(model, sel, region, {1.0 * v, tight.hi}));
    }
    if (tight.lo > global.lo + tol) {
        sel.rows.push_back(add_gated_row(model, sel, region, {-1.0 * v, -tight.lo}));
    }
}

// Regions with the partitioned interval in the .x slot regardless of the
// spec's axis; envelope algebra is symmetric under the swap.
PartitionSpec normalized(const PartitionSpec& spec) {
    if (spec.axis == Axis::X) return spec;
    PartitionSpec out = spec;
    out.axis = Axis::X;
    for (Region& r : out.region_bounds) std::swap(r.x, r.y);
    return out;
}

std::vector<int> next_unused_code(std::set<std::vector<int>>& used, int length) {
    for (long value = 0; value < (1L << length); ++value) {
        std::vector<int> code(static_cast<size_t>(length));
        for (int k = 0; k < length; ++k) code[static_cast<size_t>(k)] = (value >> (length - 1 - k)) & 1;
        if (used.insert(code).second) return code;
    }
    throw std::logic_error("codeword space exhausted");
}

// Splits the last region until the count reaches 2^K, assigning the unused
// codewords to the new halves.
PartitionSpec pad_to_power_of_two(PartitionSpec spec) {
    const int k = spec.code_length();
    const long target = 1L << k;
    std::set<std::vector<int>> used(spec.codes.begin(), spec.codes.end());
    while (spec.regions() < target) {
        Region last = spec.region_bounds.back();
        spec.region_bounds.pop_back();
        const double mid = 0.5 * (last.x.lo + last.x.hi);
        Region left = last, right = last;
        left.x.hi = mid;
        right.x.lo = mid;
        spec.region_bounds.push_back(left);
        spec.region_bounds.push_back(right);
        spec.codes.push_back(next_unused_code(used, k));
    }
    return spec;
}

RegionSelector make_selector(Model& model, VarId x, Interval x_bounds, const PartitionSpec& raw,
                             bool encoded) {
    PartitionSpec spec = normalized(raw);
    if (spec.regions() < 1) throw std::invalid_argument("partition needs at least one region");
    if (encoded) spec = pad_to_power_of_two(std::move(spec));

    RegionSelector sel;
    sel.x = x;
    sel.x_bounds = x_bounds;
    sel.encoded = encoded;
    require_inside(model, x, x_bounds, "partitioned");

    const int c_count = spec.regions();
    const int k_count = spec.code_length();
    if (!encoded) {
        LinExpr one_hot;
        for (int c = 0; c < c_count; ++c) {
            sel.eta.push_back(model.add_var("eta" + std::to_string(c), milp::VarKind::Binary, 0.0, 1.0));
            one_hot += {sel.eta.back(), 1.0};
        }
        sel.rows.push_back(model.add_constraint(one_hot, Sense::Eq, 1.0));
    } else {
        for (int k = 0; k < k_count; ++k) {
            sel.nu.push_back(model.add_var("nu" + std::to_string(k), milp::VarKind::Binary, 0.0, 1.0));
        }
        const double m_s = compute_big_m(model, {}, 1.0);  // s_ck lives in [0, 1]
        for (int c = 0; c < c_count; ++c) {
            sel.s.emplace_back();
            sel.eta.push_back(model.add_var("eta" + std::to_string(c), milp::VarKind::Continuous, 0.0,
                                            static_cast<double>(k_count)));
            LinExpr mismatch_sum;
            for (int k = 0; k < k_count; ++k) {
                const VarId s_ck = model.add_var("s" + std::to_string(c) + "_" + std::to_string(k),
                                                 milp::VarKind::Continuous, 0.0, 1.0);
                sel.s.back().push_back(s_ck);
                mismatch_sum += {s_ck, 1.0};
                const int d = spec.codes[static_cast<size_t>(c)][static_cast<size_t>(k)];
                // s_ck >= nu_k - d and s_ck >= d - nu_k.
                LinExpr above = -1.0 * s_ck;
                above += {sel.nu[static_cast<size_t>(k)], 1.0};
                sel.rows.push_back(model.add_constraint(above, Sense::Le, static_cast<double>(d)));
                LinExpr below = -1.0 * s_ck;
                below += {sel.nu[static_cast<size_t>(k)], -1.0};
                sel.rows.push_back(model.add_constraint(below, Sense::Le, static_cast<double>(-d)));
                // s_ck <= M (nu_k + d - 2 nu_k d): pins s_ck to 0 on a match.
                LinExpr cap = 1.0 * s_ck;
                if (d == 0) {
                    cap += {sel.nu[static_cast<size_t>(k)], -m_s};
                    sel.rows.push_back(model.add_constraint(cap, Sense::Le, 0.0));
                } else {
                    cap += {sel.nu[static_cast<size_t>(k)], m_s};
                    sel.rows.push_back(model.add_constraint(cap, Sense::Le, m_s));
                }
            }
            mismatch_sum += {sel.eta.back(), -1.0};
            if (k_count > 0) {
                sel.rows.push_back(model.add_constraint(mismatch_sum, Sense::Eq, 0.0));
            }
        }
    }
    sel.spec = std::move(spec);
    for (int c = 0; c < sel.spec.regions(); ++c) {
        add_gated_box(model, sel, c, x, sel.spec.region_bounds[static_cast<size_t>(c)].x, x_bounds);
    }
    return sel;
}

}  // namespace

bool Interval::finite() const { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; }

double envelope_gap(const Interval& x, const Interval& y) { return x.width() * y.width() / 4.0; }

double compute_big_m(const milp::Model& model, const milp::LinExpr& expr, double constant) {
    double lo = constant, hi = constant;
    for (const auto& term : expr) {
        const auto& v = model.var(term.var);
        if (!std::isfinite(v.lb) || !std::isfinite(v.ub)) {
            throw std::invalid_argument("compute_big_m needs bounded variables: " + v.name);
        }
        lo += std::min(term.coef * v.lb, term.coef * v.ub);
        hi += std::max(term.coef * v.lb, term.coef * v.ub);
    }
    return 1.05 * std::max(std::abs(lo), std::abs(hi));
}

int implication(milp::Model& model, milp::VarId indicator, int active_value, milp::LinExpr expr,
                double rhs, double big_m) {
    if (!std::isfinite(big_m)) throw std::invalid_argument("implication needs a finite big-M");
    if (active_value != 0 && active_value != 1) {
        throw std::invalid_argument("active_value must be 0 or 1");
    }
    if (active_value == 1) {
        expr.push_back({indicator, big_m});
        return model.add_constraint(std::move(expr), Sense::Le, rhs + big_m);
    }
    expr.push_back({indicator, -big_m});
    return model.add_constraint(std::move(expr), Sense::Le, rhs);
}

std::array<int, 4> mccormick(milp::Model& model, const BilinearTerm& term) {
    if (!term.x_bounds.finite() || !term.y_bounds.finite()) {
        throw std::invalid_argument("mccormick needs finite bounds on x and y");
    }
    require_inside(model, term.x, term.x_bounds, "x");
    require_inside(model, term.y, term.y_bounds, "y");
    auto rows = envelope_rows(term.w, term.x, term.y, term.x_bounds, term.y_bounds);
    std::array<int, 4> ids;
    for (size_t i = 0; i < rows.size(); ++i) {
        ids[i] = model.add_constraint(std::move(rows[i].expr), Sense::Le, rows[i].rhs);
    }
    return ids;
}

PartitionSpec PartitionSpec::uniform(const BilinearTerm& term, int count, Axis axis) {
    if (count < 1) throw std::invalid_argument("partition count must be at least 1");
    const Interval& split = axis == Axis::X ? term.x_bounds : term.y_bounds;
    const Interval& other = axis == Axis::X ? term.y_bounds : term.x_bounds;
    if (!split.finite() || !(split.lo < split.hi)) {
        throw std::invalid_argument("partitioned axis needs lower < upper");
    }
    if (!other.finite()) throw std::invalid_argument("bilinear term bounds must be finite");
    PartitionSpec spec;
    spec.axis = axis;
    const int k = count <= 1 ? 0 : static_cast<int>(std::bit_width(static_cast<unsigned>(count - 1)));
    for (int c = 0; c < count; ++c) {
        const double lo = split.lo + split.width() * c / count;
        const double hi = c + 1 == count ? split.hi : split.lo + split.width() * (c + 1) / count;
        Region r;
        (axis == Axis::X ? r.x : r.y) = {lo, hi};
        (axis == Axis::X ? r.y : r.x) = other;
        spec.region_bounds.push_back(r);
        std::vector<int> code(static_cast<size_t>(k));
        for (int bit = 0; bit < k; ++bit) code[static_cast<size_t>(bit)] = (c >> (k - 1 - bit)) & 1;
        spec.codes.push_back(std::move(code));
    }
    return spec;
}

void PartitionSpec::validate(const BilinearTerm& term) const {
    if (region_bounds.empty()) throw std::invalid_argument("partition needs at least one region");
    if (codes.size() != region_bounds.size()) {
        throw std::invalid_argument("one codeword per region required");
    }
    const Interval& split = axis == Axis::X ? term.x_bounds : term.y_bounds;
    const Interval& other = axis == Axis::X ? term.y_bounds : term.x_bounds;
    const double tol = 1e-9 * (1.0 + std::max(std::abs(split.lo), std::abs(split.hi)));

    std::vector<Interval> pieces;
    for (const Region& r : region_bounds) {
        const Interval& p = axis == Axis::X ? r.x : r.y;
        const Interval& q = axis == Axis::X ? r.y : r.x;
        if (!(p.lo < p.hi)) throw std::invalid_argument("region has no width on the partitioned axis");
        if (q.lo < other.lo - tol || q.hi > other.hi + tol) {
            throw std::invalid_argument("region exceeds the global box");
        }
        pieces.push_back(p);
    }
    std::sort(pieces.begin(), pieces.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    if (std::abs(pieces.front().lo - split.lo) > tol || std::abs(pieces.back().hi - split.hi) > tol) {
        throw std::invalid_argument("regions do not span the partitioned axis");
    }
    for (size_t i = 1; i < pieces.size(); ++i) {
        if (std::abs(pieces[i].lo - pieces[i - 1].hi) > tol) {
            throw std::invalid_argument("regions leave a gap or overlap");
        }
    }
    const size_t k = codes.front().size();
    std::set<std::vector<int>> seen;
    for (const auto& code : codes) {
        if (code.size() != k) throw std::invalid_argument("codewords must share one length");
        for (int bit : code) {
            if (bit != 0 && bit != 1) throw std::invalid_argument("codeword bits must be 0 or 1");
        }
        if (!seen.insert(code).second) throw std::invalid_argument("duplicate codeword");
    }
}

RegionSelector make_region_selector_naive(milp::Model& model, milp::VarId x, Interval x_bounds,
                                          const PartitionSpec& spec) {
    return make_selector(model, x, x_bounds, spec, false);
}

RegionSelector make_region_selector_encoded(milp::Model& model, milp::VarId x, Interval x_bounds,
                                            const PartitionSpec& spec) {
    return make_selector(model, x, x_bounds, spec, true);
}

void attach_product(milp::Model& model, RegionSelector& selector, milp::VarId w, milp::VarId y,
                    Interval y_bounds) {
    if (!y_bounds.finite()) throw std::invalid_argument("product variable needs finite bounds");
    require_inside(model, y, y_bounds, "y");
    // Envelopes cross the region's slice of the partitioned axis with this
    // product's own y box; the spec's region y-intervals describe only the
    // term the partition was built from, which need not be this one.
    for (int c = 0; c < selector.spec.regions(); ++c) {
        const Region& r = selector.spec.region_bounds[static_cast<size_t>(c)];
        for (Row& row : envelope_rows(w, selector.x, y, r.x, y_bounds)) {
            selector.rows.push_back(add_gated_row(model, selector, c, std::move(row)));
        }
    }
}

NaivePiecewise piecewise_naive(milp::Model& model, const BilinearTerm& term,
                               const PartitionSpec& spec) {
    spec.validate(term);
    const bool on_x = spec.axis == Axis::X;
    RegionSelector sel = make_region_selector_naive(model, on_x ? term.x : term.y,
                                                    on_x ? term.x_bounds : term.y_bounds, spec);
    attach_product(model, sel, term.w, on_x ? term.y : term.x, on_x ? term.y_bounds : term.x_bounds);
    return {std::move(sel.spec), std::move(sel.eta), std::move(sel.rows)};
}

BinaryEncoded binary_encoded(milp::Model& model, const BilinearTerm& term, const PartitionSpec& spec) {
    spec.validate(term);
    const bool on_x = spec.axis == Axis::X;
    RegionSelector sel = make_region_selector_encoded(model, on_x ? term.x : term.y,
                                                      on_x ? term.x_bounds : term.y_bounds, spec);
    attach_product(model, sel, term.w, on_x ? term.y : term.x, on_x ? term.y_bounds : term.x_bounds);
    return {std::move(sel.spec), std::move(sel.nu), std::move(sel.s), std::move(sel.eta),
            std::move(sel.rows)};
}

}  // namespace manip::relax
