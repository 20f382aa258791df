#pragma once

#include <array>
#include <vector>

#include "manip/milp/model.hpp"

namespace manip::relax {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    bool finite() const;
    bool contains(double v, double tol = 1e-9) const { return v >= lo - tol && v <= hi + tol; }
};

/// Auxiliary variable w standing in for the product x * y, together with the
/// global box over which the relaxation must be sound.
struct BilinearTerm {
    milp::VarId w, x, y;
    Interval x_bounds, y_bounds;
};

enum class Axis { X, Y };

struct Region {
    Interval x, y;
};

/// A partition of the bilinear box into regions along one axis, with the
/// constant binary codewords d_ck used by the log-encoded formulation.
struct PartitionSpec {
    Axis axis = Axis::X;
    std::vector<Region> region_bounds;
    std::vector<std::vector<int>> codes;  // one codeword per region, length ceil(log2 C)

    int regions() const { return static_cast<int>(region_bounds.size()); }
    int code_length() const { return codes.empty() ? 0 : static_cast<int>(codes.front().size()); }

    /// Equal-width regions along `axis` with plain binary codewords in region
    /// order (region 2 of 4 gets (0,1), region 3 gets (1,0)).
    static PartitionSpec uniform(const BilinearTerm& term, int count, Axis axis = Axis::X);

    /// Throws std::invalid_argument unless the regions tile the term's box on
    /// the partitioned axis, stay inside it on the other, and the codewords
    /// are distinct 0/1 words of equal length.
    void validate(const BilinearTerm& term) const;
};

/// Worst-case distance between w and x*y inside the envelope of the given
/// box: (xU - xL)(yU - yL) / 4, attained at the box center.
double envelope_gap(const Interval& x, const Interval& y);

/// Interval-arithmetic bound on |expr + constant| over the variable boxes,
/// times a 1.05 safety factor. Throws std::invalid_argument when any
/// participating variable is unbounded.
double compute_big_m(const milp::Model& model, const milp::LinExpr& expr, double constant = 0.0);

/// Big-M gated constraint: when `indicator` equals `active_value` (0 or 1)
/// the row expr <= rhs is enforced; otherwise it is slack by at least big_m.
/// The indicator may be a continuous variable whose value is >= 1 whenever
/// the row should be off (the log-encoded eta has that shape).
int implication(milp::Model& model, milp::VarId indicator, int active_value, milp::LinExpr expr,
                double rhs, double big_m);

/// The four McCormick inequalities for w ~ x*y over the term's box.
std::array<int, 4> mccormick(milp::Model& model, const BilinearTerm& term);

/// Region-selection machinery shared by every product over the same
/// partitioned variable: either one binary per region (naive) or
/// log2-many bit binaries with mismatch counters (encoded). Products are
/// attached afterwards; their envelope rows reuse the same selectors.
struct RegionSelector {
    PartitionSpec spec;        // encoded selectors hold the padded spec
    milp::VarId x;
    Interval x_bounds;
    bool encoded = false;
    std::vector<milp::VarId> nu;               // encoded: bit binaries, size K
    std::vector<std::vector<milp::VarId>> s;   // encoded: per region, per bit
    std::vector<milp::VarId> eta;              // per region: binary (naive) or [0, K] (encoded)
    std::vector<int> rows;
};

RegionSelector make_region_selector_naive(milp::Model& model, milp::VarId x, Interval x_bounds,
                                          const PartitionSpec& spec);
RegionSelector make_region_selector_encoded(milp::Model& model, milp::VarId x, Interval x_bounds,
                                            const PartitionSpec& spec);

/// Adds the per-region gated envelope for one product w ~ x*y over the
/// selector's partition: region x-slice crossed with y_bounds. Products
/// with different y boxes may share one selector.
void attach_product(milp::Model& model, RegionSelector& selector, milp::VarId w, milp::VarId y,
                    Interval y_bounds);

struct NaivePiecewise {
    PartitionSpec spec;
    std::vector<milp::VarId> eta;  // C binaries
    std::vector<int> rows;
};

struct BinaryEncoded {
    PartitionSpec spec;                        // padded when C is not a power of two
    std::vector<milp::VarId> nu;               // ceil(log2 C) binaries
    std::vector<std::vector<milp::VarId>> s;   // per region, per bit, in [0, 1]
    std::vector<milp::VarId> eta;              // per region, in [0, K]
    std::vector<int> rows;
};

/// One-binary-per-region piecewise McCormick. A single region is equivalent
/// to the plain envelope.
NaivePiecewise piecewise_naive(milp::Model& model, const BilinearTerm& term,
                               const PartitionSpec& spec);

/// Log-encoded piecewise McCormick. Region counts that are not powers of
/// two are padded by splitting the last region until every codeword of
/// length ceil(log2 C) is used.
BinaryEncoded binary_encoded(milp::Model& model, const BilinearTerm& term, const PartitionSpec& spec);

}  // namespace manip::relax
