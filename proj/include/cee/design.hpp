#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cee/formula.hpp"
#include "cee/panel.hpp"

namespace cee {

// Cubic (by default) B-spline basis on equally spaced knots. The knot
// vector extends `degree` spacings beyond [lo, hi] on each side so that the
// basis is a partition of unity on [lo, hi].
class PSplineBasis {
public:
    PSplineBasis() = default;
    PSplineBasis(double lo, double hi, int num_basis, int degree = 3);

    int num_basis() const noexcept { return num_basis_; }
    int degree() const noexcept { return degree_; }
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    const std::vector<double>& knots() const noexcept { return knots_; }

    // Writes all num_basis() values at x into `out`. Points outside
    // [lo, hi] are clamped to the boundary.
    void evaluate(double x, std::span<double> out) const;
    Eigen::VectorXd evaluate(double x) const;

    // D'D for the order-`order` difference matrix D.
    Eigen::MatrixXd penalty(int order) const;

private:
    double lo_ = 0.0, hi_ = 1.0, spacing_ = 1.0;
    int num_basis_ = 0;
    int degree_ = 3;
    std::vector<double> knots_;
};

// Difference matrix of the given order for k coefficients, (k - order) x k.
Eigen::MatrixXd difference_matrix(int k, int order);

// A smooth of one variable with a sum-to-zero identifiability constraint
// (column means over the fitting rows). The spline coefficient vector is
// reparameterized as constraint * delta.
struct SmoothBasis {
    std::string var;
    PSplineBasis basis;
    Eigen::MatrixXd constraint;  // K x (K - 1)
    Eigen::MatrixXd penalty;     // (K - 1) x (K - 1), constraint' P constraint
    int penalty_order = 2;
};

struct TermColumns {
    Term term;
    std::size_t first = 0;
    std::size_t count = 0;
    int smooth = -1;  // index into DesignLayout::smooths for spline terms
};

// Column layout learned from fitting rows. Reused verbatim to build
// prediction designs (e.g. with the treatment overridden).
struct DesignLayout {
    FormulaSpec spec;
    std::vector<TermColumns> terms;
    std::vector<SmoothBasis> smooths;
    std::vector<std::string> column_names;
    std::size_t ncols = 0;

    // Column ranges of penalized blocks with their penalty matrices, one per
    // spline term (main or interacted).
    struct PenaltyBlock {
        std::size_t first = 0;
        std::size_t count = 0;
        Eigen::MatrixXd penalty;
        std::string label;
    };
    std::vector<PenaltyBlock> penalty_blocks() const;
};

struct Design {
    Eigen::MatrixXd X;  // rows x ncols, column-major
    DesignLayout layout;
};

// Learns the layout (spline ranges and constraints) on `rows` and builds
// the design. Throws ConfigError for unknown variables and DataError for a
// spline variable with fewer distinct values than basis functions.
Design build_design(const MrtPanel& panel, std::span<const std::size_t> rows, const FormulaSpec& spec);

DesignLayout learn_layout(const MrtPanel& panel, std::span<const std::size_t> rows, const FormulaSpec& spec);

// Rebuilds a layout from a spec and previously learned smooth bases (for
// deserialized fits).
DesignLayout assemble_layout(const FormulaSpec& spec, std::vector<SmoothBasis> smooths);

// Evaluates a layout on rows. When `arm` is set the treatment indicator is
// replaced by it, and interaction columns are recomputed accordingly.
Eigen::MatrixXd build_matrix(const MrtPanel& panel, std::span<const std::size_t> rows, const DesignLayout& layout,
                             std::optional<int> arm = std::nullopt);

// Values of a formula variable: a covariate, or `t` for the decision point.
std::span<const double> variable_column(const MrtPanel& panel, const std::string& name);

}  // namespace cee
