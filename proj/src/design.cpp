#include "cee/design.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cee/error.hpp"

namespace cee {

PSplineBasis::PSplineBasis(double lo, double hi, int num_basis, int degree)
    : lo_(lo), hi_(hi), num_basis_(num_basis), degree_(degree) {
    if (!(hi > lo)) throw DataError("degenerate", "spline range must have hi > lo");
    if (degree < 0 || num_basis <= degree) throw ConfigError("spline needs more basis functions than its degree");
    spacing_ = (hi - lo) / (num_basis - degree);
    knots_.resize(static_cast<std::size_t>(num_basis + degree + 1));
    for (std::size_t i = 0; i < knots_.size(); ++i)
        knots_[i] = lo - degree * spacing_ + static_cast<double>(i) * spacing_;
}

void PSplineBasis::evaluate(double x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    x = std::clamp(x, lo_, hi_);
    const int p = degree_;
    int j = static_cast<int>(std::floor((x - knots_[0]) / spacing_));
    j = std::clamp(j, p, num_basis_ - 1);

    double N[16], left[16], right[16];
    N[0] = 1.0;
    for (int r = 1; r <= p; ++r) {
        left[r] = x - knots_[j + 1 - r];
        right[r] = knots_[j + r] - x;
        double saved = 0.0;
        for (int s = 0; s < r; ++s) {
            const double tmp = N[s] / (right[s + 1] + left[r - s]);
            N[s] = saved + right[s + 1] * tmp;
            saved = left[r - s] * tmp;
        }
        N[r] = saved;
    }
    for (int s = 0; s <= p; ++s) out[static_cast<std::size_t>(j - p + s)] = N[s];
}

Eigen::VectorXd PSplineBasis::evaluate(double x) const {
    Eigen::VectorXd v(num_basis_);
    evaluate(x, std::span<double>(v.data(), static_cast<std::size_t>(v.size())));
    return v;
}

Eigen::MatrixXd difference_matrix(int k, int order) {
    Eigen::MatrixXd D = Eigen::MatrixXd::Identity(k, k);
    for (int d = 0; d < order; ++d) {
        const Eigen::Index r = D.rows();
        D = (D.bottomRows(r - 1) - D.topRows(r - 1)).eval();
    }
    return D;
}

Eigen::MatrixXd PSplineBasis::penalty(int order) const {
    const Eigen::MatrixXd D = difference_matrix(num_basis_, order);
    return D.transpose() * D;
}

std::vector<DesignLayout::PenaltyBlock> DesignLayout::penalty_blocks() const {
    std::vector<PenaltyBlock> out;
    for (const auto& tc : terms) {
        if (tc.smooth < 0) continue;
        out.push_back({tc.first, tc.count, smooths[static_cast<std::size_t>(tc.smooth)].penalty, tc.term.label()});
    }
    return out;
}

std::span<const double> variable_column(const MrtPanel& panel, const std::string& name) {
    if (auto j = panel.covariate_index(name)) return panel.covariate(*j);
    if (name == "t") return panel.t();
    throw ConfigError("unknown variable '" + name + "' in formula");
}

namespace {

SmoothBasis make_smooth(const MrtPanel& panel, std::span<const std::size_t> rows, const Term& term) {
    const auto col = variable_column(panel, term.var);
    std::set<double> distinct;
    double lo = INFINITY, hi = -INFINITY;
    for (auto r : rows) {
        distinct.insert(col[r]);
        lo = std::min(lo, col[r]);
        hi = std::max(hi, col[r]);
    }
    const int K = term.smooth.num_basis;
    if (static_cast<int>(distinct.size()) < K)
        throw DataError("degenerate", "spline variable '" + term.var + "' has " + std::to_string(distinct.size()) +
                                          " distinct values, fewer than the " + std::to_string(K) +
                                          " basis functions requested");

    SmoothBasis sb;
    sb.var = term.var;
    sb.basis = PSplineBasis(lo, hi, K);
    sb.penalty_order = term.smooth.penalty_order;

    Eigen::VectorXd means = Eigen::VectorXd::Zero(K);
    Eigen::VectorXd b(K);
    for (auto r : rows) {
        sb.basis.evaluate(col[r], std::span<double>(b.data(), static_cast<std::size_t>(K)));
        means += b;
    }
    means /= static_cast<double>(rows.size());
    const Eigen::MatrixXd mcol = means;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(mcol);
    const Eigen::MatrixXd Q = qr.householderQ();
    sb.constraint = Q.rightCols(K - 1);
    sb.penalty = sb.constraint.transpose() * sb.basis.penalty(sb.penalty_order) * sb.constraint;
    return sb;
}

}  // namespace

DesignLayout assemble_layout(const FormulaSpec& spec, std::vector<SmoothBasis> smooths) {
    DesignLayout layout;
    layout.spec = spec;
    layout.smooths = std::move(smooths);

    auto smooth_index = [&](const Term& t) -> int {
        for (std::size_t s = 0; s < layout.smooths.size(); ++s)
            if (layout.smooths[s].var == t.var && layout.smooths[s].basis.num_basis() == t.smooth.num_basis &&
                layout.smooths[s].penalty_order == t.smooth.penalty_order)
                return static_cast<int>(s);
        throw ConfigError("no basis for spline term " + t.label());
    };

    std::size_t col = 0;
    for (const auto& term : spec.terms) {
        TermColumns tc;
        tc.term = term;
        tc.first = col;
        if (term.is_spline()) {
            tc.smooth = smooth_index(term);
            tc.count = static_cast<std::size_t>(term.smooth.num_basis - 1);
            for (std::size_t k = 0; k < tc.count; ++k)
                layout.column_names.push_back(term.label() + "." + std::to_string(k + 1));
        } else {
            tc.count = 1;
            layout.column_names.push_back(term.label());
        }
        col += tc.count;
        layout.terms.push_back(tc);
    }
    layout.ncols = col;
    return layout;
}

DesignLayout learn_layout(const MrtPanel& panel, std::span<const std::size_t> rows, const FormulaSpec& spec) {
    spec.validate();
    if (rows.empty()) throw DataError("structure", "cannot build a design on zero rows");
    std::vector<SmoothBasis> smooths;
    for (const auto& term : spec.terms) {
        if (term.kind == Term::Kind::linear || (term.kind == Term::Kind::treat_interact && !term.spline_inner))
            variable_column(panel, term.var);
        if (!term.is_spline()) continue;
        const bool known = std::any_of(smooths.begin(), smooths.end(), [&](const SmoothBasis& sb) {
            return sb.var == term.var && sb.basis.num_basis() == term.smooth.num_basis &&
                   sb.penalty_order == term.smooth.penalty_order;
        });
        if (!known) smooths.push_back(make_smooth(panel, rows, term.inner()));
    }
    return assemble_layout(spec, std::move(smooths));
}

Eigen::MatrixXd build_matrix(const MrtPanel& panel, std::span<const std::size_t> rows, const DesignLayout& layout,
                             std::optional<int> arm) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd X(n, static_cast<Eigen::Index>(layout.ncols));
    const auto treat = panel.treat();
    auto a_of = [&](std::size_t r) { return arm ? static_cast<double>(*arm) : treat[r]; };

    // Spline evaluations per smooth, shared by main and interaction terms.
    std::vector<Eigen::MatrixXd> smooth_values(layout.smooths.size());
    for (std::size_t s = 0; s < layout.smooths.size(); ++s) {
        const auto& sb = layout.smooths[s];
        const auto col = variable_column(panel, sb.var);
        const int K = sb.basis.num_basis();
        Eigen::MatrixXd B(n, K);
        Eigen::VectorXd b(K);
        for (Eigen::Index i = 0; i < n; ++i) {
            sb.basis.evaluate(col[rows[static_cast<std::size_t>(i)]], std::span<double>(b.data(), static_cast<std::size_t>(K)));
            B.row(i) = b.transpose();
        }
        smooth_values[s] = B * sb.constraint;
    }

    for (const auto& tc : layout.terms) {
        const auto c0 = static_cast<Eigen::Index>(tc.first);
        const auto& term = tc.term;
        switch (term.kind) {
            case Term::Kind::intercept: X.col(c0).setOnes(); break;
            case Term::Kind::treat_main:
                for (Eigen::Index i = 0; i < n; ++i) X(i, c0) = a_of(rows[static_cast<std::size_t>(i)]);
                break;
            case Term::Kind::linear: {
                const auto col = variable_column(panel, term.var);
                for (Eigen::Index i = 0; i < n; ++i) X(i, c0) = col[rows[static_cast<std::size_t>(i)]];
                break;
            }
            case Term::Kind::spline:
                X.middleCols(c0, static_cast<Eigen::Index>(tc.count)) = smooth_values[static_cast<std::size_t>(tc.smooth)];
                break;
            case Term::Kind::treat_interact: {
                if (term.spline_inner) {
                    const auto& S = smooth_values[static_cast<std::size_t>(tc.smooth)];
                    for (Eigen::Index i = 0; i < n; ++i)
                        X.row(i).segment(c0, static_cast<Eigen::Index>(tc.count)) =
                            a_of(rows[static_cast<std::size_t>(i)]) * S.row(i);
                } else {
                    const auto col = variable_column(panel, term.var);
                    for (Eigen::Index i = 0; i < n; ++i) {
                        const auto r = rows[static_cast<std::size_t>(i)];
                        X(i, c0) = a_of(r) * col[r];
                    }
                }
                break;
            }
        }
    }
    return X;
}

Design build_design(const MrtPanel& panel, std::span<const std::size_t> rows, const FormulaSpec& spec) {
    Design d;
    d.layout = learn_layout(panel, rows, spec);
    d.X = build_matrix(panel, rows, d.layout);
    return d;
}

}  // namespace cee
