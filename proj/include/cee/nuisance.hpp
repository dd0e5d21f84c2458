#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <limits>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "cee/design.hpp"
#include "cee/types.hpp"

namespace cee {

struct FitOptions {
    int max_iter = 100;
    // Convergence: max |(penalized) score| below this.
    double score_tol = 1e-8;
    // Binomial predictions are clipped to [clip, 1 - clip].
    double clip = 1e-6;
    // Relative pivot threshold for the rank check.
    double rank_tol = 1e-10;
    // Coordinate-wise passes over per-term smoothing parameters after the
    // shared-lambda search.
    int lambda_passes = 2;
};

// 30 log-spaced values in [1e-4, 1e4].
std::vector<double> default_lambda_grid();

// A fitted nuisance regression: coefficients plus everything needed to
// rebuild its design on new rows.
struct FittedNuisance {
    DesignLayout layout;
    Family family = Family::gaussian;
    Eigen::VectorXd coefficients;
    std::vector<double> lambda;  // one per penalty block; empty when unpenalized
    double clip = 1e-6;
    int iterations = 0;
    double gcv = std::numeric_limits<double>::quiet_NaN();

    const FormulaSpec& spec() const noexcept { return layout.spec; }
    std::size_t estfn_dim() const noexcept { return static_cast<std::size_t>(coefficients.size()); }
    bool penalized() const noexcept { return !lambda.empty(); }

    // S = sum_j lambda_j P_j embedded in the full coefficient space.
    Eigen::MatrixXd penalty() const;

    Eigen::VectorXd mean(const Eigen::VectorXd& eta) const;  // inverse link with clipping
    Eigen::VectorXd predict(const Eigen::MatrixXd& X) const;
    Eigen::VectorXd predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& coef) const;
    // Predictions on panel rows with the observed treatment (or `arm`).
    Eigen::VectorXd predict(const MrtPanel& panel, std::span<const std::size_t> rows,
                            std::optional<int> arm = std::nullopt) const;

    nlohmann::json to_json() const;
    static FittedNuisance from_json(const nlohmann::json& j);
};

// Unpenalized GLM. Gaussian: (weighted) least squares via pivoted QR.
// Binomial: IRLS on the logit link to max |score| < score_tol.
// Throws NumericalError("singularity") naming collinear columns, or
// NumericalError("non-convergence") with the iteration trace.
FittedNuisance fit_glm(const Design& design, const Eigen::VectorXd& y, Family family,
                       const Eigen::VectorXd* weights = nullptr, const FitOptions& options = {});

// Penalized additive model: minimizes deviance/2 + sum_j lambda_j g_j' P_j g_j / 2
// with lambdas chosen from `lambda_grid` by GCV (grid of size 1 skips the
// search). Binomial fits select lambda on the working model at each IRLS
// step, then finish with penalized IRLS at the chosen values.
FittedNuisance fit_pspline_gam(const Design& design, const Eigen::VectorXd& y, Family family,
                               std::span<const double> lambda_grid, const FitOptions& options = {});

// Penalized fit at fixed per-block lambdas.
FittedNuisance fit_penalized_fixed(const Design& design, const Eigen::VectorXd& y, Family family,
                                   std::span<const double> lambdas, const FitOptions& options = {});

// Predictions with the treatment column overridden to `arm`.
Eigen::VectorXd predict_arm(const FittedNuisance& fit, const MrtPanel& panel, std::span<const std::size_t> rows,
                            int arm);

// Per-row score contributions x_i (y_i - mu_i), one row per observation,
// using the unclipped mean.
Eigen::MatrixXd score_rows(const FittedNuisance& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);
// d(sum of scores)/d(coef) = -X' W X, with W the GLM variance weights.
Eigen::MatrixXd score_jacobian(const FittedNuisance& fit, const Eigen::MatrixXd& X);

// Numerator probability of the stabilized weight: a constant or a logistic
// model of treatment on effect modifiers, fitted on available rows.
class NumeratorModel {
public:
    static NumeratorModel constant(double value);
    static NumeratorModel fitted(FittedNuisance fit);

    bool is_constant() const noexcept { return !fit_.has_value(); }
    double constant_value() const noexcept { return value_; }
    const FittedNuisance* fit() const noexcept { return fit_ ? &*fit_ : nullptr; }

    // Values on `rows`; always strictly inside (0, 1).
    Eigen::VectorXd evaluate(const MrtPanel& panel, std::span<const std::size_t> rows) const;
    std::string describe() const;

private:
    double value_ = 0.5;
    std::optional<FittedNuisance> fit_;
};

NumeratorModel fit_numerator(const MrtPanel& panel, const std::variant<double, FormulaSpec>& model,
                             const FitOptions& options = {});

}  // namespace cee
