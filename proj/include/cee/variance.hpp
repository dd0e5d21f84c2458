#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cee/estimator.hpp"

namespace cee {

// Bread and meat of a sandwich estimator, both averaged over individuals.
struct SandwichParts {
    struct Block {
        std::string name;  // "beta", "gamma_e" or "gamma_mu"
        std::size_t first = 0;
        std::size_t count = 0;
    };

    Eigen::MatrixXd bread;
    Eigen::MatrixXd meat;
    std::vector<Block> layout;
    std::size_t n = 0;

    // (1/n) B^{-1} M B^{-T}, symmetrized. Throws NumericalError when the
    // bread is singular.
    Eigen::MatrixXd covariance() const;
};

SandwichParts sandwich_parts_nonparametric(const EstimatingFunction& ee, const Eigen::VectorXd& beta);

// Covariance of beta-hat treating the nuisance values as fixed.
Eigen::MatrixXd sandwich_nonparametric(const EstimatingFunction& ee, const Eigen::VectorXd& beta);

// How the cross blocks d U~ / d gamma of the stacked bread are obtained.
enum class CrossDerivative { analytic, finite_difference };

// Stacks (U~, U_e, U_mu) per individual. `nuisances` must be the set that
// produced the values inside `ee`. Penalized fits contribute their
// penalized score at the selected smoothing parameters.
SandwichParts sandwich_parts_parametric(const MrtPanel& panel, const EstimatingFunction& ee,
                                        const NuisanceSet& nuisances, const Eigen::VectorXd& beta,
                                        CrossDerivative cross = CrossDerivative::analytic);

// Upper-left p x p block of the stacked covariance.
Eigen::MatrixXd sandwich_parametric(const MrtPanel& panel, const EstimatingFunction& ee, const NuisanceSet& nuisances,
                                    const Eigen::VectorXd& beta,
                                    CrossDerivative cross = CrossDerivative::analytic);

struct WaldInterval {
    Eigen::VectorXd low;
    Eigen::VectorXd high;
};

// Standard normal quantile.
double normal_quantile(double p);

// beta_j -/+ z sqrt(vcov_jj). Throws NumericalError on a negative variance.
WaldInterval wald_ci(const Eigen::VectorXd& beta, const Eigen::MatrixXd& vcov, double level = 0.95);

}  // namespace cee
