#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cee/estimator.hpp"

namespace cee {

enum class Pattern { linear, simple_nonlinear, periodic };

Pattern parse_pattern(std::string_view text);
std::string to_string(Pattern pattern);

// Beta(2, 2) density 6 x (1 - x) on [0, 1]. Throws DataError outside.
double q22(double x);

// Generating function g(alpha0, alpha1) evaluated at decision point t of T
// and covariate z. The periodic pattern uses sin(t) with t in radians.
double g_fn(Pattern pattern, double alpha0, double alpha1, int t, int T, double z);

// (alpha0, alpha1) of the logit missingness propensity for each pattern.
std::array<double, 2> missingness_alpha(Pattern pattern);

struct SimScenario {
    Pattern pattern_e = Pattern::linear;
    Pattern pattern_mu0 = Pattern::linear;
    int T = 20;
    double p_treat = 0.4;
    std::array<double, 2> beta_true{1.5, 2.1};
    int n = 200;
    int n_reps = 1000;
    std::uint64_t seed = 20240501;
    Link link = Link::identity;

    // Identity: (1.5, 2.1). Log: (0.2, 0.2), keeping P(Y = 1) below one.
    static std::array<double, 2> default_beta(Link link);
    // Throws ConfigError on n < 2, n_reps < 1, T < 1, p_treat outside (0, 1)
    // or, for the log link, a beta that lets P(Y = 1) reach one.
    void validate() const;
};

// Population nuisances behind a generated panel, per record.
struct LatentTruth {
    Eigen::VectorXd e;    // P(R = 1 | H, A) at the drawn treatment
    Eigen::VectorXd mu1;  // E(Y | H, A = 1)
    Eigen::VectorXd mu0;  // E(Y | H, A = 0)
};

struct SimPanel {
    MrtPanel panel;
    LatentTruth truth;
};

// Per-replication seed from (seed, n, rep) by splitmix64 mixing.
std::uint64_t replication_seed(std::uint64_t seed, int n, std::uint64_t rep);

// Draws one replication of the scenario with scenario.n individuals. The
// panel has one covariate `z`; identity link outcomes are gaussian, log link
// outcomes binary with P(Y = 1 | H, A) = exp(A (beta0 + beta1 z)) q(H),
// q = 0.4 expit(g_mu0).
SimPanel generate_panel(const SimScenario& scenario, std::uint64_t rep_index);

// Effect model of the study: f = (1, z).
CeeModel simulation_model(Link link);

// Stage-1 configuration of implementations "A".."D" (GAM engine).
Stage1Config implementation_spec(std::string_view which, Link link = Link::identity);

// Names accepted by run_study: A, B, C, D and the comparators.
const std::vector<std::string>& known_implementations();

struct ComparatorEstimates {
    CeeEstimate complete_case;
    CeeEstimate impute_zero;
    CeeEstimate impute_mean;
};

ComparatorEstimates comparator_estimators(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);

struct CoefficientMetrics {
    std::string coefficient;
    double truth = 0.0;
    double mean_estimate = 0.0;
    double bias = 0.0;
    double mse = 0.0;
    double variance = 0.0;  // (1/R) sum of squared deviations
    double mc_sd = 0.0;     // (1/(R-1)) version, square-rooted
    double coverage = 0.0;  // of the nominal 95% Wald interval
    double mean_se = 0.0;
    double bias_mc_se = 0.0;  // mc_sd / sqrt(R)
};

struct SimMetrics {
    std::string implementation;
    int n = 0;
    int n_reps = 0;
    int n_failed = 0;
    bool flagged = false;  // failure rate above 5%
    std::vector<CoefficientMetrics> coefficients;
    std::vector<std::string> failure_messages;  // first few, for diagnosis
};

// One replication's outcome for one implementation.
struct RepOutcome {
    bool ok = false;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    std::string error;
};

SimMetrics aggregate_metrics(const std::string& implementation, int n, const std::array<double, 2>& truth,
                             const std::vector<RepOutcome>& reps);

struct StudyConfig {
    SimScenario scenario;
    std::vector<int> sample_sizes{50, 100, 150, 200};
    std::vector<std::string> implementations{"A", "B", "C", "D"};
    int threads = 1;
};

// Runs every (sample size, replication) task on a worker pool and
// aggregates per (implementation, n). Results do not depend on `threads`.
// `progress`, when set, is called after each finished task with the number
// done and the total.
std::vector<SimMetrics> run_study(const StudyConfig& config,
                                  const std::function<void(std::size_t, std::size_t)>& progress = {});

// One row per implementation x n x coefficient.
void write_metrics_csv(std::ostream& out, const std::vector<SimMetrics>& metrics);
// Long format: implementation, n, coefficient, metric, value.
void write_plot_csv(std::ostream& out, const std::vector<SimMetrics>& metrics);

}  // namespace cee
