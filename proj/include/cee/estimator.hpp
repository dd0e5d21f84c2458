#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cee/model.hpp"
#include "cee/nuisance.hpp"
#include "cee/panel.hpp"

namespace cee {

// Stabilized weight W_t and window weight W_{t,Delta} per record, in panel
// storage order. Unavailable records carry w = 0.
struct WeightSet {
    Eigen::VectorXd w;
    Eigen::VectorXd w_delta;
};

// (p~/p)^A ((1 - p~)/(1 - p))^(1 - A).
double stabilized_weight(double treat, double prob, double ptilde);

// `ptilde` holds p~_t per record (ignored where unavailable).
WeightSet compute_weights(const MrtPanel& panel, const Eigen::VectorXd& ptilde, const CeeModel& model);

// Y - (A + p - 1) f'beta - (1 - p) mu1 - p mu0
double residual_identity(double y, double treat, double prob, double mu1, double mu0, double fbeta);
// exp(-A f'beta) Y - (1 - p) exp(-f'beta) mu1 - p mu0. Throws NumericalError
// when |f'beta| would overflow exp.
double residual_log(double y, double treat, double prob, double mu1, double mu0, double fbeta);

// Everything the augmented estimating function needs at one record.
struct RecordInputs {
    int avail = 1;
    int treat = 0;
    double prob = 0.5;
    int obs = 1;
    std::optional<double> outcome;
    double e = 1.0;
    double mu1 = 0.0;
    double mu0 = 0.0;
    double ptilde = 0.5;
    double w = 1.0;
    double w_delta = 1.0;
};

// Per-record augmented estimating function (a p-vector). Zero when the
// record is unavailable; the outcome term is dropped when obs = 0. Throws
// DataError when obs = 1 and the outcome is absent.
Eigen::VectorXd utilde(const RecordInputs& rec, const Eigen::VectorXd& f, const Eigen::VectorXd& beta, Link link);

// Nuisance values evaluated on every panel record (storage order): the
// missingness propensity at the observed treatment, the outcome regression
// under each arm and the numerator probability.
struct NuisanceValues {
    Eigen::VectorXd e;
    Eigen::VectorXd mu1;
    Eigen::VectorXd mu0;
    Eigen::VectorXd ptilde;
};

// The Stage-2 estimating function P_n sum_t U~_t(beta) with nuisances held
// fixed. Holds its own copies of every per-record column.
class EstimatingFunction {
public:
    EstimatingFunction(const MrtPanel& panel, const CeeModel& model, const NuisanceValues& nuisances);
    EstimatingFunction(const MrtPanel& panel, const CeeModel& model, const NuisanceValues& nuisances,
                       const WeightSet& weights);

    std::size_t dim() const noexcept { return static_cast<std::size_t>(F_.cols()); }
    std::size_t n() const noexcept { return n_; }
    int T() const noexcept { return T_; }
    Link link() const noexcept { return link_; }
    const Eigen::MatrixXd& features() const noexcept { return F_; }
    const WeightSet& weights() const noexcept { return weights_; }

    // Scalar multipliers c_k (U_k = c_k f_k) and dc_k/d(eta_k) per record.
    void coefficients(const Eigen::VectorXd& beta, Eigen::VectorXd& c, Eigen::VectorXd& dc) const;

    Eigen::VectorXd total(const Eigen::VectorXd& beta) const;
    // d total / d beta.
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& beta) const;
    // n x p matrix whose rows are the per-individual sums over t.
    Eigen::MatrixXd per_individual(const Eigen::VectorXd& beta) const;

    // Partial derivatives of c_k with respect to e_k, mu1_k and mu0_k.
    struct NuisancePartials {
        Eigen::VectorXd de, dmu1, dmu0;
    };
    NuisancePartials nuisance_partials(const Eigen::VectorXd& beta) const;

    // Copy with the propensity and outcome-regression values replaced
    // (weights and numerator probabilities kept).
    EstimatingFunction with_values(const NuisanceValues& nuisances) const;

private:
    void sanitize();
    void check_eta(const Eigen::VectorXd& eta) const;

    Link link_;
    std::size_t n_ = 0;
    int T_ = 0;
    Eigen::MatrixXd F_;
    WeightSet weights_;
    Eigen::VectorXd avail_, treat_, prob_, obs_, outcome_, e_, mu1_, mu0_, ptilde_, weight_;
};

struct SolverOptions {
    double tol = 1e-10;  // on max |estimating function|
    int max_iter = 100;
    double max_condition = 1e10;
};

enum class Engine { glm, gam };
enum class VarianceMode { automatic, parametric, nonparametric, none };

std::string to_string(Engine engine);
Engine parse_engine(std::string_view text);
std::string to_string(VarianceMode mode);
VarianceMode parse_variance_mode(std::string_view text);

struct Stage1Config {
    FormulaSpec e_formula;   // response is R, fitted on available rows
    FormulaSpec mu_formula;  // response is Y, fitted on available rows with R = 1
    // Outcome-regression family; by default binomial for the log link with a
    // 0/1 outcome and gaussian otherwise.
    std::optional<Family> mu_family;
    // Numerator probability: unset means the empirical treatment rate on
    // available rows.
    std::optional<std::variant<double, FormulaSpec>> ptilde;
    Engine engine = Engine::gam;
    std::vector<double> lambda_grid = default_lambda_grid();
    FitOptions fit;
    VarianceMode variance = VarianceMode::automatic;
    SolverOptions solver;
    // With no missing outcomes among available rows the propensity is set to
    // one instead of fitted.
    bool skip_e_when_complete = true;
};

// Fitted Stage-1 models with their fitting rows and values on the panel.
struct NuisanceSet {
    std::optional<FittedNuisance> e_fit;  // unset: e = 1
    FittedNuisance mu_fit;
    NumeratorModel ptilde;
    std::vector<std::size_t> e_rows;   // available rows
    std::vector<std::size_t> mu_rows;  // available rows with an observed outcome
    NuisanceValues values;
};

struct CeeEstimate {
    Eigen::VectorXd beta;
    Eigen::MatrixXd vcov;
    std::vector<std::string> names;
    std::string solver;  // "closed_form" or "newton"
    int iterations = 0;
    double final_estfn_norm = 0.0;
    std::vector<double> trace;  // estimating-function norm per iteration
    VarianceMode variance_mode = VarianceMode::none;
    double min_e = 1.0;
    std::size_t n = 0;
    int T = 0;
    std::vector<std::string> warnings;
    std::shared_ptr<const NuisanceSet> nuisances;

    Eigen::VectorXd se() const;
};

// Closed-form root of the identity-link estimating function. Throws
// NumericalError("estimability") when the linear system is singular or its
// condition number exceeds options.max_condition.
CeeEstimate solve_identity(const EstimatingFunction& ee, const SolverOptions& options = {});

// Newton iterations with step-halving from `init` (zero when empty).
CeeEstimate solve_log(const EstimatingFunction& ee, const Eigen::VectorXd& init = {},
                      const SolverOptions& options = {});

CeeEstimate solve(const EstimatingFunction& ee, const SolverOptions& options = {});

NuisanceSet fit_nuisances(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);

// Algorithm 1: Stage-1 fits, Stage-2 solve and the sandwich variance.
CeeEstimate estimate_cee(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);

// Lowest fitted propensity on available rows.
double min_propensity(const MrtPanel& panel, const NuisanceValues& values);

// ---------------------------------------------------------------------------
// Complete-data two-stage estimator: U_t = I W_t W_{t,Delta} eps_t (A - p~) f
// with mu fitted on `mu_rows`, solved without the augmentation machinery.
// Used as the reference for the reduction law and by the comparators.

struct CompleteDataInputs {
    // Outcome per record (storage order); must be finite where included.
    Eigen::VectorXd outcome;
    // Records entering both the outcome fit and the estimating equation
    // (0/1); unavailable records are always excluded.
    Eigen::VectorXd include;
};

CeeEstimate complete_data_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config,
                                   const CompleteDataInputs& inputs);

// Complete cases only.
CeeEstimate complete_case_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);
// Missing outcomes replaced by zero.
CeeEstimate impute_zero_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);
// Missing outcomes replaced by the individual's observed mean; individuals
// with no observed outcome are dropped with a warning.
CeeEstimate impute_mean_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config);

}  // namespace cee
