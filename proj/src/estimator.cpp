#include "cee/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cee/error.hpp"
#include "cee/kernels.hpp"
#include "cee/variance.hpp"

namespace cee {

namespace {

constexpr double kMaxExponent = 700.0;

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

void check_condition(const Eigen::MatrixXd& M, double max_condition) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& s = svd.singularValues();
    const double smax = s(0);
    const double smin = s(s.size() - 1);
    if (!(smin > 0.0) || !(smax / smin <= max_condition)) {
        std::ostringstream msg;
        msg << "effect model is not estimable: estimating-equation matrix has condition number "
            << (smin > 0.0 ? smax / smin : INFINITY) << " (limit " << max_condition
            << "); consider fewer or non-collinear features";
        throw NumericalError("estimability", msg.str());
    }
}

}  // namespace

std::string to_string(Engine engine) { return engine == Engine::glm ? "glm" : "gam"; }

Engine parse_engine(std::string_view text) {
    if (text == "glm") return Engine::glm;
    if (text == "gam") return Engine::gam;
    throw ConfigError("unknown stage-1 engine '" + std::string(text) + "' (expected glm or gam)");
}

std::string to_string(VarianceMode mode) {
    switch (mode) {
        case VarianceMode::automatic: return "auto";
        case VarianceMode::parametric: return "parametric";
        case VarianceMode::nonparametric: return "nonparametric";
        case VarianceMode::none: return "none";
    }
    return {};
}

VarianceMode parse_variance_mode(std::string_view text) {
    if (text == "auto") return VarianceMode::automatic;
    if (text == "parametric") return VarianceMode::parametric;
    if (text == "nonparametric") return VarianceMode::nonparametric;
    if (text == "none") return VarianceMode::none;
    throw ConfigError("unknown variance mode '" + std::string(text) + "' (expected auto, parametric or nonparametric)");
}

// ---------------------------------------------------------------------------
// Weights and residuals

double stabilized_weight(double treat, double prob, double ptilde) {
    return treat == 1.0 ? ptilde / prob : (1.0 - ptilde) / (1.0 - prob);
}

WeightSet compute_weights(const MrtPanel& panel, const Eigen::VectorXd& ptilde, const CeeModel& model) {
    model.validate();
    const std::size_t N = panel.size();
    if (static_cast<std::size_t>(ptilde.size()) != N)
        throw DataError("structure", "numerator probabilities do not match the panel size");
    const auto avail = panel.avail();
    const auto treat = panel.treat();
    const auto prob = panel.prob_treat();
    const auto t = panel.t();

    WeightSet ws;
    ws.w = Eigen::VectorXd::Zero(idx(N));
    ws.w_delta = Eigen::VectorXd::Ones(idx(N));
    for (std::size_t k = 0; k < N; ++k) {
        if (avail[k] == 0.0) continue;
        if (!(prob[k] > 0.0 && prob[k] < 1.0))
            throw DataError("positivity", "randomization probability " + std::to_string(prob[k]) +
                                              " outside (0, 1) for individual " + panel.record(k).individual_id +
                                              " at t = " + std::to_string(static_cast<int>(t[k])));
        ws.w[idx(k)] = stabilized_weight(treat[k], prob[k], ptilde[idx(k)]);
    }
    if (model.delta == 1) return ws;

    if (model.pi_mode == PiMode::column && !panel.has_pi())
        throw DataError("schema", "delta > 1 with pi_mode = column requires a pi_prob column");
    const auto pi = panel.pi_prob();
    const int T = panel.T();
    for (std::size_t i = 0; i < panel.n(); ++i) {
        const std::size_t base = panel.offset(i);
        for (int s = 0; s < T; ++s) {
            double prod = 1.0;
            // Window decision points past T do not exist and contribute no ratio.
            for (int u = s + 1; u < std::min(s + model.delta, T); ++u) {
                const std::size_t r = base + static_cast<std::size_t>(u);
                double pu;
                if (model.pi_mode == PiMode::constant) {
                    pu = avail[r] == 1.0 ? model.pi_constant : 0.0;
                } else {
                    pu = pi[r];
                    if (std::isnan(pu))
                        throw DataError("consistency", "pi_prob missing for individual " + panel.ids()[i] +
                                                           " at t = " + std::to_string(u + 1));
                }
                prod *= treat[r] == 1.0 ? pu / prob[r] : (1.0 - pu) / (1.0 - prob[r]);
            }
            ws.w_delta[idx(base + static_cast<std::size_t>(s))] = prod;
        }
    }
    return ws;
}

double residual_identity(double y, double treat, double prob, double mu1, double mu0, double fbeta) {
    return y - (treat + prob - 1.0) * fbeta - (1.0 - prob) * mu1 - prob * mu0;
}

double residual_log(double y, double treat, double prob, double mu1, double mu0, double fbeta) {
    if (std::abs(fbeta) > kMaxExponent)
        throw NumericalError("overflow", "linear predictor " + std::to_string(fbeta) + " overflows exp");
    return std::exp(-treat * fbeta) * y - (1.0 - prob) * std::exp(-fbeta) * mu1 - prob * mu0;
}

Eigen::VectorXd utilde(const RecordInputs& rec, const Eigen::VectorXd& f, const Eigen::VectorXd& beta, Link link) {
    if (f.size() != beta.size()) throw ConfigError("feature vector and beta differ in length");
    if (rec.avail == 0) return Eigen::VectorXd::Zero(f.size());
    if (rec.obs == 1 && !rec.outcome) throw DataError("consistency", "observed record without an outcome");
    const double a = rec.treat;
    const double fb = f.dot(beta);
    const double centering = a + rec.prob - 1.0;
    double ipw_term = 0.0;
    double aug = 0.0;
    if (link == Link::identity) {
        if (rec.obs == 1) ipw_term = (*rec.outcome - a * rec.mu1 - (1.0 - a) * rec.mu0) / rec.e;
        aug = centering * (rec.mu1 - rec.mu0 - fb);
    } else {
        if (std::abs(fb) > kMaxExponent)
            throw NumericalError("overflow", "linear predictor " + std::to_string(fb) + " overflows exp");
        if (rec.obs == 1) ipw_term = std::exp(-a * fb) * (*rec.outcome - a * rec.mu1 - (1.0 - a) * rec.mu0) / rec.e;
        aug = centering * (std::exp(-fb) * rec.mu1 - rec.mu0);
    }
    return rec.w * rec.w_delta * (ipw_term + aug) * (a - rec.ptilde) * f;
}

// ---------------------------------------------------------------------------
// Estimating function

EstimatingFunction::EstimatingFunction(const MrtPanel& panel, const CeeModel& model, const NuisanceValues& nv)
    : EstimatingFunction(panel, model, nv, compute_weights(panel, nv.ptilde, model)) {}

EstimatingFunction::EstimatingFunction(const MrtPanel& panel, const CeeModel& model, const NuisanceValues& nv,
                                       const WeightSet& weights)
    : link_(model.link), n_(panel.n()), T_(panel.T()), F_(model.feature_matrix(panel)), weights_(weights) {
    const std::size_t N = panel.size();
    const auto N_ = idx(N);
    if (nv.e.size() != N_ || nv.mu1.size() != N_ || nv.mu0.size() != N_ || nv.ptilde.size() != N_ ||
        weights.w.size() != N_ || weights.w_delta.size() != N_)
        throw DataError("structure", "nuisance values do not match the panel size");
    auto copy = [&](std::span<const double> s) { return Eigen::Map<const Eigen::VectorXd>(s.data(), N_).eval(); };
    avail_ = copy(panel.avail());
    treat_ = copy(panel.treat());
    prob_ = copy(panel.prob_treat());
    obs_ = copy(panel.obs_flag());
    outcome_ = copy(panel.outcome());
    e_ = nv.e;
    mu1_ = nv.mu1;
    mu0_ = nv.mu0;
    ptilde_ = nv.ptilde;
    weight_ = weights.w.cwiseProduct(weights.w_delta);
    sanitize();
}

void EstimatingFunction::sanitize() {
    for (Eigen::Index k = 0; k < avail_.size(); ++k) {
        if (avail_[k] == 0.0) {
            // Unavailable records contribute nothing; neutral values keep
            // the vectorized kernels free of NaNs.
            e_[k] = 1.0;
            mu1_[k] = mu0_[k] = ptilde_[k] = weight_[k] = 0.0;
            continue;
        }
        if (!(e_[k] > 0.0 && e_[k] <= 1.0))
            throw NumericalError("positivity", "missingness propensity " + std::to_string(e_[k]) +
                                                   " outside (0, 1] on an available record");
        if (!std::isfinite(mu1_[k]) || !std::isfinite(mu0_[k]) || !std::isfinite(weight_[k]) ||
            !std::isfinite(ptilde_[k]))
            throw NumericalError("value", "non-finite nuisance value on an available record");
    }
}

EstimatingFunction EstimatingFunction::with_values(const NuisanceValues& nv) const {
    if (nv.e.size() != e_.size() || nv.mu1.size() != e_.size() || nv.mu0.size() != e_.size())
        throw DataError("structure", "nuisance values do not match the panel size");
    EstimatingFunction out = *this;
    out.e_ = nv.e;
    out.mu1_ = nv.mu1;
    out.mu0_ = nv.mu0;
    out.sanitize();
    return out;
}

void EstimatingFunction::check_eta(const Eigen::VectorXd& eta) const {
    if (link_ != Link::log) return;
    for (Eigen::Index k = 0; k < eta.size(); ++k)
        if (avail_[k] != 0.0 && !(std::abs(eta[k]) <= kMaxExponent))
            throw NumericalError("overflow", "linear predictor " + std::to_string(eta[k]) + " overflows exp");
}

void EstimatingFunction::coefficients(const Eigen::VectorXd& beta, Eigen::VectorXd& c, Eigen::VectorXd& dc) const {
    if (beta.size() != F_.cols()) throw ConfigError("beta has the wrong dimension");
    const Eigen::VectorXd eta = F_ * beta;
    check_eta(eta);
    c.resize(eta.size());
    dc.resize(eta.size());
    kernels::EeInputs in{avail_.data(), treat_.data(), prob_.data(), obs_.data(),   outcome_.data(),
                         e_.data(),     mu1_.data(),   mu0_.data(),  ptilde_.data(), weight_.data(),
                         static_cast<std::size_t>(eta.size())};
    kernels::ee_coefficients(link_, in, eta.data(), c.data(), dc.data());
}

Eigen::VectorXd EstimatingFunction::total(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd c, dc;
    coefficients(beta, c, dc);
    return F_.transpose() * c / static_cast<double>(n_);
}

Eigen::MatrixXd EstimatingFunction::jacobian(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd c, dc;
    coefficients(beta, c, dc);
    const auto p = static_cast<std::size_t>(F_.cols());
    Eigen::MatrixXd J(F_.cols(), F_.cols());
    kernels::weighted_gram(F_.data(), dc.data(), static_cast<std::size_t>(F_.rows()), p, J.data());
    return J / static_cast<double>(n_);
}

Eigen::MatrixXd EstimatingFunction::per_individual(const Eigen::VectorXd& beta) const {
    Eigen::VectorXd c, dc;
    coefficients(beta, c, dc);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(idx(n_), F_.cols());
    const auto T = static_cast<std::size_t>(T_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t s = 0; s < T; ++s) {
            const auto k = idx(i * T + s);
            U.row(idx(i)) += c[k] * F_.row(k);
        }
    return U;
}

EstimatingFunction::NuisancePartials EstimatingFunction::nuisance_partials(const Eigen::VectorXd& beta) const {
    const Eigen::VectorXd eta = F_ * beta;
    check_eta(eta);
    const auto N = eta.size();
    NuisancePartials out{Eigen::VectorXd::Zero(N), Eigen::VectorXd::Zero(N), Eigen::VectorXd::Zero(N)};
    for (Eigen::Index k = 0; k < N; ++k) {
        if (avail_[k] == 0.0) continue;
        const double a = treat_[k];
        const double centering = a + prob_[k] - 1.0;
        const double scale = weight_[k] * (a - ptilde_[k]);
        const double resid = outcome_[k] - a * mu1_[k] - (1.0 - a) * mu0_[k];
        const double ipw = obs_[k] / e_[k];
        if (link_ == Link::identity) {
            out.de[k] = -scale * ipw / e_[k] * resid;
            out.dmu1[k] = scale * (-a * ipw + centering);
            out.dmu0[k] = scale * (-(1.0 - a) * ipw - centering);
        } else {
            const double e1 = std::exp(-eta[k]);
            const double ea = a == 1.0 ? e1 : 1.0;
            out.de[k] = -scale * ipw / e_[k] * ea * resid;
            out.dmu1[k] = scale * (-a * ipw * ea + centering * e1);
            out.dmu0[k] = scale * (-(1.0 - a) * ipw * ea - centering);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Solvers

CeeEstimate solve_identity(const EstimatingFunction& ee, const SolverOptions& opt) {
    if (ee.link() != Link::identity) throw ConfigError("solve_identity requires the identity link");
    const auto p = idx(ee.dim());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(p);
    // The estimating function is affine in beta: total(beta) = total(0) + J beta.
    const Eigen::MatrixXd J = ee.jacobian(zero);
    check_condition(J, opt.max_condition);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);

    CeeEstimate est;
    est.solver = "closed_form";
    est.beta = -qr.solve(ee.total(zero));
    Eigen::VectorXd r = ee.total(est.beta);
    est.trace.push_back(inf_norm(r));
    for (int k = 0; k < 3 && inf_norm(r) > 0.0; ++k) {
        const Eigen::VectorXd refined = est.beta - qr.solve(r);
        const Eigen::VectorXd r2 = ee.total(refined);
        if (!(inf_norm(r2) < inf_norm(r))) break;
        est.beta = refined;
        r = r2;
        est.trace.push_back(inf_norm(r));
    }
    est.iterations = 1;
    est.final_estfn_norm = inf_norm(r);
    est.n = ee.n();
    est.T = ee.T();
    return est;
}

CeeEstimate solve_log(const EstimatingFunction& ee, const Eigen::VectorXd& init, const SolverOptions& opt) {
    const auto p = idx(ee.dim());
    CeeEstimate est;
    est.solver = "newton";
    est.n = ee.n();
    est.T = ee.T();
    Eigen::VectorXd beta = init.size() == 0 ? Eigen::VectorXd::Zero(p) : init;
    if (beta.size() != p) throw ConfigError("initial beta has the wrong dimension");

    auto safe_total = [&](const Eigen::VectorXd& b, Eigen::VectorXd& out) {
        try {
            out = ee.total(b);
            return out.allFinite();
        } catch (const NumericalError&) {
            return false;
        }
    };

    Eigen::VectorXd r;
    if (!safe_total(beta, r))
        throw NumericalError("overflow", "estimating function is not finite at the initial value");
    double norm = inf_norm(r);
    est.trace.push_back(norm);
    int it = 0;
    for (; it < opt.max_iter && !(norm < opt.tol); ++it) {
        const Eigen::MatrixXd J = ee.jacobian(beta);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) throw NumericalError("singularity", "Newton Jacobian is singular");
        const Eigen::VectorXd step = lu.solve(r);
        double scale = 1.0;
        bool accepted = false;
        for (int h = 0; h < 40; ++h, scale *= 0.5) {
            const Eigen::VectorXd trial = beta - scale * step;
            Eigen::VectorXd rt;
            if (safe_total(trial, rt) && inf_norm(rt) < norm) {
                beta = trial;
                r = rt;
                norm = inf_norm(rt);
                accepted = true;
                break;
            }
        }
        est.trace.push_back(norm);
        if (!accepted) break;
    }
    if (!(norm < opt.tol)) {
        std::ostringstream msg;
        msg << "Newton solver did not reach tolerance " << opt.tol << " after " << it
            << " iterations; max |estimating function| trace:";
        const std::size_t from = est.trace.size() > 10 ? est.trace.size() - 10 : 0;
        for (std::size_t k = from; k < est.trace.size(); ++k) msg << ' ' << est.trace[k];
        throw NumericalError("non-convergence", msg.str());
    }
    est.beta = beta;
    est.iterations = it;
    est.final_estfn_norm = norm;
    return est;
}

CeeEstimate solve(const EstimatingFunction& ee, const SolverOptions& options) {
    return ee.link() == Link::identity ? solve_identity(ee, options) : solve_log(ee, {}, options);
}

Eigen::VectorXd CeeEstimate::se() const {
    Eigen::VectorXd s(vcov.rows());
    for (Eigen::Index j = 0; j < vcov.rows(); ++j) s[j] = std::sqrt(std::max(vcov(j, j), 0.0));
    return s;
}

// ---------------------------------------------------------------------------
// Stage 1

namespace {

FittedNuisance fit_by_engine(const Design& design, const Eigen::VectorXd& y, Family family,
                             const Stage1Config& config, const char* what) {
    if (config.engine == Engine::glm) {
        if (design.layout.spec.has_splines())
            throw ConfigError(std::string(what) + " formula has spline terms; use engine = gam");
        return fit_glm(design, y, family, nullptr, config.fit);
    }
    return fit_pspline_gam(design, y, family, config.lambda_grid, config.fit);
}

Family outcome_family(const Stage1Config& config, Link link, const Eigen::VectorXd& y) {
    if (config.mu_family) return *config.mu_family;
    if (link == Link::log && (y.array() == 0.0 || y.array() == 1.0).all()) return Family::binomial;
    return Family::gaussian;
}

NumeratorModel numerator(const MrtPanel& panel, const std::vector<std::size_t>& avail_rows,
                         const Stage1Config& config) {
    if (config.ptilde) return fit_numerator(panel, *config.ptilde, config.fit);
    double s = 0.0;
    for (auto r : avail_rows) s += panel.treat()[r];
    const double rate = s / static_cast<double>(avail_rows.size());
    if (!(rate > 0.0 && rate < 1.0))
        throw DataError("degenerate", "treatment is constant on available decision points");
    return NumeratorModel::constant(rate);
}

std::vector<std::size_t> available_or_throw(const MrtPanel& panel) {
    auto rows = panel.available_rows();
    if (rows.empty()) throw DataError("structure", "panel has no available decision points");
    return rows;
}

}  // namespace

NuisanceSet fit_nuisances(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    model.validate();
    NuisanceSet ns;
    const auto rows = available_or_throw(panel);
    const auto N = idx(panel.size());
    const auto obs = panel.obs_flag();
    const auto y = panel.outcome();
    ns.e_rows = rows;

    ns.ptilde = numerator(panel, rows, config);
    ns.values.ptilde = Eigen::VectorXd::Zero(N);
    {
        const Eigen::VectorXd v = ns.ptilde.evaluate(panel, rows);
        for (std::size_t k = 0; k < rows.size(); ++k) ns.values.ptilde[idx(rows[k])] = v[idx(k)];
    }

    ns.values.e = Eigen::VectorXd::Ones(N);
    const bool complete = std::all_of(rows.begin(), rows.end(), [&](std::size_t r) { return obs[r] == 1.0; });
    if (!(complete && config.skip_e_when_complete)) {
        FormulaSpec spec = config.e_formula;
        spec.family = Family::binomial;
        const Design d = build_design(panel, rows, spec);
        Eigen::VectorXd r(idx(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) r[idx(k)] = obs[rows[k]];
        ns.e_fit = fit_by_engine(d, r, Family::binomial, config, "missingness");
        const Eigen::VectorXd e = ns.e_fit->predict(d.X);
        for (std::size_t k = 0; k < rows.size(); ++k) ns.values.e[idx(rows[k])] = e[idx(k)];
    }

    for (auto r : rows)
        if (obs[r] == 1.0) ns.mu_rows.push_back(r);
    if (ns.mu_rows.empty()) throw DataError("structure", "no observed outcomes on available decision points");
    Eigen::VectorXd ym(idx(ns.mu_rows.size()));
    for (std::size_t k = 0; k < ns.mu_rows.size(); ++k) ym[idx(k)] = y[ns.mu_rows[k]];
    FormulaSpec mspec = config.mu_formula;
    mspec.family = outcome_family(config, model.link, ym);
    const Design dm = build_design(panel, ns.mu_rows, mspec);
    ns.mu_fit = fit_by_engine(dm, ym, mspec.family, config, "outcome");

    ns.values.mu1 = Eigen::VectorXd::Zero(N);
    ns.values.mu0 = Eigen::VectorXd::Zero(N);
    const Eigen::VectorXd m1 = predict_arm(ns.mu_fit, panel, rows, 1);
    const Eigen::VectorXd m0 = predict_arm(ns.mu_fit, panel, rows, 0);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        ns.values.mu1[idx(rows[k])] = m1[idx(k)];
        ns.values.mu0[idx(rows[k])] = m0[idx(k)];
    }
    return ns;
}

double min_propensity(const MrtPanel& panel, const NuisanceValues& values) {
    double m = 1.0;
    const auto avail = panel.avail();
    for (std::size_t k = 0; k < panel.size(); ++k)
        if (avail[k] == 1.0) m = std::min(m, values.e[idx(k)]);
    return m;
}

CeeEstimate estimate_cee(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    auto ns = std::make_shared<NuisanceSet>(fit_nuisances(panel, model, config));
    const EstimatingFunction ee(panel, model, ns->values);
    CeeEstimate est = solve(ee, config.solver);
    est.names = model.feature_names();
    est.min_e = min_propensity(panel, ns->values);
    if (est.min_e < 0.01) {
        std::ostringstream msg;
        msg << "minimum fitted missingness propensity is " << est.min_e
            << "; outcome positivity is doubtful and the estimate may be unstable";
        est.warnings.push_back(msg.str());
    }

    VarianceMode mode = config.variance;
    if (mode == VarianceMode::automatic)
        mode = config.engine == Engine::glm ? VarianceMode::parametric : VarianceMode::nonparametric;
    est.variance_mode = mode;
    const auto p = idx(ee.dim());
    if (mode == VarianceMode::parametric)
        est.vcov = sandwich_parametric(panel, ee, *ns, est.beta);
    else if (mode == VarianceMode::nonparametric)
        est.vcov = sandwich_nonparametric(ee, est.beta);
    else
        est.vcov = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
    est.nuisances = std::move(ns);
    return est;
}

// ---------------------------------------------------------------------------
// Complete-data estimator and comparators

CeeEstimate complete_data_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config,
                                   const CompleteDataInputs& in) {
    model.validate();
    const std::size_t N = panel.size();
    if (static_cast<std::size_t>(in.outcome.size()) != N || static_cast<std::size_t>(in.include.size()) != N)
        throw DataError("structure", "complete-data inputs do not match the panel size");
    const auto avail = panel.avail();
    const auto treat = panel.treat();
    const auto prob = panel.prob_treat();
    const auto avail_rows = available_or_throw(panel);

    std::vector<std::size_t> rows;
    for (auto r : avail_rows)
        if (in.include[idx(r)] != 0.0) rows.push_back(r);
    if (rows.empty()) throw DataError("structure", "no records left for the complete-data estimator");

    Eigen::VectorXd y(idx(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) y[idx(k)] = in.outcome[idx(rows[k])];
    if (!y.allFinite()) throw DataError("value", "non-finite outcome among included records");
    FormulaSpec mspec = config.mu_formula;
    mspec.family = outcome_family(config, model.link, y);
    const Design dm = build_design(panel, rows, mspec);
    const FittedNuisance mu = fit_by_engine(dm, y, mspec.family, config, "outcome");
    const Eigen::VectorXd m1 = predict_arm(mu, panel, rows, 1);
    const Eigen::VectorXd m0 = predict_arm(mu, panel, rows, 0);

    const NumeratorModel num = numerator(panel, avail_rows, config);
    Eigen::VectorXd ptilde = Eigen::VectorXd::Zero(idx(N));
    {
        const Eigen::VectorXd v = num.evaluate(panel, avail_rows);
        for (std::size_t k = 0; k < avail_rows.size(); ++k) ptilde[idx(avail_rows[k])] = v[idx(k)];
    }
    const WeightSet ws = compute_weights(panel, ptilde, model);
    const Eigen::MatrixXd F = model.feature_matrix(panel);
    const auto p = F.cols();
    const auto n = static_cast<double>(panel.n());

    // Per included record: s = I W W_delta (A - p~) and the residual pieces.
    struct Rec {
        std::size_t row;
        double s, y, a, p, mu1, mu0;
    };
    std::vector<Rec> recs;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::size_t r = rows[k];
        if (avail[r] == 0.0) continue;
        recs.push_back({r, ws.w[idx(r)] * ws.w_delta[idx(r)] * (treat[r] - ptilde[idx(r)]), y[idx(k)], treat[r],
                        prob[r], m1[idx(k)], m0[idx(k)]});
    }

    auto eps = [&](const Rec& q, double eta) {
        return model.link == Link::identity ? residual_identity(q.y, q.a, q.p, q.mu1, q.mu0, eta)
                                            : residual_log(q.y, q.a, q.p, q.mu1, q.mu0, eta);
    };
    auto deps = [&](const Rec& q, double eta) {
        if (model.link == Link::identity) return -(q.a + q.p - 1.0);
        return -q.a * std::exp(-q.a * eta) * q.y + (1.0 - q.p) * std::exp(-eta) * q.mu1;
    };
    auto total = [&](const Eigen::VectorXd& beta) {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(p);
        for (const auto& q : recs) {
            const auto f = F.row(idx(q.row)).transpose();
            u += q.s * eps(q, f.dot(beta)) * f;
        }
        return Eigen::VectorXd(u / n);
    };
    auto jac = [&](const Eigen::VectorXd& beta) {
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(p, p);
        for (const auto& q : recs) {
            const auto f = F.row(idx(q.row)).transpose();
            J += q.s * deps(q, f.dot(beta)) * f * f.transpose();
        }
        return Eigen::MatrixXd(J / n);
    };

    CeeEstimate est;
    est.names = model.feature_names();
    est.n = panel.n();
    est.T = panel.T();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    if (model.link == Link::identity) {
        const Eigen::MatrixXd J = jac(beta);
        check_condition(J, config.solver.max_condition);
        beta = -J.colPivHouseholderQr().solve(total(beta));
        est.solver = "closed_form";
        est.iterations = 1;
    } else {
        est.solver = "newton";
        double norm = inf_norm(total(beta));
        int it = 0;
        for (; it < config.solver.max_iter && !(norm < config.solver.tol); ++it) {
            const Eigen::VectorXd step = jac(beta).fullPivLu().solve(total(beta));
            double scale = 1.0;
            bool ok = false;
            for (int h = 0; h < 40 && !ok; ++h, scale *= 0.5) {
                const Eigen::VectorXd trial = beta - scale * step;
                try {
                    const double nt = inf_norm(total(trial));
                    if (nt < norm) {
                        beta = trial;
                        norm = nt;
                        ok = true;
                    }
                } catch (const NumericalError&) {
                }
            }
            est.trace.push_back(norm);
            if (!ok) break;
        }
        if (!(norm < config.solver.tol))
            throw NumericalError("non-convergence", "complete-data Newton solver did not converge");
        est.iterations = it;
    }
    est.beta = beta;
    est.final_estfn_norm = inf_norm(total(beta));

    // Plain sandwich over individuals.
    const Eigen::MatrixXd J = jac(beta);
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(panel.n()), p);
    const auto T = static_cast<std::size_t>(panel.T());
    for (const auto& q : recs) {
        const auto f = F.row(idx(q.row));
        U.row(idx(q.row / T)) += q.s * eps(q, f.dot(beta)) * f;
    }
    const Eigen::MatrixXd M = U.transpose() * U / n;
    const Eigen::MatrixXd Jinv = J.fullPivLu().inverse();
    est.vcov = Jinv * M * Jinv.transpose() / n;
    est.vcov = (0.5 * (est.vcov + est.vcov.transpose())).eval();
    est.variance_mode = VarianceMode::nonparametric;
    return est;
}

CeeEstimate complete_case_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    const auto N = idx(panel.size());
    CompleteDataInputs in{Eigen::Map<const Eigen::VectorXd>(panel.outcome().data(), N),
                          Eigen::Map<const Eigen::VectorXd>(panel.obs_flag().data(), N)};
    return complete_data_estimate(panel, model, config, in);
}

CeeEstimate impute_zero_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    const auto N = idx(panel.size());
    // The panel already stores 0 where the outcome is missing.
    CompleteDataInputs in{Eigen::Map<const Eigen::VectorXd>(panel.outcome().data(), N), Eigen::VectorXd::Ones(N)};
    return complete_data_estimate(panel, model, config, in);
}

CeeEstimate impute_mean_estimate(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    const auto N = idx(panel.size());
    const auto T = static_cast<std::size_t>(panel.T());
    const auto obs = panel.obs_flag();
    const auto y = panel.outcome();
    CompleteDataInputs in{Eigen::Map<const Eigen::VectorXd>(y.data(), N), Eigen::VectorXd::Ones(N)};
    std::vector<std::string> dropped;
    for (std::size_t i = 0; i < panel.n(); ++i) {
        double s = 0.0;
        int m = 0;
        for (std::size_t k = i * T; k < (i + 1) * T; ++k)
            if (obs[k] == 1.0) {
                s += y[k];
                ++m;
            }
        for (std::size_t k = i * T; k < (i + 1) * T; ++k) {
            if (m == 0)
                in.include[idx(k)] = 0.0;
            else if (obs[k] == 0.0)
                in.outcome[idx(k)] = s / m;
        }
        if (m == 0) dropped.push_back(panel.ids()[i]);
    }
    CeeEstimate est = complete_data_estimate(panel, model, config, in);
    if (!dropped.empty()) {
        std::string ids;
        for (const auto& d : dropped) ids += (ids.empty() ? "" : ", ") + d;
        est.warnings.push_back("impute-mean: dropped individuals with no observed outcome: " + ids);
    }
    return est;
}

}  // namespace cee
