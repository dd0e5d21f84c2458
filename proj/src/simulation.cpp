#include "cee/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <thread>

#include "cee/error.hpp"
#include "cee/variance.hpp"
#include "csv_util.hpp"

namespace cee {

Pattern parse_pattern(std::string_view text) {
    if (text == "linear") return Pattern::linear;
    if (text == "simple_nonlinear") return Pattern::simple_nonlinear;
    if (text == "periodic") return Pattern::periodic;
    throw ConfigError("unknown pattern '" + std::string(text) + "' (expected linear, simple_nonlinear or periodic)");
}

std::string to_string(Pattern pattern) {
    switch (pattern) {
        case Pattern::linear: return "linear";
        case Pattern::simple_nonlinear: return "simple_nonlinear";
        case Pattern::periodic: return "periodic";
    }
    return {};
}

double q22(double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DataError("domain", "q22 argument " + std::to_string(x) + " outside [0, 1]");
    return 6.0 * x * (1.0 - x);
}

double g_fn(Pattern pattern, double alpha0, double alpha1, int t, int T, double z) {
    const double tt = static_cast<double>(t) / T;
    switch (pattern) {
        case Pattern::linear: return alpha0 + alpha1 * (tt + z / 6.0);
        case Pattern::simple_nonlinear: return alpha0 + alpha1 * (q22(z / 6.0 + 0.5) + q22(tt));
        case Pattern::periodic: return alpha0 + alpha1 * (std::sin(static_cast<double>(t)) + std::sin(z));
    }
    return 0.0;
}

std::array<double, 2> missingness_alpha(Pattern pattern) {
    switch (pattern) {
        case Pattern::linear: return {-0.5, 1.5};
        case Pattern::simple_nonlinear: return {-2.0, 1.5};
        case Pattern::periodic: return {0.5, 1.5};
    }
    return {0.0, 0.0};
}

std::array<double, 2> SimScenario::default_beta(Link link) {
    return link == Link::identity ? std::array<double, 2>{1.5, 2.1} : std::array<double, 2>{0.2, 0.2};
}

void SimScenario::validate() const {
    if (n < 2) throw ConfigError("scenario needs n >= 2");
    if (n_reps < 1) throw ConfigError("scenario needs n_reps >= 1");
    if (T < 1) throw ConfigError("scenario needs T >= 1");
    if (!(p_treat > 0.0 && p_treat < 1.0)) throw ConfigError("p_treat must lie in (0, 1)");
    if (link == Link::log) {
        // z ranges over [-2, 2] and q < 0.4.
        const double worst = std::exp(std::max(0.0, std::abs(beta_true[0]) + 2.0 * std::abs(beta_true[1]))) * 0.4;
        if (!(worst < 1.0))
            throw ConfigError("log-link scenario: beta lets P(Y = 1) exceed one (need exp(|b0| + 2|b1|) * 0.4 < 1)");
    }
}

std::uint64_t replication_seed(std::uint64_t seed, int n, std::uint64_t rep) {
    auto mix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(n)) ^ rep);
}

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SimPanel generate_panel(const SimScenario& sc, std::uint64_t rep_index) {
    sc.validate();
    std::mt19937_64 rng(replication_seed(sc.seed, sc.n, rep_index));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto alpha = missingness_alpha(sc.pattern_e);
    const std::size_t N = static_cast<std::size_t>(sc.n) * static_cast<std::size_t>(sc.T);

    std::vector<DecisionRecord> records;
    records.reserve(N);
    LatentTruth truth{Eigen::VectorXd(static_cast<Eigen::Index>(N)), Eigen::VectorXd(static_cast<Eigen::Index>(N)),
                      Eigen::VectorXd(static_cast<Eigen::Index>(N))};
    Eigen::Index k = 0;
    for (int i = 0; i < sc.n; ++i) {
        for (int t = 1; t <= sc.T; ++t, ++k) {
            const double z = -2.0 + 4.0 * unif(rng);
            const int a = unif(rng) < sc.p_treat ? 1 : 0;
            const double e = expit(g_fn(sc.pattern_e, alpha[0], alpha[1], t, sc.T, z));
            const int r = unif(rng) < e ? 1 : 0;
            const double effect = sc.beta_true[0] + sc.beta_true[1] * z;
            double mu0, mu1, y;
            if (sc.link == Link::identity) {
                mu0 = g_fn(sc.pattern_mu0, 0.5, 1.5, t, sc.T, z);
                mu1 = mu0 + effect;
                y = (a ? mu1 : mu0) + noise(rng);
            } else {
                mu0 = 0.4 * expit(g_fn(sc.pattern_mu0, 0.5, 1.5, t, sc.T, z));
                mu1 = std::exp(effect) * mu0;
                y = unif(rng) < (a ? mu1 : mu0) ? 1.0 : 0.0;
            }
            truth.e[k] = e;
            truth.mu1[k] = mu1;
            truth.mu0[k] = mu0;

            DecisionRecord rec;
            rec.individual_id = std::to_string(i + 1);
            rec.t = t;
            rec.avail = 1;
            rec.treat = a;
            rec.prob_treat = sc.p_treat;
            rec.obs_flag = r;
            if (r) rec.outcome = y;
            rec.covariates = {z};
            records.push_back(std::move(rec));
        }
    }
    return {MrtPanel::from_records(std::move(records), {"z"}), std::move(truth)};
}

CeeModel simulation_model(Link link) {
    CeeModel m;
    m.link = link;
    m.features = {Feature::intercept(), Feature::covariate("z")};
    return m;
}

Stage1Config implementation_spec(std::string_view which, Link link) {
    static const char* full_e = "r ~ s(z) + s(t)";
    static const char* time_e = "r ~ s(t)";
    static const char* full_mu = "y ~ a*(s(z) + s(t)) + s(z) + s(t)";
    Stage1Config c;
    c.engine = Engine::gam;
    const char* e = nullptr;
    const char* mu = nullptr;
    if (which == "A") {
        e = full_e;
        mu = full_mu;
    } else if (which == "B") {
        e = time_e;
        mu = full_mu;
    } else if (which == "C") {
        e = full_e;
        mu = "y ~ a*s(t) + s(t)";
    } else if (which == "D") {
        e = time_e;
        mu = "y ~ s(z) + s(t)";
    } else {
        throw ConfigError("unknown implementation '" + std::string(which) + "' (expected A, B, C or D)");
    }
    c.e_formula = parse_formula(e, Family::binomial);
    const Family mf = link == Link::log ? Family::binomial : Family::gaussian;
    c.mu_formula = parse_formula(mu, mf);
    c.mu_family = mf;
    return c;
}

const std::vector<std::string>& known_implementations() {
    static const std::vector<std::string> names{"A", "B", "C", "D", "complete_case", "impute_zero", "impute_mean"};
    return names;
}

ComparatorEstimates comparator_estimators(const MrtPanel& panel, const CeeModel& model, const Stage1Config& config) {
    return {complete_case_estimate(panel, model, config), impute_zero_estimate(panel, model, config),
            impute_mean_estimate(panel, model, config)};
}

// ---------------------------------------------------------------------------
// Study driver

SimMetrics aggregate_metrics(const std::string& implementation, int n, const std::array<double, 2>& truth,
                             const std::vector<RepOutcome>& reps) {
    SimMetrics m;
    m.implementation = implementation;
    m.n = n;
    m.n_reps = static_cast<int>(reps.size());
    std::vector<const RepOutcome*> ok;
    for (const auto& r : reps) {
        if (r.ok) {
            ok.push_back(&r);
        } else {
            ++m.n_failed;
            if (m.failure_messages.size() < 5) m.failure_messages.push_back(r.error);
        }
    }
    m.flagged = m.n_failed > 0.05 * m.n_reps;
    const double z = normal_quantile(0.975);
    const std::array<const char*, 2> names{"beta0", "beta1"};
    const double R = static_cast<double>(ok.size());
    for (std::size_t j = 0; j < 2; ++j) {
        CoefficientMetrics c;
        c.coefficient = names[j];
        c.truth = truth[j];
        if (ok.empty()) {
            c.mean_estimate = c.bias = c.mse = c.variance = c.mc_sd = c.coverage = c.mean_se = c.bias_mc_se =
                std::numeric_limits<double>::quiet_NaN();
            m.coefficients.push_back(c);
            continue;
        }
        const auto J = static_cast<Eigen::Index>(j);
        double sum = 0.0, se_sum = 0.0, cover = 0.0, sq = 0.0, err2 = 0.0;
        for (const auto* r : ok) {
            sum += r->beta[J];
            err2 += (r->beta[J] - truth[j]) * (r->beta[J] - truth[j]);
            se_sum += r->se[J];
            if (std::abs(r->beta[J] - truth[j]) <= z * r->se[J]) cover += 1.0;
        }
        c.mean_estimate = sum / R;
        for (const auto* r : ok) sq += (r->beta[J] - c.mean_estimate) * (r->beta[J] - c.mean_estimate);
        c.bias = c.mean_estimate - truth[j];
        c.variance = sq / R;
        c.mse = err2 / R;
        c.mc_sd = ok.size() > 1 ? std::sqrt(sq / (R - 1.0)) : 0.0;
        c.coverage = cover / R;
        c.mean_se = se_sum / R;
        c.bias_mc_se = c.mc_sd / std::sqrt(R);
        m.coefficients.push_back(c);
    }
    return m;
}

namespace {

RepOutcome run_one(const std::string& impl, const MrtPanel& panel, const CeeModel& model, Link link) {
    RepOutcome out;
    try {
        CeeEstimate est;
        if (impl == "complete_case" || impl == "impute_zero" || impl == "impute_mean") {
            const Stage1Config cfg = implementation_spec("A", link);
            est = impl == "complete_case" ? complete_case_estimate(panel, model, cfg)
                  : impl == "impute_zero" ? impute_zero_estimate(panel, model, cfg)
                                          : impute_mean_estimate(panel, model, cfg);
        } else {
            est = estimate_cee(panel, model, implementation_spec(impl, link));
        }
        out.beta = est.beta;
        out.se = est.se();
        out.ok = out.beta.allFinite() && out.se.allFinite();
        if (!out.ok) out.error = "non-finite estimate or standard error";
    } catch (const Error& e) {
        out.error = e.what();
    }
    return out;
}

}  // namespace

std::vector<SimMetrics> run_study(const StudyConfig& config,
                                  const std::function<void(std::size_t, std::size_t)>& progress) {
    config.scenario.validate();
    if (config.sample_sizes.empty()) throw ConfigError("no sample sizes given");
    if (config.implementations.empty()) throw ConfigError("no implementations given");
    for (const auto& impl : config.implementations) {
        const auto& known = known_implementations();
        if (std::find(known.begin(), known.end(), impl) == known.end())
            throw ConfigError("unknown implementation '" + impl + "'");
    }
    for (int n : config.sample_sizes)
        if (n < 2) throw ConfigError("sample sizes must be >= 2");

    const std::size_t reps = static_cast<std::size_t>(config.scenario.n_reps);
    const std::size_t nimpl = config.implementations.size();
    const std::size_t ntasks = config.sample_sizes.size() * reps;
    // results[(size index * reps + rep) * nimpl + impl]
    std::vector<RepOutcome> results(ntasks * nimpl);
    const CeeModel model = simulation_model(config.scenario.link);

    std::atomic<std::size_t> next{0}, done{0};
    std::mutex progress_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t task = next.fetch_add(1);
            if (task >= ntasks) return;
            SimScenario sc = config.scenario;
            sc.n = config.sample_sizes[task / reps];
            const std::size_t rep = task % reps;
            try {
                const SimPanel sp = generate_panel(sc, rep);
                for (std::size_t m = 0; m < nimpl; ++m)
                    results[task * nimpl + m] = run_one(config.implementations[m], sp.panel, model, sc.link);
            } catch (const Error& e) {
                for (std::size_t m = 0; m < nimpl; ++m) results[task * nimpl + m].error = e.what();
            }
            const std::size_t d = ++done;
            if (progress) {
                std::lock_guard<std::mutex> lock(progress_mutex);
                progress(d, ntasks);
            }
        }
    };
    const int threads = std::max(1, config.threads);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<SimMetrics> out;
    for (std::size_t m = 0; m < nimpl; ++m) {
        for (std::size_t s = 0; s < config.sample_sizes.size(); ++s) {
            std::vector<RepOutcome> reps_m;
            reps_m.reserve(reps);
            for (std::size_t r = 0; r < reps; ++r) reps_m.push_back(results[(s * reps + r) * nimpl + m]);
            out.push_back(aggregate_metrics(config.implementations[m], config.sample_sizes[s],
                                            config.scenario.beta_true, reps_m));
        }
    }
    return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<SimMetrics>& metrics) {
    using detail::format_double;
    out << "implementation,n,coefficient,truth,mean_estimate,bias,mse,variance,mc_sd,coverage,mean_se,bias_mc_se,"
           "n_reps,n_failed,flagged\n";
    for (const auto& m : metrics)
        for (const auto& c : m.coefficients)
            out << m.implementation << ',' << m.n << ',' << c.coefficient << ',' << format_double(c.truth) << ','
                << format_double(c.mean_estimate) << ',' << format_double(c.bias) << ',' << format_double(c.mse)
                << ',' << format_double(c.variance) << ',' << format_double(c.mc_sd) << ','
                << format_double(c.coverage) << ',' << format_double(c.mean_se) << ','
                << format_double(c.bias_mc_se) << ',' << m.n_reps << ',' << m.n_failed << ','
                << (m.flagged ? 1 : 0) << '\n';
}

void write_plot_csv(std::ostream& out, const std::vector<SimMetrics>& metrics) {
    using detail::format_double;
    out << "implementation,n,coefficient,metric,value\n";
    for (const auto& m : metrics)
        for (const auto& c : m.coefficients) {
            const std::array<std::pair<const char*, double>, 3> rows{
                {{"bias", c.bias}, {"mse", c.mse}, {"coverage", c.coverage}}};
            for (const auto& [name, v] : rows)
                out << m.implementation << ',' << m.n << ',' << c.coefficient << ',' << name << ','
                    << format_double(v) << '\n';
        }
}

}  // namespace cee
