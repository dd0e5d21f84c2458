#include "cee/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "cee/config.hpp"
#include "cee/error.hpp"
#include "cee/estimator.hpp"
#include "cee/kernels.hpp"
#include "cee/simulation.hpp"
#include "cee/variance.hpp"
#include "csv_util.hpp"

namespace cee {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Shared helpers

json metadata(const std::string& command, const Config& cfg) {
    json m;
    m["tool"] = "cee";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["config_hash"] = fnv1a_hex(cfg.canonical());
    m["config"] = cfg.canonical();
    m["isa"] = kernels::isa_name(kernels::active_isa());
    m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    return m;
}

fs::path resolve(const Config& cfg, const std::string& p) {
    fs::path path(p);
    if (path.is_absolute() || cfg.origin().empty() || cfg.origin().front() == '<') return path;
    return fs::path(cfg.origin()).parent_path() / path;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

json vec_json(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
    return a;
}

json mat_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
    return a;
}

std::string fixed(double v, int digits) {
    if (!std::isfinite(v)) return "NA";
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// Left-aligned first column, right-aligned others.
void render_table(std::ostream& out, const std::vector<std::string>& header,
                  const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t j = 0; j < header.size(); ++j) width[j] = header[j].size();
    for (const auto& r : rows)
        for (std::size_t j = 0; j < r.size() && j < width.size(); ++j) width[j] = std::max(width[j], r[j].size());
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t j = 0; j < header.size(); ++j) {
            const std::string cell = j < r.size() ? r[j] : "";
            if (j) out << "  ";
            if (j == 0)
                out << std::left << std::setw(static_cast<int>(width[j])) << cell;
            else
                out << std::right << std::setw(static_cast<int>(width[j])) << cell;
        }
        out << std::left << '\n';
    };
    line(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (const auto& r : rows) line(r);
}

void render_csv(std::ostream& out, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows) {
    auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << detail::quote_if_needed(r[j]);
        out << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
}

ConfigValue str_value(std::string text) {
    ConfigValue v;
    v.str = std::move(text);
    return v;
}

bool excludes_zero(double lo, double hi) { return lo > 0.0 || hi < 0.0; }

// ---------------------------------------------------------------------------
// estimate

const std::vector<std::string> kEstimateKeys{
    "data",      "link",          "features",   "delta",       "pi_mode",     "pi_constant",
    "engine",    "variance",      "e_formula",  "mu_formula",  "mu_family",   "ptilde",
    "lambda_grid", "level",       "output",     "positivity_margin", "skip_e_when_complete", "max_iter",
    "tol"};
const std::vector<std::string> kSchemaKeys{"id",       "t",       "avail",   "treat",     "prob_treat",
                                           "obs_flag", "outcome", "pi_prob", "covariates"};

CsvSchema read_schema(const Config& cfg) {
    const std::string sec = "estimate.schema";
    cfg.require_known(sec, kSchemaKeys);
    CsvSchema s;
    s.id = cfg.get_string(sec, "id", s.id);
    s.t = cfg.get_string(sec, "t", s.t);
    s.avail = cfg.get_string(sec, "avail", s.avail);
    s.treat = cfg.get_string(sec, "treat", s.treat);
    s.prob_treat = cfg.get_string(sec, "prob_treat", s.prob_treat);
    s.obs_flag = cfg.get_string(sec, "obs_flag", s.obs_flag);
    s.outcome = cfg.get_string(sec, "outcome", s.outcome);
    if (cfg.has(sec, "pi_prob")) s.pi_prob = cfg.get_string(sec, "pi_prob");
    s.covariates = cfg.get_strings(sec, "covariates", {});
    return s;
}

json fit_summary(const FittedNuisance& fit) {
    json j = fit.to_json();
    j["penalized"] = fit.penalized();
    return j;
}

std::vector<std::vector<std::string>> estimate_rows(const CeeEstimate& est, const WaldInterval& ci, int digits) {
    std::vector<std::vector<std::string>> rows;
    const Eigen::VectorXd se = est.se();
    for (Eigen::Index j = 0; j < est.beta.size(); ++j) {
        const bool star = excludes_zero(ci.low[j], ci.high[j]);
        rows.push_back({est.names[static_cast<std::size_t>(j)], fixed(est.beta[j], digits), fixed(se[j], digits),
                        "(" + fixed(ci.low[j], digits) + ", " + fixed(ci.high[j], digits) + ")" + (star ? "*" : ""),
                        });
    }
    return rows;
}

int cmd_estimate(Config cfg, const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
    for (const auto& o : overrides) cfg.set_override(o);
    const std::string S = "estimate";
    if (!cfg.has_section(S)) throw ConfigError("config has no [estimate] section");
    cfg.require_known(S, kEstimateKeys);

    CeeModel model;
    model.link = parse_link(cfg.get_string(S, "link", "identity"));
    model.features = parse_features(cfg.get_string(S, "features", "1"));
    model.delta = static_cast<int>(cfg.get_integer(S, "delta", 1));
    model.pi_mode = parse_pi_mode(cfg.get_string(S, "pi_mode", model.delta > 1 ? "column" : "irrelevant"));
    model.pi_constant = cfg.get_number(S, "pi_constant", 0.0);
    model.validate();

    Stage1Config st;
    st.engine = parse_engine(cfg.get_string(S, "engine", "glm"));
    st.variance = parse_variance_mode(cfg.get_string(S, "variance", "auto"));
    st.e_formula = parse_formula(cfg.get_string(S, "e_formula"), Family::binomial);
    st.mu_formula = parse_formula(cfg.get_string(S, "mu_formula"));
    if (cfg.has(S, "mu_family")) st.mu_family = parse_family(cfg.get_string(S, "mu_family"));
    if (const ConfigValue* v = cfg.find(S, "ptilde")) {
        if (v->type == ConfigValue::Type::number)
            st.ptilde = v->num;
        else if (v->type == ConfigValue::Type::string)
            st.ptilde = parse_formula(v->str, Family::binomial);
        else
            throw ConfigError("estimate.ptilde must be a number or a formula string");
    }
    st.lambda_grid = cfg.get_numbers(S, "lambda_grid", default_lambda_grid());
    st.skip_e_when_complete = cfg.get_bool(S, "skip_e_when_complete", true);
    st.solver.max_iter = static_cast<int>(cfg.get_integer(S, "max_iter", st.solver.max_iter));
    st.solver.tol = cfg.get_number(S, "tol", st.solver.tol);
    const double level = cfg.get_number(S, "level", 0.95);
    const double margin = cfg.get_number(S, "positivity_margin", kDefaultPositivityMargin);
    if (!(margin > 0.0 && margin < 0.5)) throw ConfigError("positivity_margin must lie in (0, 0.5)");

    const CsvSchema schema = read_schema(cfg);
    const fs::path data = resolve(cfg, cfg.get_string(S, "data"));
    const MrtPanel panel = load_csv(data, schema, model.delta);

    const PositivityReport pos = validate_positivity(panel, margin);
    const CeeEstimate est = estimate_cee(panel, model, st);
    const WaldInterval ci = wald_ci(est.beta, est.vcov, level);

    json j;
    j["names"] = est.names;
    j["beta"] = vec_json(est.beta);
    j["vcov"] = mat_json(est.vcov);
    j["se"] = vec_json(est.se());
    j["ci_low"] = vec_json(ci.low);
    j["ci_high"] = vec_json(ci.high);
    j["level"] = level;
    j["link"] = to_string(model.link);
    j["variance_mode"] = to_string(est.variance_mode);
    j["min_e"] = est.min_e;
    j["solver"] = {{"method", est.solver},
                   {"iterations", est.iterations},
                   {"final_estfn_norm", est.final_estfn_norm},
                   {"trace", est.trace}};
    json nuis;
    const auto& ns = *est.nuisances;
    nuis["e"] = ns.e_fit ? fit_summary(*ns.e_fit) : json{{"constant", 1.0}, {"reason", "no missing outcomes"}};
    nuis["mu"] = fit_summary(ns.mu_fit);
    nuis["ptilde"] = ns.ptilde.is_constant() ? json{{"constant", ns.ptilde.constant_value()}}
                                             : fit_summary(*ns.ptilde.fit());
    nuis["engine"] = to_string(st.engine);
    j["nuisance"] = nuis;
    std::size_t available = 0, observed = 0;
    for (std::size_t k = 0; k < panel.size(); ++k) {
        available += panel.avail()[k] == 1.0;
        observed += panel.avail()[k] == 1.0 && panel.obs_flag()[k] == 1.0;
    }
    j["panel"] = {{"n", panel.n()}, {"T", panel.T()}, {"records", panel.size()}, {"available", available},
                  {"observed", observed}};
    j["positivity"] = {{"margin", margin}, {"violations", pos.violations.size()}};
    std::vector<std::string> warnings = est.warnings;
    if (!pos.ok())
        warnings.push_back(std::to_string(pos.violations.size()) +
                           " available records have randomization probabilities outside [" + fixed(margin, 3) +
                           ", " + fixed(1.0 - margin, 3) + "]");
    j["warnings"] = warnings;
    j["metadata"] = metadata("estimate", cfg);

    for (const auto& w : warnings) err << "warning: " << w << '\n';
    if (cfg.has(S, "output")) write_text(resolve(cfg, cfg.get_string(S, "output")), j.dump(2) + "\n");

    out << "Causal excursion effect (" << to_string(model.link) << " link), n = " << panel.n()
        << ", T = " << panel.T() << ", variance: " << to_string(est.variance_mode) << "\n\n";
    render_table(out, {"term", "estimate", "se", fixed(level * 100, 0) + "% CI"}, estimate_rows(est, ci, 3));
    out << "\n* interval excludes zero\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// simulate

const std::vector<std::string> kSimulateKeys{"pattern_e", "pattern_mu0", "T",       "p_treat",     "beta",
                                             "sample_sizes", "n_reps",  "seed",    "link",        "implementations",
                                             "threads",   "metrics",     "plot",    "meta"};

int cmd_simulate(Config cfg, const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err,
                 bool quiet, const std::string& export_panel) {
    for (const auto& o : overrides) cfg.set_override(o);
    const std::string S = "simulate";
    cfg.require_known(S, kSimulateKeys);

    StudyConfig sc;
    auto& s = sc.scenario;
    s.pattern_e = parse_pattern(cfg.get_string(S, "pattern_e", "linear"));
    s.pattern_mu0 = parse_pattern(cfg.get_string(S, "pattern_mu0", "linear"));
    s.T = static_cast<int>(cfg.get_integer(S, "T", 20));
    s.p_treat = cfg.get_number(S, "p_treat", 0.4);
    s.link = parse_link(cfg.get_string(S, "link", "identity"));
    const auto def = SimScenario::default_beta(s.link);
    const auto beta = cfg.get_numbers(S, "beta", {def[0], def[1]});
    if (beta.size() != 2) throw ConfigError("simulate.beta needs two values");
    s.beta_true = {beta[0], beta[1]};
    s.n_reps = static_cast<int>(cfg.get_integer(S, "n_reps", 1000));
    const long long seed = cfg.get_integer(S, "seed", 20240501);
    if (seed < 0) throw ConfigError("simulate.seed must be nonnegative");
    s.seed = static_cast<std::uint64_t>(seed);
    std::vector<int> sizes;
    for (double v : cfg.get_numbers(S, "sample_sizes", {50, 100, 150, 200})) {
        if (v != std::floor(v)) throw ConfigError("sample sizes must be integers");
        sizes.push_back(static_cast<int>(v));
    }
    sc.sample_sizes = sizes;
    s.n = *std::min_element(sizes.begin(), sizes.end());
    sc.implementations = cfg.get_strings(S, "implementations", {"A", "B", "C", "D"});
    const long long threads = cfg.get_integer(S, "threads", 0);
    if (threads < 0) throw ConfigError("simulate.threads must be >= 0 (0 = all cores)");
    sc.threads = threads == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))
                              : static_cast<int>(threads);

    if (!export_panel.empty()) {
        // One replication at the smallest sample size, in the estimate CSV layout.
        const SimPanel sp = generate_panel(s, 0);
        write_text(export_panel, to_csv(sp.panel));
        out << "wrote " << sp.panel.n() << " individuals x " << sp.panel.T() << " decision points to " << export_panel
            << '\n';
        return kExitOk;
    }

    auto progress = [&](std::size_t done, std::size_t total) {
        if (quiet) return;
        if (done == total || done % std::max<std::size_t>(1, total / 20) == 0)
            err << "\rsimulate: " << done << "/" << total << " replications" << (done == total ? "\n" : "")
                << std::flush;
    };
    const auto metrics = run_study(sc, progress);

    std::ostringstream mcsv, pcsv;
    write_metrics_csv(mcsv, metrics);
    write_plot_csv(pcsv, metrics);
    const fs::path mpath = resolve(cfg, cfg.get_string(S, "metrics", "metrics.csv"));
    const fs::path ppath = resolve(cfg, cfg.get_string(S, "plot", "metrics_plot.csv"));
    write_text(mpath, mcsv.str());
    write_text(ppath, pcsv.str());
    json meta = metadata("simulate", cfg);
    meta["seed"] = s.seed;
    meta["threads"] = sc.threads;
    meta["metrics"] = mpath.string();
    meta["plot"] = ppath.string();
    meta["failures"] = json::array();
    for (const auto& m : metrics) {
        if (m.n_failed == 0) continue;
        meta["failures"].push_back({{"implementation", m.implementation},
                                    {"n", m.n},
                                    {"n_failed", m.n_failed},
                                    {"flagged", m.flagged},
                                    {"messages", m.failure_messages}});
        err << "warning: " << m.implementation << " at n = " << m.n << ": " << m.n_failed << " of " << m.n_reps
            << " replications failed" << (m.flagged ? " (above 5%, run flagged)" : "") << '\n';
    }
    const fs::path meta_path = cfg.has(S, "meta") ? resolve(cfg, cfg.get_string(S, "meta"))
                                                  : fs::path(mpath).replace_extension(".meta.json");
    write_text(meta_path, meta.dump(2) + "\n");

    std::vector<std::vector<std::string>> rows;
    for (const auto& m : metrics)
        for (const auto& c : m.coefficients)
            rows.push_back({m.implementation, std::to_string(m.n), c.coefficient, fixed(c.bias, 4), fixed(c.mse, 4),
                            fixed(c.coverage, 3), fixed(c.mean_se, 4), fixed(c.mc_sd, 4),
                            std::to_string(m.n_failed)});
    render_table(out, {"impl", "n", "coef", "bias", "mse", "coverage", "mean_se", "mc_sd", "failed"}, rows);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

void add_estimate(ReportTable& t, const fs::path& path, const json& j, int digits) {
    const auto names = j.at("names").get<std::vector<std::string>>();
    auto num = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
    const auto& beta = j.at("beta");
    const auto& se = j.at("se");
    const auto& lo = j.at("ci_low");
    const auto& hi = j.at("ci_high");
    if (beta.size() != names.size() || se.size() != names.size() || lo.size() != names.size() ||
        hi.size() != names.size())
        throw DataError("value", path.string() + ": estimate arrays differ in length");
    for (std::size_t k = 0; k < names.size(); ++k) {
        const double l = num(lo[k]), h = num(hi[k]);
        t.rows.push_back({path.stem().string(), names[k], fixed(num(beta[k]), digits), fixed(num(se[k]), digits),
                          fixed(l, digits), fixed(h, digits), excludes_zero(l, h) ? "*" : ""});
    }
}

void add_metrics(ReportTable& t, const fs::path& path, const std::string& text) {
    const auto table = detail::parse_csv_table(text);
    const std::vector<std::string> need{"implementation", "n", "coefficient", "bias", "mse", "coverage"};
    std::vector<std::size_t> col;
    for (const auto& name : need) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end())
            throw DataError("schema", path.string() + ": metrics file lacks column '" + name + "'");
        col.push_back(static_cast<std::size_t>(it - table.header.begin()));
    }
    for (const auto& row : table.rows) {
        std::vector<std::string> r{path.stem().string()};
        for (auto c : col) r.push_back(row.cells[c]);
        t.rows.push_back(std::move(r));
    }
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, int digits,
               const std::string& output, std::ostream& out, std::ostream& err) {
    if (format != "text" && format != "csv" && format != "json")
        throw ConfigError("report format must be text, csv or json");
    ReportTable est{{"source", "term", "estimate", "se", "ci_low", "ci_high", "sig"}, {}};
    ReportTable met{{"source", "implementation", "n", "coefficient", "bias", "mse", "coverage"}, {}};
    for (const auto& in : inputs) {
        const fs::path path(in);
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataError("io", "cannot open report input " + in);
        std::ostringstream ss;
        ss << f.rdbuf();
        const std::string text = ss.str();
        if (path.extension() == ".json") {
            json j;
            try {
                j = json::parse(text);
            } catch (const json::exception& e) {
                throw DataError("value", in + ": malformed JSON: " + e.what());
            }
            try {
                add_estimate(est, path, j, digits);
            } catch (const json::exception& e) {
                throw DataError("schema", in + ": not an estimate file: " + e.what());
            }
        } else if (path.extension() == ".csv") {
            add_metrics(met, path, text);
        } else {
            throw ConfigError("report input " + in + " must be .json (estimate) or .csv (metrics)");
        }
    }
    if (est.rows.empty() && met.rows.empty()) err << "warning: no report rows (empty input set)\n";

    std::ostringstream buf;
    if (format == "json") {
        json j;
        auto to_json = [](const ReportTable& t) {
            json a = json::array();
            for (const auto& r : t.rows) {
                json o;
                for (std::size_t c = 0; c < t.header.size(); ++c) o[t.header[c]] = r[c];
                a.push_back(o);
            }
            return a;
        };
        j["estimates"] = to_json(est);
        j["metrics"] = to_json(met);
        buf << j.dump(2) << '\n';
    } else {
        const bool both = !est.rows.empty() && !met.rows.empty();
        if (!est.rows.empty() || met.rows.empty()) {
            format == "csv" ? render_csv(buf, est.header, est.rows) : render_table(buf, est.header, est.rows);
            if (format == "text" && !est.rows.empty()) buf << "* interval excludes zero\n";
        }
        if (both) buf << '\n';
        if (!met.rows.empty())
            format == "csv" ? render_csv(buf, met.header, met.rows) : render_table(buf, met.header, met.rows);
    }
    if (output.empty())
        out << buf.str();
    else
        write_text(output, buf.str());
    return kExitOk;
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::config: return kExitConfig;
        case ErrorKind::data: return kExitData;
        case ErrorKind::numerical: return kExitNumerical;
    }
    return kExitInternal;
}

void write_error(std::ostream& err, const std::string& command, const std::string& kind, const std::string& category,
                 const std::string& message, const std::string& artifact) {
    json j;
    j["error"] = {{"command", command}, {"kind", kind}, {"category", category}, {"message", message}};
    err << "error: " << message << '\n';
    if (!artifact.empty()) {
        try {
            write_text(artifact, j.dump(2) + "\n");
            return;
        } catch (const std::exception&) {
        }
    }
    err << j.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Doubly robust causal excursion effect estimation for micro-randomized trials", "cee"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path;
    std::vector<std::string> overrides;
    std::string error_path;

    auto* est = app.add_subcommand("estimate", "Estimate causal excursion effects from a long-format CSV panel");
    std::string data, link, features, engine, variance, output;
    est->add_option("-c,--config", config_path, "Config file with an [estimate] section")->required();
    est->add_option("--data", data, "Override estimate.data");
    est->add_option("--link", link, "Override estimate.link (identity or log)");
    est->add_option("--features", features, "Override estimate.features, e.g. \"1 + t\"");
    est->add_option("--engine", engine, "Override estimate.engine (glm or gam)");
    est->add_option("--variance", variance, "Override estimate.variance (auto, parametric, nonparametric)");
    est->add_option("-o,--output", output, "Override estimate.output (JSON result path)");
    est->add_option("--set", overrides, "Override any key: section.key=value")->take_all();
    est->add_option("--error-file", error_path, "Write the error artifact here instead of stderr");

    auto* sim = app.add_subcommand("simulate", "Run the Monte Carlo study");
    std::string sim_config;
    long long reps = -1, threads = -1, seed = -1;
    std::string metrics_path, plot_path;
    bool quiet = false;
    std::string export_panel;
    sim->add_option("-c,--config", sim_config, "Config file with a [simulate] section");
    sim->add_option("--reps", reps, "Override simulate.n_reps");
    sim->add_option("--threads", threads, "Override simulate.threads (0 = all cores)");
    sim->add_option("--seed", seed, "Override simulate.seed");
    sim->add_option("--metrics", metrics_path, "Override simulate.metrics (CSV path)");
    sim->add_option("--plot", plot_path, "Override simulate.plot (CSV path)");
    sim->add_option("--set", overrides, "Override any key: section.key=value")->take_all();
    sim->add_flag("-q,--quiet", quiet, "No progress output");
    sim->add_option("--export-panel", export_panel, "Write one simulated panel as CSV and exit");
    sim->add_option("--error-file", error_path, "Write the error artifact here instead of stderr");

    auto* rep = app.add_subcommand("report", "Render estimate JSON and metrics CSV files as tables");
    std::vector<std::string> inputs;
    std::string format = "text", report_out, report_config;
    int digits = 3;
    rep->add_option("inputs", inputs, "Estimate .json or metrics .csv files");
    rep->add_option("-c,--config", report_config, "Config file with a [report] section");
    rep->add_option("-f,--format", format, "text, csv or json");
    rep->add_option("--digits", digits, "Decimal places for estimates")->check(CLI::Range(0, 12));
    rep->add_option("-o,--output", report_out, "Write the rendered table here");
    rep->add_option("--error-file", error_path, "Write the error artifact here instead of stderr");

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        write_error(err, "cee", "config", "usage", e.what(), error_path);
        return kExitConfig;
    }

    std::string command = est->parsed() ? "estimate" : sim->parsed() ? "simulate" : "report";
    try {
        if (est->parsed()) {
            Config cfg = Config::load(config_path);
            if (!data.empty()) cfg.set("estimate", "data", str_value(fs::absolute(data).string()));
            if (!link.empty()) cfg.set("estimate", "link", str_value(link));
            if (!features.empty()) cfg.set("estimate", "features", str_value(features));
            if (!engine.empty()) cfg.set("estimate", "engine", str_value(engine));
            if (!variance.empty()) cfg.set("estimate", "variance", str_value(variance));
            if (!output.empty())
                cfg.set("estimate", "output", str_value(fs::absolute(output).string()));
            if (error_path.empty() && cfg.has("estimate", "output") &&
                cfg.find("estimate", "output")->type == ConfigValue::Type::string)
                error_path = resolve(cfg, cfg.get_string("estimate", "output")).string();
            return cmd_estimate(std::move(cfg), overrides, out, err);
        }
        if (sim->parsed()) {
            Config cfg = sim_config.empty() ? Config::parse("[simulate]\n", "<defaults>") : Config::load(sim_config);
            auto num = [](double v) {
                ConfigValue c;
                c.type = ConfigValue::Type::number;
                c.num = v;
                return c;
            };
            if (reps >= 0) cfg.set("simulate", "n_reps", num(static_cast<double>(reps)));
            if (threads >= 0) cfg.set("simulate", "threads", num(static_cast<double>(threads)));
            if (seed >= 0) cfg.set("simulate", "seed", num(static_cast<double>(seed)));
            if (!metrics_path.empty())
                cfg.set("simulate", "metrics", str_value(fs::absolute(metrics_path).string()));
            if (!plot_path.empty())
                cfg.set("simulate", "plot", str_value(fs::absolute(plot_path).string()));
            return cmd_simulate(std::move(cfg), overrides, out, err, quiet, export_panel);
        }
        if (!report_config.empty()) {
            const Config cfg = Config::load(report_config);
            cfg.require_known("report", {"inputs", "format", "digits", "output"});
            for (const auto& p : cfg.get_strings("report", "inputs", {})) inputs.push_back(resolve(cfg, p).string());
            format = cfg.get_string("report", "format", format);
            digits = static_cast<int>(cfg.get_integer("report", "digits", digits));
            if (report_out.empty() && cfg.has("report", "output"))
                report_out = resolve(cfg, cfg.get_string("report", "output")).string();
        }
        return cmd_report(inputs, format, digits, report_out, out, err);
    } catch (const Error& e) {
        const char* kind = e.kind() == ErrorKind::config ? "config" : e.kind() == ErrorKind::data ? "data" : "numerical";
        write_error(err, command, kind, e.category(), e.what(), error_path);
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        write_error(err, command, "internal", "internal", e.what(), error_path);
        return kExitInternal;
    }
}

}  // namespace cee
