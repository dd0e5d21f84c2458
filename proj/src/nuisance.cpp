#include "cee/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cee/error.hpp"
#include "cee/kernels.hpp"

namespace cee {

std::vector<double> default_lambda_grid() {
    std::vector<double> grid(30);
    for (int k = 0; k < 30; ++k) grid[static_cast<std::size_t>(k)] = std::pow(10.0, -4.0 + 8.0 * k / 29.0);
    return grid;
}

namespace {

void check_binary(const Eigen::VectorXd& y) {
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0) throw DataError("value", "binomial responses must be 0 or 1");
}

void check_rank(const Eigen::MatrixXd& X, const std::vector<std::string>& names, double tol) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(tol);
    const auto rank = qr.rank();
    if (rank == X.cols()) return;
    std::string cols;
    for (Eigen::Index k = rank; k < X.cols(); ++k) {
        const auto idx = static_cast<std::size_t>(qr.colsPermutation().indices()[k]);
        cols += (cols.empty() ? "" : ", ") + (idx < names.size() ? names[idx] : "#" + std::to_string(idx));
    }
    throw NumericalError("singularity", "design matrix is rank deficient (rank " + std::to_string(rank) + " of " +
                                            std::to_string(X.cols()) + "); collinear columns: " + cols);
}

Eigen::MatrixXd gram(const Eigen::MatrixXd& X, const Eigen::VectorXd& w) {
    Eigen::MatrixXd G(X.cols(), X.cols());
    kernels::weighted_gram(X.data(), w.data(), static_cast<std::size_t>(X.rows()), static_cast<std::size_t>(X.cols()),
                           G.data());
    return G;
}

Eigen::VectorXd xty(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, const Eigen::VectorXd& y) {
    Eigen::VectorXd v(X.cols());
    kernels::weighted_xty(X.data(), w.data(), y.data(), static_cast<std::size_t>(X.rows()),
                          static_cast<std::size_t>(X.cols()), v.data());
    return v;
}

Eigen::MatrixXd embed(const std::vector<DesignLayout::PenaltyBlock>& blocks, std::span<const double> lambdas,
                      Eigen::Index p) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const auto f = static_cast<Eigen::Index>(blocks[j].first);
        const auto c = static_cast<Eigen::Index>(blocks[j].count);
        S.block(f, f, c, c) += lambdas[j] * blocks[j].penalty;
    }
    return S;
}

double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& prior, const Eigen::VectorXd& eta) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        // log(1 + exp(x)) evaluated stably
        const double x = eta[i];
        const double log1pexp = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        dev += 2.0 * prior[i] * (log1pexp - y[i] * x);
    }
    return dev;
}

struct IrlsResult {
    Eigen::VectorXd coef;
    int iterations = 0;
};

// |eta| beyond this puts expit within machine epsilon of 0 or 1.
constexpr double kSeparationEta = 36.0;

// Penalized IRLS at a fixed penalty S, started from `coef`.
IrlsResult pirls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& prior,
                 const Eigen::MatrixXd& S, Eigen::VectorXd coef, const FitOptions& opt) {
    const auto n = static_cast<std::size_t>(X.rows());
    Eigen::VectorXd eta = X * coef;
    Eigen::VectorXd mu(X.rows()), w(X.rows()), z(X.rows());
    auto objective = [&](const Eigen::VectorXd& c, const Eigen::VectorXd& e) {
        return binomial_deviance(y, prior, e) + c.dot(S * c);
    };
    double obj = objective(coef, eta);
    std::vector<double> trace;
    for (int it = 1; it <= opt.max_iter; ++it) {
        kernels::logistic_working(eta.data(), y.data(), prior.data(), n, mu.data(), w.data(), z.data());
        const Eigen::VectorXd resid = prior.cwiseProduct(y - mu);
        Eigen::VectorXd ones = Eigen::VectorXd::Ones(X.rows());
        const Eigen::VectorXd score = xty(X, resid, ones) - S * coef;
        const double smax = score.cwiseAbs().maxCoeff();
        trace.push_back(smax);
        if (eta.cwiseAbs().maxCoeff() > kSeparationEta) {
            std::ostringstream msg;
            msg << "IRLS diverged: fitted probabilities numerically 0 or 1 (separation) after " << it - 1
                << " iterations; max |score| trace:";
            for (double v : trace) msg << ' ' << v;
            throw NumericalError("non-convergence", msg.str());
        }
        if (smax < opt.score_tol) return {coef, it - 1};

        const Eigen::MatrixXd A = gram(X, w) + S;
        Eigen::LLT<Eigen::MatrixXd> llt(A);
        if (llt.info() != Eigen::Success)
            throw NumericalError("singularity", "penalized IRLS system is not positive definite");
        Eigen::VectorXd next = llt.solve(xty(X, w, z));
        Eigen::VectorXd eta_next = X * next;
        double obj_next = objective(next, eta_next);
        for (int h = 0; h < 40 && !(obj_next <= obj + 1e-10 * (std::abs(obj) + 1.0)); ++h) {
            next = 0.5 * (next + coef);
            eta_next = X * next;
            obj_next = objective(next, eta_next);
        }
        if ((next - coef).cwiseAbs().maxCoeff() == 0.0 && smax >= opt.score_tol) {
            // No representable progress: accept if the score is at rounding level.
            if (smax < 1e3 * opt.score_tol) return {coef, it};
        }
        coef = std::move(next);
        eta = std::move(eta_next);
        obj = obj_next;
    }
    std::ostringstream msg;
    msg << "IRLS did not converge in " << opt.max_iter << " iterations (possible separation); max |score| trace:";
    const std::size_t from = trace.size() > 8 ? trace.size() - 8 : 0;
    for (std::size_t k = from; k < trace.size(); ++k) msg << ' ' << trace[k];
    throw NumericalError("non-convergence", msg.str());
}

Eigen::VectorXd logistic_start(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& prior,
                               const Eigen::MatrixXd& S) {
    // Start from mu = (y + 1/2) / 2 as R's glm does.
    Eigen::VectorXd w(y.size()), z(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double m = (prior[i] * y[i] + 0.5) / (prior[i] + 1.0);
        const double v = m * (1.0 - m);
        w[i] = prior[i] * v;
        z[i] = std::log(m / (1.0 - m)) + (y[i] - m) / v;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram(X, w) + S);
    return ldlt.solve(xty(X, w, z));
}

// Weighted working linear model used for smoothing-parameter selection.
struct WorkingModel {
    Eigen::MatrixXd G;  // X' W X
    Eigen::VectorXd b;  // X' W z
    double zz = 0.0;    // z' W z
    double n = 0.0;
};

struct Candidate {
    double score = INFINITY;
    Eigen::VectorXd coef;
    double edf = 0.0;
};

Candidate gcv_candidate(const WorkingModel& m, const Eigen::MatrixXd& S) {
    Candidate c;
    Eigen::LLT<Eigen::MatrixXd> llt(m.G + S);
    if (llt.info() != Eigen::Success) return c;
    c.coef = llt.solve(m.b);
    const double rss = std::max(m.zz - 2.0 * c.coef.dot(m.b) + c.coef.dot(m.G * c.coef), 0.0);
    c.edf = llt.solve(m.G).trace();
    const double denom = m.n - c.edf;
    if (!(denom > 0.0)) return c;
    c.score = m.n * rss / (denom * denom);
    return c;
}

// Shared-lambda search over the grid followed by coordinate passes over
// individual blocks. The grid must be sorted ascending; ties keep the
// smaller lambda.
std::vector<double> select_lambdas(const WorkingModel& m, const std::vector<DesignLayout::PenaltyBlock>& blocks,
                                   const std::vector<double>& grid, int passes, Candidate* best_out) {
    const auto p = m.G.rows();
    std::vector<double> lambdas(blocks.size(), grid.front());
    Candidate best;
    for (double g : grid) {
        std::vector<double> trial(blocks.size(), g);
        Candidate c = gcv_candidate(m, embed(blocks, trial, p));
        if (c.score < best.score) {
            best = std::move(c);
            lambdas = trial;
        }
    }
    if (grid.size() > 1 && blocks.size() > 1) {
        for (int pass = 0; pass < passes; ++pass) {
            bool changed = false;
            for (std::size_t j = 0; j < blocks.size(); ++j) {
                for (double g : grid) {
                    if (g == lambdas[j]) continue;
                    auto trial = lambdas;
                    trial[j] = g;
                    Candidate c = gcv_candidate(m, embed(blocks, trial, p));
                    if (c.score < best.score * (1.0 - 1e-12)) {
                        best = std::move(c);
                        lambdas = trial;
                        changed = true;
                    }
                }
            }
            if (!changed) break;
        }
    }
    if (!std::isfinite(best.score))
        throw NumericalError("non-convergence", "no smoothing parameter in the grid gives a finite GCV score");
    if (best_out) *best_out = std::move(best);
    return lambdas;
}

FittedNuisance make_fit(const Design& design, Family family, const FitOptions& opt) {
    FittedNuisance fit;
    fit.layout = design.layout;
    fit.family = family;
    fit.clip = opt.clip;
    return fit;
}

Eigen::VectorXd prior_or_ones(const Eigen::VectorXd* weights, Eigen::Index n) {
    if (!weights) return Eigen::VectorXd::Ones(n);
    if (weights->size() != n) throw DataError("structure", "weight vector length does not match the design");
    if ((weights->array() < 0.0).any()) throw DataError("value", "prior weights must be nonnegative");
    return *weights;
}

}  // namespace

Eigen::MatrixXd FittedNuisance::penalty() const {
    const auto blocks = layout.penalty_blocks();
    const auto p = coefficients.size();
    if (lambda.empty()) return Eigen::MatrixXd::Zero(p, p);
    return embed(blocks, lambda, p);
}

Eigen::VectorXd FittedNuisance::mean(const Eigen::VectorXd& eta) const {
    if (family == Family::gaussian) return eta;
    Eigen::VectorXd mu(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i)
        mu[i] = std::clamp(1.0 / (1.0 + std::exp(-eta[i])), clip, 1.0 - clip);
    return mu;
}

Eigen::VectorXd FittedNuisance::predict(const Eigen::MatrixXd& X) const { return mean(X * coefficients); }

Eigen::VectorXd FittedNuisance::predict(const Eigen::MatrixXd& X, const Eigen::VectorXd& coef) const {
    return mean(X * coef);
}

Eigen::VectorXd FittedNuisance::predict(const MrtPanel& panel, std::span<const std::size_t> rows,
                                        std::optional<int> arm) const {
    return predict(build_matrix(panel, rows, layout, arm));
}

Eigen::VectorXd predict_arm(const FittedNuisance& fit, const MrtPanel& panel, std::span<const std::size_t> rows,
                            int arm) {
    if (arm != 0 && arm != 1) throw ConfigError("arm must be 0 or 1");
    return fit.predict(panel, rows, arm);
}

FittedNuisance fit_glm(const Design& design, const Eigen::VectorXd& y, Family family, const Eigen::VectorXd* weights,
                       const FitOptions& opt) {
    const auto& X = design.X;
    if (y.size() != X.rows()) throw DataError("structure", "response length does not match the design");
    if (X.rows() < X.cols())
        throw NumericalError("singularity", "fewer observations than coefficients (" + std::to_string(X.rows()) +
                                                " < " + std::to_string(X.cols()) + ")");
    const Eigen::VectorXd prior = prior_or_ones(weights, X.rows());
    FittedNuisance fit = make_fit(design, family, opt);

    if (family == Family::gaussian) {
        const Eigen::VectorXd sw = prior.cwiseSqrt();
        const Eigen::MatrixXd Xw = sw.asDiagonal() * X;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xw);
        qr.setThreshold(opt.rank_tol);
        if (qr.rank() < X.cols()) check_rank(Xw, design.layout.column_names, opt.rank_tol);
        fit.coefficients = qr.solve(sw.cwiseProduct(y));
        fit.iterations = 1;
        return fit;
    }

    check_binary(y);
    check_rank(X, design.layout.column_names, opt.rank_tol);
    const Eigen::MatrixXd S = Eigen::MatrixXd::Zero(X.cols(), X.cols());
    auto res = pirls(X, y, prior, S, logistic_start(X, y, prior, S), opt);
    fit.coefficients = std::move(res.coef);
    fit.iterations = res.iterations;
    return fit;
}

FittedNuisance fit_penalized_fixed(const Design& design, const Eigen::VectorXd& y, Family family,
                                   std::span<const double> lambdas, const FitOptions& opt) {
    const auto& X = design.X;
    const auto blocks = design.layout.penalty_blocks();
    if (lambdas.size() != blocks.size())
        throw ConfigError("expected " + std::to_string(blocks.size()) + " smoothing parameters, got " +
                          std::to_string(lambdas.size()));
    for (double l : lambdas)
        if (!(l >= 0.0)) throw ConfigError("smoothing parameters must be nonnegative");
    if (y.size() != X.rows()) throw DataError("structure", "response length does not match the design");

    FittedNuisance fit = make_fit(design, family, opt);
    fit.lambda.assign(lambdas.begin(), lambdas.end());
    const Eigen::MatrixXd S = embed(blocks, lambdas, X.cols());
    const Eigen::VectorXd prior = Eigen::VectorXd::Ones(X.rows());
    if (family == Family::gaussian) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram(X, prior) + S);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
            throw NumericalError("singularity", "penalized normal equations are singular");
        fit.coefficients = ldlt.solve(xty(X, prior, y));
        fit.iterations = 1;
        return fit;
    }
    check_binary(y);
    auto res = pirls(X, y, prior, S, logistic_start(X, y, prior, S), opt);
    fit.coefficients = std::move(res.coef);
    fit.iterations = res.iterations;
    return fit;
}

FittedNuisance fit_pspline_gam(const Design& design, const Eigen::VectorXd& y, Family family,
                               std::span<const double> lambda_grid, const FitOptions& opt) {
    if (lambda_grid.empty()) throw ConfigError("smoothing-parameter grid is empty");
    for (double l : lambda_grid)
        if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("smoothing-parameter grid values must be positive");
    const auto blocks = design.layout.penalty_blocks();
    if (blocks.empty()) return fit_glm(design, y, family, nullptr, opt);

    const auto& X = design.X;
    if (y.size() != X.rows()) throw DataError("structure", "response length does not match the design");
    std::vector<double> grid(lambda_grid.begin(), lambda_grid.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    const auto n = X.rows();
    const Eigen::VectorXd prior = Eigen::VectorXd::Ones(n);
    FittedNuisance fit = make_fit(design, family, opt);

    if (family == Family::gaussian) {
        WorkingModel m{gram(X, prior), xty(X, prior, y), y.squaredNorm(), static_cast<double>(n)};
        Candidate best;
        fit.lambda = select_lambdas(m, blocks, grid, opt.lambda_passes, &best);
        fit.coefficients = std::move(best.coef);
        fit.gcv = best.score;
        fit.iterations = 1;
        return fit;
    }

    check_binary(y);
    // Performance iteration: choose lambdas on each IRLS working model until
    // the choice settles, then converge penalized IRLS at that choice.
    Eigen::VectorXd coef = logistic_start(X, y, prior, embed(blocks, std::vector<double>(blocks.size(), grid.front()), X.cols()));
    Eigen::VectorXd mu(n), w(n), z(n);
    std::vector<double> lambdas, previous;
    double last_dev = INFINITY;
    int outer = 0;
    for (; outer < 30; ++outer) {
        const Eigen::VectorXd eta = X * coef;
        kernels::logistic_working(eta.data(), y.data(), prior.data(), static_cast<std::size_t>(n), mu.data(), w.data(),
                                  z.data());
        WorkingModel m{gram(X, w), xty(X, w, z), z.dot(w.cwiseProduct(z)), static_cast<double>(n)};
        Candidate best;
        lambdas = select_lambdas(m, blocks, grid, opt.lambda_passes, &best);
        coef = std::move(best.coef);
        fit.gcv = best.score;
        const double dev = binomial_deviance(y, prior, X * coef);
        if (lambdas == previous && std::abs(dev - last_dev) < 1e-8 * (std::abs(dev) + 0.1)) break;
        previous = lambdas;
        last_dev = dev;
    }
    fit.lambda = lambdas;
    auto res = pirls(X, y, prior, embed(blocks, lambdas, X.cols()), coef, opt);
    fit.coefficients = std::move(res.coef);
    fit.iterations = outer + 1 + res.iterations;
    return fit;
}

Eigen::MatrixXd score_rows(const FittedNuisance& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    Eigen::VectorXd eta = X * fit.coefficients;
    Eigen::VectorXd mu = eta;
    if (fit.family == Family::binomial)
        for (Eigen::Index i = 0; i < eta.size(); ++i) mu[i] = 1.0 / (1.0 + std::exp(-eta[i]));
    return X.array().colwise() * (y - mu).array();
}

Eigen::MatrixXd score_jacobian(const FittedNuisance& fit, const Eigen::MatrixXd& X) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(X.rows());
    if (fit.family == Family::binomial) {
        const Eigen::VectorXd eta = X * fit.coefficients;
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double m = 1.0 / (1.0 + std::exp(-eta[i]));
            w[i] = m * (1.0 - m);
        }
    }
    return -gram(X, w);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json FittedNuisance::to_json() const {
    nlohmann::json j;
    j["formula"] = spec().to_string();
    j["family"] = to_string(family);
    j["coefficients"] = std::vector<double>(coefficients.data(), coefficients.data() + coefficients.size());
    j["column_names"] = layout.column_names;
    j["lambda"] = lambda;
    j["clip"] = clip;
    j["iterations"] = iterations;
    if (std::isfinite(gcv)) j["gcv"] = gcv;
    nlohmann::json smooths = nlohmann::json::array();
    for (const auto& sb : layout.smooths) {
        nlohmann::json s;
        s["var"] = sb.var;
        s["lo"] = sb.basis.lo();
        s["hi"] = sb.basis.hi();
        s["num_basis"] = sb.basis.num_basis();
        s["degree"] = sb.basis.degree();
        s["penalty_order"] = sb.penalty_order;
        s["knots"] = sb.basis.knots();
        std::vector<double> cm(sb.constraint.data(), sb.constraint.data() + sb.constraint.size());
        s["constraint"] = cm;
        smooths.push_back(s);
    }
    j["smooths"] = smooths;
    return j;
}

FittedNuisance FittedNuisance::from_json(const nlohmann::json& j) {
    FittedNuisance fit;
    fit.family = parse_family(j.at("family").get<std::string>());
    const FormulaSpec spec = parse_formula(j.at("formula").get<std::string>(), fit.family);
    std::vector<SmoothBasis> smooths;
    for (const auto& s : j.at("smooths")) {
        SmoothBasis sb;
        sb.var = s.at("var").get<std::string>();
        const int K = s.at("num_basis").get<int>();
        sb.basis = PSplineBasis(s.at("lo").get<double>(), s.at("hi").get<double>(), K, s.at("degree").get<int>());
        sb.penalty_order = s.at("penalty_order").get<int>();
        const auto cm = s.at("constraint").get<std::vector<double>>();
        if (cm.size() != static_cast<std::size_t>(K * (K - 1))) throw ConfigError("malformed spline constraint");
        sb.constraint = Eigen::Map<const Eigen::MatrixXd>(cm.data(), K, K - 1);
        sb.penalty = sb.constraint.transpose() * sb.basis.penalty(sb.penalty_order) * sb.constraint;
        smooths.push_back(std::move(sb));
    }
    fit.layout = assemble_layout(spec, std::move(smooths));
    const auto coef = j.at("coefficients").get<std::vector<double>>();
    if (coef.size() != fit.layout.ncols) throw ConfigError("coefficient count does not match the formula");
    fit.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    fit.lambda = j.value("lambda", std::vector<double>{});
    fit.clip = j.value("clip", 1e-6);
    fit.iterations = j.value("iterations", 0);
    if (j.contains("gcv")) fit.gcv = j.at("gcv").get<double>();
    return fit;
}

// ---------------------------------------------------------------------------
// Numerator probability

NumeratorModel NumeratorModel::constant(double value) {
    if (!(value > 0.0 && value < 1.0))
        throw ConfigError("numerator probability must lie strictly inside (0, 1), got " + std::to_string(value));
    NumeratorModel m;
    m.value_ = value;
    return m;
}

NumeratorModel NumeratorModel::fitted(FittedNuisance fit) {
    if (fit.family != Family::binomial) throw ConfigError("numerator model must be binomial");
    NumeratorModel m;
    m.fit_ = std::move(fit);
    return m;
}

Eigen::VectorXd NumeratorModel::evaluate(const MrtPanel& panel, std::span<const std::size_t> rows) const {
    if (!fit_) return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(rows.size()), value_);
    return fit_->predict(panel, rows);
}

std::string NumeratorModel::describe() const {
    if (!fit_) return "constant " + std::to_string(value_);
    return fit_->spec().to_string();
}

NumeratorModel fit_numerator(const MrtPanel& panel, const std::variant<double, FormulaSpec>& model,
                             const FitOptions& options) {
    if (const double* v = std::get_if<double>(&model)) return NumeratorModel::constant(*v);
    FormulaSpec spec = std::get<FormulaSpec>(model);
    spec.family = Family::binomial;
    if (spec.uses_treatment()) throw ConfigError("numerator model cannot depend on the treatment it predicts");
    const auto rows = panel.available_rows();
    if (rows.empty()) throw DataError("structure", "no available decision points to fit the numerator model");
    const Design design = build_design(panel, rows, spec);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Eigen::Index>(k)] = panel.treat()[rows[k]];
    if (spec.has_splines()) {
        const auto grid = default_lambda_grid();
        return NumeratorModel::fitted(fit_pspline_gam(design, y, Family::binomial, grid, options));
    }
    return NumeratorModel::fitted(fit_glm(design, y, Family::binomial, nullptr, options));
}

}  // namespace cee
