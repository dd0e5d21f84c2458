#include "cee/variance.hpp"

#include <boost/math/distributions/normal.hpp>
#include <cmath>

#include "cee/error.hpp"

namespace cee {

namespace {

Eigen::Index idx(std::size_t k) { return static_cast<Eigen::Index>(k); }

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// d mean / d eta per row, zero where the binomial prediction is clipped.
Eigen::VectorXd mean_derivative(const FittedNuisance& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& coef) {
    const Eigen::VectorXd eta = X * coef;
    if (fit.family == Family::gaussian) return Eigen::VectorXd::Ones(eta.size());
    Eigen::VectorXd d(eta.size());
    for (Eigen::Index k = 0; k < eta.size(); ++k) {
        const double m = expit(eta[k]);
        d[k] = (m < fit.clip || m > 1.0 - fit.clip) ? 0.0 : m * (1.0 - m);
    }
    return d;
}

// Adds a fitted regression's per-individual (penalized) scores into
// Phi.middleCols(first, q) and its derivative block into B.
void stack_nuisance(const FittedNuisance& fit, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const std::vector<std::size_t>& rows, std::size_t T, std::size_t n, Eigen::Index first,
                    Eigen::MatrixXd& Phi, Eigen::MatrixXd& B) {
    const auto q = X.cols();
    const Eigen::MatrixXd S = fit.penalty();
    const Eigen::MatrixXd s = score_rows(fit, X, y);
    for (std::size_t k = 0; k < rows.size(); ++k) Phi.row(idx(rows[k] / T)).segment(first, q) += s.row(idx(k));
    const Eigen::VectorXd pen = S * fit.coefficients / static_cast<double>(n);
    for (Eigen::Index i = 0; i < Phi.rows(); ++i) Phi.row(i).segment(first, q) -= pen.transpose();
    B.block(first, first, q, q) = (score_jacobian(fit, X) - S) / static_cast<double>(n);
}

}  // namespace

Eigen::MatrixXd SandwichParts::covariance() const {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(bread);
    if (!lu.isInvertible()) throw NumericalError("singularity", "sandwich bread matrix is singular");
    const Eigen::MatrixXd Binv = lu.inverse();
    Eigen::MatrixXd V = Binv * meat * Binv.transpose() / static_cast<double>(n);
    return 0.5 * (V + V.transpose());
}

SandwichParts sandwich_parts_nonparametric(const EstimatingFunction& ee, const Eigen::VectorXd& beta) {
    SandwichParts parts;
    parts.n = ee.n();
    parts.bread = ee.jacobian(beta);
    const Eigen::MatrixXd U = ee.per_individual(beta);
    parts.meat = U.transpose() * U / static_cast<double>(ee.n());
    parts.layout.push_back({"beta", 0, ee.dim()});
    return parts;
}

Eigen::MatrixXd sandwich_nonparametric(const EstimatingFunction& ee, const Eigen::VectorXd& beta) {
    return sandwich_parts_nonparametric(ee, beta).covariance();
}

SandwichParts sandwich_parts_parametric(const MrtPanel& panel, const EstimatingFunction& ee, const NuisanceSet& ns,
                                        const Eigen::VectorXd& beta, CrossDerivative cross) {
    const std::size_t p = ee.dim();
    const std::size_t n = ee.n();
    const auto T = static_cast<std::size_t>(ee.T());
    const std::size_t qe = ns.e_fit ? ns.e_fit->estfn_dim() : 0;
    const std::size_t qm = ns.mu_fit.estfn_dim();
    const std::size_t dim = p + qe + qm;
    if (panel.n() != n || panel.size() != static_cast<std::size_t>(ee.features().rows()))
        throw DataError("structure", "panel does not match the estimating function");

    SandwichParts parts;
    parts.n = n;
    parts.layout.push_back({"beta", 0, p});
    if (qe) parts.layout.push_back({"gamma_e", p, qe});
    parts.layout.push_back({"gamma_mu", p + qe, qm});

    Eigen::MatrixXd Phi = Eigen::MatrixXd::Zero(idx(n), idx(dim));
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(idx(dim), idx(dim));
    Phi.leftCols(idx(p)) = ee.per_individual(beta);
    B.topLeftCorner(idx(p), idx(p)) = ee.jacobian(beta);

    const auto& rows = ns.e_rows;  // every available record
    const auto obs = panel.obs_flag();
    const auto y = panel.outcome();

    Eigen::MatrixXd Xe;
    if (ns.e_fit) {
        Xe = build_matrix(panel, rows, ns.e_fit->layout);
        Eigen::VectorXd r(idx(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) r[idx(k)] = obs[rows[k]];
        stack_nuisance(*ns.e_fit, Xe, r, rows, T, n, idx(p), Phi, B);
    }
    {
        const Eigen::MatrixXd Xm = build_matrix(panel, ns.mu_rows, ns.mu_fit.layout);
        Eigen::VectorXd ym(idx(ns.mu_rows.size()));
        for (std::size_t k = 0; k < ns.mu_rows.size(); ++k) ym[idx(k)] = y[ns.mu_rows[k]];
        stack_nuisance(ns.mu_fit, Xm, ym, ns.mu_rows, T, n, idx(p + qe), Phi, B);
    }
    const Eigen::MatrixXd X1 = build_matrix(panel, rows, ns.mu_fit.layout, 1);
    const Eigen::MatrixXd X0 = build_matrix(panel, rows, ns.mu_fit.layout, 0);
    const Eigen::MatrixXd& F = ee.features();
    const double nd = static_cast<double>(n);

    if (cross == CrossDerivative::analytic) {
        const auto partial = ee.nuisance_partials(beta);
        if (ns.e_fit) {
            const Eigen::VectorXd de = mean_derivative(*ns.e_fit, Xe, ns.e_fit->coefficients);
            Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(idx(p), idx(qe));
            for (std::size_t k = 0; k < rows.size(); ++k) {
                const double w = partial.de[idx(rows[k])] * de[idx(k)];
                if (w != 0.0) blk.noalias() += w * F.row(idx(rows[k])).transpose() * Xe.row(idx(k));
            }
            B.block(0, idx(p), idx(p), idx(qe)) = blk / nd;
        }
        const Eigen::VectorXd d1 = mean_derivative(ns.mu_fit, X1, ns.mu_fit.coefficients);
        const Eigen::VectorXd d0 = mean_derivative(ns.mu_fit, X0, ns.mu_fit.coefficients);
        Eigen::MatrixXd blk = Eigen::MatrixXd::Zero(idx(p), idx(qm));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const auto r = idx(rows[k]);
            const auto K = idx(k);
            blk.noalias() += F.row(r).transpose() *
                             (partial.dmu1[r] * d1[K] * X1.row(K) + partial.dmu0[r] * d0[K] * X0.row(K));
        }
        B.block(0, idx(p + qe), idx(p), idx(qm)) = blk / nd;
    } else {
        // Central differences of the total estimating function in gamma.
        auto column = [&](NuisanceValues nv) { return ee.with_values(nv).total(beta); };
        const NuisanceValues& base = ns.values;
        if (ns.e_fit) {
            for (std::size_t j = 0; j < qe; ++j) {
                const double h = 1e-6 * std::max(1.0, std::abs(ns.e_fit->coefficients[idx(j)]));
                Eigen::VectorXd up = ns.e_fit->coefficients, dn = ns.e_fit->coefficients;
                up[idx(j)] += h;
                dn[idx(j)] -= h;
                NuisanceValues vu = base, vd = base;
                const Eigen::VectorXd eu = ns.e_fit->predict(Xe, up), ed = ns.e_fit->predict(Xe, dn);
                for (std::size_t k = 0; k < rows.size(); ++k) {
                    vu.e[idx(rows[k])] = eu[idx(k)];
                    vd.e[idx(rows[k])] = ed[idx(k)];
                }
                B.block(0, idx(p + j), idx(p), 1) = (column(vu) - column(vd)) / (2.0 * h);
            }
        }
        for (std::size_t j = 0; j < qm; ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(ns.mu_fit.coefficients[idx(j)]));
            Eigen::VectorXd up = ns.mu_fit.coefficients, dn = ns.mu_fit.coefficients;
            up[idx(j)] += h;
            dn[idx(j)] -= h;
            NuisanceValues vu = base, vd = base;
            const Eigen::VectorXd u1 = ns.mu_fit.predict(X1, up), u0 = ns.mu_fit.predict(X0, up);
            const Eigen::VectorXd d1 = ns.mu_fit.predict(X1, dn), d0 = ns.mu_fit.predict(X0, dn);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                vu.mu1[idx(rows[k])] = u1[idx(k)];
                vu.mu0[idx(rows[k])] = u0[idx(k)];
                vd.mu1[idx(rows[k])] = d1[idx(k)];
                vd.mu0[idx(rows[k])] = d0[idx(k)];
            }
            B.block(0, idx(p + qe + j), idx(p), 1) = (column(vu) - column(vd)) / (2.0 * h);
        }
    }

    parts.bread = std::move(B);
    parts.meat = Phi.transpose() * Phi / nd;
    return parts;
}

Eigen::MatrixXd sandwich_parametric(const MrtPanel& panel, const EstimatingFunction& ee, const NuisanceSet& ns,
                                    const Eigen::VectorXd& beta, CrossDerivative cross) {
    const auto p = idx(ee.dim());
    return sandwich_parts_parametric(panel, ee, ns, beta, cross).covariance().topLeftCorner(p, p);
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal quantile needs a probability in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

WaldInterval wald_ci(const Eigen::VectorXd& beta, const Eigen::MatrixXd& vcov, double level) {
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    if (vcov.rows() != beta.size() || vcov.cols() != beta.size())
        throw ConfigError("covariance matrix does not match beta");
    const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    const double scale = std::max(1.0, vcov.cwiseAbs().maxCoeff());
    WaldInterval ci{beta, beta};
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
        double v = vcov(j, j);
        if (v < -1e-12 * scale || std::isnan(v))
            throw NumericalError("internal", "negative variance " + std::to_string(v) + " for coefficient " +
                                                 std::to_string(j) + "; the sandwich is broken");
        v = std::max(v, 0.0);
        ci.low[j] = beta[j] - z * std::sqrt(v);
        ci.high[j] = beta[j] + z * std::sqrt(v);
    }
    return ci;
}

}  // namespace cee
