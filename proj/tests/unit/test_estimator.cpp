#include <doctest.h>

#include <cmath>
#include <random>

#include "cee/estimator.hpp"
#include "cee/simulation.hpp"
#include "../support/expect.hpp"
#include "../support/toy_pipeline.hpp"

using namespace cee;
using oracle::Row;

namespace {

MrtPanel panel_of(const std::vector<Row>& rows) { return parse_csv(toy::to_csv({rows, false, 0.5})); }

NuisanceValues constant_values(const MrtPanel& p, double e, double mu1, double mu0, double ptilde) {
    const auto N = static_cast<Eigen::Index>(p.size());
    return {Eigen::VectorXd::Constant(N, e), Eigen::VectorXd::Constant(N, mu1), Eigen::VectorXd::Constant(N, mu0),
            Eigen::VectorXd::Constant(N, ptilde)};
}

// Random panel with every outcome observed.
std::vector<Row> random_rows(int n, int T, std::uint64_t seed, double effect) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Row> rows;
    for (int i = 1; i <= n; ++i)
        for (int t = 1; t <= T; ++t) {
            Row r{i, t, 1, static_cast<int>(u(rng) < 0.4), 0.4, 1, 0.0, 0.0};
            r.z = -2.0 + 4.0 * u(rng);
            r.y = r.treat * effect + 0.3 * r.z + g(rng);
            rows.push_back(r);
        }
    return rows;
}

}  // namespace

TEST_CASE("stabilized weights") {
    CHECK(stabilized_weight(1, 0.4, 0.6) == doctest::Approx(1.5));
    CHECK(stabilized_weight(0, 0.4, 0.6) == doctest::Approx(0.4 / 0.6));
    CHECK(stabilized_weight(0, 0.4, 0.6) == doctest::Approx(0.6667).epsilon(1e-4));

    const MrtPanel p = panel_of({{1, 1, 1, 1, 0.3, 1, 1}, {1, 2, 0, 0, 0.0, 1, 1}, {2, 1, 1, 0, 0.7, 1, 1},
                                 {2, 2, 1, 1, 0.2, 1, 1}});
    Eigen::VectorXd pt(4);
    pt << 0.3, 0.3, 0.7, 0.2;
    const auto w = compute_weights(p, pt, CeeModel{});
    CHECK(w.w[0] == doctest::Approx(1.0));
    CHECK(w.w[1] == 0.0);
    CHECK(w.w[2] == doctest::Approx(1.0));
    CHECK(w.w[3] == doctest::Approx(1.0));
    CHECK(w.w_delta.isApprox(Eigen::VectorXd::Ones(4)));
}

TEST_CASE("window weight with a never-treat reference policy") {
    std::vector<Row> rows;
    for (int i = 1; i <= 2; ++i)
        for (int t = 1; t <= 4; ++t) rows.push_back({i, t, 1, 0, 0.4, 1, 0.0, 0.0});
    rows[0].treat = 1;
    const MrtPanel p = parse_csv(toy::to_csv({rows, false, 0.5}), {}, 3);
    CeeModel m;
    m.delta = 3;
    m.pi_mode = PiMode::constant;
    m.pi_constant = 0.0;
    const auto w = compute_weights(p, Eigen::VectorXd::Constant(8, 0.4), m);
    CHECK(w.w_delta[0] == doctest::Approx(1.0 / (0.6 * 0.6)));
    CHECK(w.w_delta[0] == doctest::Approx(2.7778).epsilon(1e-4));
    // the window is truncated at T
    CHECK(w.w_delta[3] == doctest::Approx(1.0));
    CHECK(w.w_delta[2] == doctest::Approx(1.0 / 0.6));
}

TEST_CASE("weights reject probabilities on the boundary") {
    const MrtPanel p = panel_of({{1, 1, 1, 0, 1.0, 1, 1}, {2, 1, 1, 0, 0.5, 1, 1}});
    CHECK(error_category([&] { compute_weights(p, Eigen::VectorXd::Constant(2, 0.5), CeeModel{}); }) ==
          "positivity");
}

TEST_CASE("identity residual") {
    CHECK(residual_identity(2.0, 1, 0.5, 1.0, 0.5, 0.3) == doctest::Approx(1.1));
    CHECK(residual_identity(1.7, 1, 0.3, 0.0, 0.0, 0.0) == doctest::Approx(1.7));
    CHECK(residual_identity(1.7, 0, 0.5, 0.9, 0.9, 0.0) == doctest::Approx(0.8));
}

TEST_CASE("log residual") {
    CHECK(residual_log(0.8, 1, 0.3, 0.5, 0.2, 0.0) == doctest::Approx(0.8 - 0.7 * 0.5 - 0.3 * 0.2));
    CHECK(residual_log(1.0, 1, 0.5, 0.0, 0.0, std::log(2.0)) == doctest::Approx(0.5));
    CHECK(residual_log(0.8, 0, 0.4, 1.0, 0.5, std::log(2.0)) == doctest::Approx(0.3));
    CHECK(error_category([] { residual_log(1.0, 1, 0.5, 0.1, 0.1, 800.0); }) == "overflow");
}

TEST_CASE("per-record augmented estimating function") {
    RecordInputs r;
    r.treat = 1;
    r.prob = 0.4;
    r.ptilde = 0.6;
    r.obs = 1;
    r.outcome = 3.0;
    r.e = 0.5;
    r.mu1 = 2.0;
    r.mu0 = 1.0;
    r.w = stabilized_weight(1, 0.4, 0.6);
    const Eigen::Vector2d f(1.0, 2.0), beta(0.5, 0.25);
    const Eigen::VectorXd u = utilde(r, f, beta, Link::identity);
    CHECK(u[0] == doctest::Approx(1.2));
    CHECK(u[1] == doctest::Approx(2.4));

    SUBCASE("unavailable records contribute nothing") {
        r.avail = 0;
        CHECK(utilde(r, f, beta, Link::identity).isZero());
    }
    SUBCASE("with e = 1 and R = 1 it is the full-data function") {
        r.e = 1.0;
        const double eps = residual_identity(3.0, 1, 0.4, 2.0, 1.0, f.dot(beta));
        const Eigen::VectorXd full = r.w * eps * (1 - 0.6) * f;
        CHECK((utilde(r, f, beta, Link::identity) - full).norm() < 1e-14);
        CHECK((utilde(r, f, beta, Link::log) -
               r.w * residual_log(3.0, 1, 0.4, 2.0, 1.0, f.dot(beta)) * 0.4 * f).norm() < 1e-14);
    }
    SUBCASE("missing outcomes drop the weighted term") {
        r.obs = 0;
        r.outcome.reset();
        const double aug = (1 + 0.4 - 1) * (2.0 - 1.0 - f.dot(beta));
        CHECK((utilde(r, f, beta, Link::identity) - r.w * aug * 0.4 * f).norm() < 1e-14);
    }
    SUBCASE("observed record without outcome is an error") {
        r.outcome.reset();
        CHECK(error_category([&] { utilde(r, f, beta, Link::identity); }) == "consistency");
    }
}

TEST_CASE("estimating function agrees with the brute-force loops") {
    for (const auto& pb : toy::panels()) {
        const MrtPanel p = toy::load(pb);
        const auto N = pb.rows.size();
        oracle::Vec e(N), mu1(N), mu0(N);
        NuisanceValues nv = constant_values(p, 1.0, 0.0, 0.0, pb.ptilde);
        for (std::size_t k = 0; k < N; ++k) {
            e[k] = 0.3 + 0.05 * double(k % 7);
            mu1[k] = 1.0 + 0.1 * pb.rows[k].z;
            mu0[k] = 0.2 - 0.3 * pb.rows[k].z;
            nv.e[k] = e[k];
            nv.mu1[k] = mu1[k];
            nv.mu0[k] = mu0[k];
        }
        const EstimatingFunction ee(p, toy::model(pb), nv);
        const oracle::Vec beta = pb.slope ? oracle::Vec{0.7, -0.4} : oracle::Vec{0.7};
        const oracle::Vec expect = oracle::estfn_total(pb, beta, e, mu1, mu0);
        const Eigen::VectorXd got = ee.total(Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size()));
        for (std::size_t j = 0; j < beta.size(); ++j) CHECK(got[j] == doctest::Approx(expect[j]).epsilon(1e-12));
    }
}

TEST_CASE("aggregation over individuals") {
    SUBCASE("a single available record") {
        const MrtPanel p = panel_of({{1, 1, 1, 1, 0.4, 1, 2.0}, {2, 1, 0, 0, 0.0, 1, 1.0}});
        const auto nv = constant_values(p, 0.8, 1.0, 0.5, 0.5);
        const EstimatingFunction ee(p, CeeModel{}, nv);
        RecordInputs r;
        r.treat = 1;
        r.prob = 0.4;
        r.outcome = 2.0;
        r.e = 0.8;
        r.mu1 = 1.0;
        r.mu0 = 0.5;
        r.ptilde = 0.5;
        r.w = stabilized_weight(1, 0.4, 0.5);
        const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 0.3);
        CHECK((ee.total(b) * 2.0 - utilde(r, Eigen::VectorXd::Ones(1), b, Link::identity)).norm() < 1e-14);
    }
    SUBCASE("opposite contributions cancel") {
        // treat 1 vs treat 0 at p = p~ = 0.5 with outcomes chosen to mirror
        const MrtPanel p = panel_of({{1, 1, 1, 1, 0.5, 1, 1.0}, {2, 1, 1, 0, 0.5, 1, 1.0}});
        const EstimatingFunction ee(p, CeeModel{}, constant_values(p, 1.0, 0.0, 0.0, 0.5));
        CHECK(ee.per_individual(Eigen::VectorXd::Zero(1))(0, 0) ==
              doctest::Approx(-ee.per_individual(Eigen::VectorXd::Zero(1))(1, 0)));
        CHECK(ee.total(Eigen::VectorXd::Zero(1)).norm() < 1e-15);
    }
}

TEST_CASE("closed form matches the contrast ratio") {
    const auto rows = random_rows(4, 3, 42, 1.0);
    const MrtPanel p = panel_of(rows);
    const EstimatingFunction ee(p, CeeModel{}, constant_values(p, 1.0, 0.0, 0.0, 0.4));
    double num = 0.0, den = 0.0;
    for (const auto& r : rows) {
        num += r.y * (r.treat - r.prob);
        den += (r.treat + r.prob - 1.0) * (r.treat - r.prob);
    }
    const auto est = solve_identity(ee);
    CHECK(std::abs(est.beta[0] - num / den) < 1e-10);
    CHECK(est.solver == "closed_form");
    CHECK(ee.total(est.beta).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("noiseless data with correct nuisances recovers the effect exactly") {
    auto rows = random_rows(6, 4, 3, 0.0);
    for (auto& r : rows) r.y = 1.5 * r.treat + 0.3 * r.z;
    const MrtPanel p = panel_of(rows);
    NuisanceValues nv = constant_values(p, 1.0, 0.0, 0.0, 0.4);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        nv.mu0[k] = 0.3 * rows[k].z;
        nv.mu1[k] = 1.5 + 0.3 * rows[k].z;
    }
    const auto est = solve_identity(EstimatingFunction(p, CeeModel{}, nv));
    CHECK(est.beta[0] == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("collinear features are not estimable") {
    auto rows = random_rows(5, 3, 8, 1.0);
    for (auto& r : rows) r.z = 1.0;
    const MrtPanel p = panel_of(rows);
    CeeModel m;
    m.features = parse_features("1 + z");
    const EstimatingFunction ee(p, m, constant_values(p, 1.0, 0.0, 0.0, 0.4));
    CHECK(error_category([&] { solve_identity(ee); }) == "estimability");
}

TEST_CASE("log-link Newton solver") {
    SUBCASE("symmetric panel has its root at zero") {
        std::vector<Row> rows;
        for (int i = 1; i <= 4; ++i)
            for (int t = 1; t <= 2; ++t) rows.push_back({i, t, 1, (i + t) % 2, 0.5, 1, double(i % 2), 0.0});
        const MrtPanel p = panel_of(rows);
        CeeModel m;
        m.link = Link::log;
        const EstimatingFunction ee(p, m, constant_values(p, 1.0, 0.5, 0.5, 0.5));
        const auto est = solve_log(ee);
        CHECK(std::abs(est.beta[0]) < 1e-10);
    }
    SUBCASE("far initial value converges by step halving") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Row> rows;
        for (int i = 1; i <= 60; ++i)
            for (int t = 1; t <= 5; ++t) {
                const int a = static_cast<int>(u(rng) < 0.5);
                rows.push_back({i, t, 1, a, 0.5, 1, double(u(rng) < (a ? 0.45 : 0.3)), 0.0});
            }
        const MrtPanel p = panel_of(rows);
        CeeModel m;
        m.link = Link::log;
        const EstimatingFunction ee(p, m, constant_values(p, 1.0, 0.45, 0.3, 0.5));
        const auto est = solve_log(ee, Eigen::VectorXd::Constant(1, 10.0));
        CHECK(est.final_estfn_norm < 1e-10);
        CHECK(ee.total(est.beta).norm() < 1e-10);
        CHECK(est.iterations > 1);
        CHECK(est.trace.size() >= 2);
        const auto from_zero = solve_log(ee);
        CHECK(std::abs(from_zero.beta[0] - est.beta[0]) < 1e-9);
    }
}

TEST_CASE("jacobian matches central differences") {
    const auto pb = toy::panels()[1];
    const MrtPanel p = toy::load(pb);
    for (Link link : {Link::identity, Link::log}) {
        CeeModel m = toy::model(pb);
        m.link = link;
        NuisanceValues nv = constant_values(p, 0.7, 0.6, 0.4, pb.ptilde);
        const EstimatingFunction ee(p, m, nv);
        const Eigen::Vector2d beta(0.2, -0.1);
        const Eigen::MatrixXd J = ee.jacobian(beta);
        for (int j = 0; j < 2; ++j) {
            Eigen::Vector2d h = Eigen::Vector2d::Zero();
            h[j] = 1e-6;
            const Eigen::VectorXd fd = (ee.total(beta + h) - ee.total(beta - h)) / 2e-6;
            CHECK((J.col(j) - fd).norm() < 1e-6 * std::max(1.0, fd.norm()));
        }
    }
}

TEST_CASE("duplicating every individual leaves the estimate unchanged") {
    auto rows = random_rows(8, 3, 12, 1.0);
    auto doubled = rows;
    for (auto r : rows) {
        r.id += 100;
        doubled.push_back(r);
    }
    const MrtPanel p1 = panel_of(rows), p2 = panel_of(doubled);
    CeeModel m;
    m.features = parse_features("1 + z");
    const auto b1 = solve_identity(EstimatingFunction(p1, m, constant_values(p1, 1.0, 0.1, 0.0, 0.4))).beta;
    const auto b2 = solve_identity(EstimatingFunction(p2, m, constant_values(p2, 1.0, 0.1, 0.0, 0.4))).beta;
    CHECK((b1 - b2).norm() < 1e-12);
}

TEST_CASE("two-stage pipeline on a simulated panel") {
    SimScenario sc;
    sc.n = 200;
    const auto sp = generate_panel(sc, 0);
    const auto est = estimate_cee(sp.panel, simulation_model(Link::identity), implementation_spec("A"));
    CHECK(est.variance_mode == VarianceMode::nonparametric);
    const auto se = est.se();
    CHECK(std::abs(est.beta[0] - 1.5) < 4 * se[0]);
    CHECK(std::abs(est.beta[1] - 2.1) < 4 * se[1]);
    CHECK(est.min_e > 0.01);
    REQUIRE(est.nuisances);
    CHECK(est.nuisances->e_fit.has_value());
    CHECK(est.names == std::vector<std::string>{"(Intercept)", "z"});
}

TEST_CASE("complete outcomes reduce to the complete-data estimator") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const MrtPanel p = panel_of(random_rows(30, 4, seed, 0.8));
        CeeModel m;
        m.features = parse_features("1 + z");
        Stage1Config c;
        c.engine = Engine::glm;
        c.e_formula = parse_formula("r ~ z", Family::binomial);
        c.mu_formula = parse_formula("y ~ a*z");
        c.variance = VarianceMode::nonparametric;
        const auto dr = estimate_cee(p, m, c);
        CHECK_FALSE(dr.nuisances->e_fit.has_value());
        CompleteDataInputs in;
        in.outcome = Eigen::Map<const Eigen::VectorXd>(p.outcome().data(), p.size());
        in.include = Eigen::VectorXd::Ones(p.size());
        const auto cd = complete_data_estimate(p, m, c, in);
        CHECK((dr.beta - cd.beta).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((dr.vcov - cd.vcov).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("comparators") {
    CeeModel m;
    m.features = parse_features("1 + z");
    Stage1Config c;
    c.engine = Engine::glm;
    c.e_formula = parse_formula("r ~ z", Family::binomial);
    c.mu_formula = parse_formula("y ~ a*z");

    SUBCASE("coincide without missingness") {
        const MrtPanel p = panel_of(random_rows(20, 4, 77, 1.0));
        const auto cc = complete_case_estimate(p, m, c);
        const auto iz = impute_zero_estimate(p, m, c);
        const auto im = impute_mean_estimate(p, m, c);
        CHECK((cc.beta - iz.beta).norm() < 1e-12);
        CHECK((cc.beta - im.beta).norm() < 1e-12);
    }
    SUBCASE("impute-mean drops individuals with no observed outcome") {
        auto rows = random_rows(20, 3, 78, 1.0);
        for (auto& r : rows)
            if (r.id == 3) r.obs = 0;
        for (std::size_t k = 0; k < rows.size(); k += 5) rows[k].obs = 0;
        const MrtPanel p = panel_of(rows);
        const auto im = impute_mean_estimate(p, m, c);
        REQUIRE_FALSE(im.warnings.empty());
        CHECK(im.warnings.back().find("3") != std::string::npos);
    }
    SUBCASE("impute-zero equals a run on the zero-filled file") {
        auto rows = random_rows(20, 3, 79, 1.0);
        for (std::size_t k = 0; k < rows.size(); k += 4) rows[k].obs = 0;
        const MrtPanel p = panel_of(rows);
        const auto iz = impute_zero_estimate(p, m, c);
        for (auto& r : rows) {
            if (r.obs == 0) r.y = 0.0;
            r.obs = 1;
        }
        const auto filled = complete_case_estimate(panel_of(rows), m, c);
        CHECK((iz.beta - filled.beta).norm() < 1e-12);
    }
}

TEST_CASE("stage-1 configuration errors") {
    const MrtPanel p = panel_of(random_rows(10, 3, 5, 1.0));
    Stage1Config c;
    c.engine = Engine::glm;
    c.e_formula = parse_formula("r ~ s(z)", Family::binomial);
    c.mu_formula = parse_formula("y ~ a + s(z)");
    CHECK_THROWS_AS(estimate_cee(p, CeeModel{}, c), ConfigError);
    CHECK(parse_variance_mode("auto") == VarianceMode::automatic);
    CHECK_THROWS_AS(parse_engine("forest"), ConfigError);
}
