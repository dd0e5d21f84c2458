#include <doctest.h>

#include <filesystem>
#include <string>

#include "cee/panel.hpp"
#include "../support/expect.hpp"

using namespace cee;

namespace {

const char* kHeader = "id,t,avail,treat,prob_treat,obs_flag,outcome,z\n";

std::string two_by_three() {
    return std::string(kHeader) +
           "a,1,1,1,0.4,1,2.5,0.1\n"
           "a,2,1,0,0.4,0,,0.2\n"
           "a,3,0,0,0,1,1.0,0.3\n"
           "b,1,1,0,0.4,1,0.5,-1\n"
           "b,2,1,1,0.4,1,3.0,0\n"
           "b,3,1,0,0.4,1,-0.5,1\n";
}

}  // namespace

TEST_CASE("well-formed panel loads with its dimensions") {
    const MrtPanel p = parse_csv(two_by_three());
    CHECK(p.n() == 2);
    CHECK(p.T() == 3);
    CHECK(p.size() == 6);
    CHECK(p.covariate_names() == std::vector<std::string>{"z"});
    CHECK(p.obs_flag()[1] == 0.0);
    CHECK(p.outcome()[1] == 0.0);
    CHECK(p.available_rows() == std::vector<std::size_t>{0, 1, 3, 4, 5});
    CHECK(p.record(0).outcome.value() == 2.5);
    CHECK_FALSE(p.record(1).outcome.has_value());
}

TEST_CASE("records are sorted by individual then decision point") {
    const std::string text = std::string(kHeader) +
                             "b,2,1,0,0.5,1,4,0\n"
                             "a,2,1,0,0.5,1,2,0\n"
                             "b,1,1,0,0.5,1,3,0\n"
                             "a,1,1,0,0.5,1,1,0\n";
    const MrtPanel p = parse_csv(text);
    CHECK(p.ids() == std::vector<std::string>{"a", "b"});
    CHECK(p.outcome()[0] == 1.0);
    CHECK(p.outcome()[3] == 4.0);
}

TEST_CASE("integer ids sort numerically") {
    const std::string text = std::string(kHeader) +
                             "10,1,1,0,0.5,1,1,0\n"
                             "9,1,1,0,0.5,1,2,0\n";
    const MrtPanel p = parse_csv(text);
    CHECK(p.ids() == std::vector<std::string>{"9", "10"});
}

TEST_CASE("csv round trip preserves the panel") {
    const MrtPanel p = parse_csv(two_by_three());
    const MrtPanel q = parse_csv(to_csv(p));
    REQUIRE(q.size() == p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        CHECK(q.outcome()[k] == p.outcome()[k]);
        CHECK(q.obs_flag()[k] == p.obs_flag()[k]);
        CHECK(q.covariate(0)[k] == p.covariate(0)[k]);
    }
    CHECK(to_csv(q) == to_csv(p));
}

TEST_CASE("schema mapping renames roles") {
    std::string text = "user,dp,av,a,p,r,y,x\n"
                       "u1,1,1,1,0.3,1,1,5\n"
                       "u2,1,1,0,0.3,1,2,6\n";
    CsvSchema s;
    s.id = "user";
    s.t = "dp";
    s.avail = "av";
    s.treat = "a";
    s.prob_treat = "p";
    s.obs_flag = "r";
    s.outcome = "y";
    const MrtPanel p = parse_csv(text, s);
    CHECK(p.n() == 2);
    CHECK(p.covariate_names() == std::vector<std::string>{"x"});
}

TEST_CASE("validation errors name their category") {
    SUBCASE("missing column") {
        const std::string text = "id,t,avail,treat,obs_flag,outcome\na,1,1,0,1,1\n";
        CHECK(error_category([&] { parse_csv(text); }) == "schema");
        CHECK(error_message([&] { parse_csv(text); }).find("prob_treat") != std::string::npos);
    }
    SUBCASE("treatment while unavailable") {
        const std::string text = std::string(kHeader) + "a,1,0,1,0.4,1,1,0\nb,1,1,0,0.4,1,1,0\n";
        CHECK(error_category([&] { parse_csv(text); }) == "structure");
    }
    SUBCASE("outcome present with obs_flag 0") {
        const std::string text = std::string(kHeader) + "a,1,1,1,0.4,0,5.2,0\nb,1,1,0,0.4,1,1,0\n";
        CHECK(error_category([&] { parse_csv(text); }) == "consistency");
        CHECK(error_message([&] { parse_csv(text); }).find("line 2") != std::string::npos);
    }
    SUBCASE("non-binary treatment") {
        const std::string text = std::string(kHeader) + "a,1,1,2,0.4,1,1,0\nb,1,1,0,0.4,1,1,0\n";
        CHECK(error_category([&] { parse_csv(text); }) == "value");
    }
    SUBCASE("ragged panel lists the offending individual") {
        const std::string text = std::string(kHeader) + "a,1,1,0,0.4,1,1,0\na,2,1,0,0.4,1,1,0\nb,1,1,0,0.4,1,1,0\n";
        CHECK(error_category([&] { parse_csv(text); }) == "structure");
        CHECK(error_message([&] { parse_csv(text); }).find("b") != std::string::npos);
    }
    SUBCASE("missing file") {
        CHECK(error_category([&] { load_csv("/nonexistent/panel.csv"); }) == "io");
    }
}

TEST_CASE("positivity report") {
    auto panel_with = [](double p0, int avail0) {
        std::string text = kHeader;
        text += "a,1," + std::to_string(avail0) + ",0," + std::to_string(p0) + ",1,1,0\n";
        text += "a,2,1,0,0.4,1,1,0\nb,1,1,1,0.4,1,1,0\nb,2,1,0,0.4,1,1,0\n";
        return parse_csv(text);
    };
    CHECK(validate_positivity(panel_with(0.4, 1), 0.05).ok());
    const auto rep = validate_positivity(panel_with(0.999, 1), 0.05);
    REQUIRE(rep.violations.size() == 1);
    CHECK(rep.violations[0].individual_id == "a");
    CHECK(rep.violations[0].t == 1);
    CHECK(validate_positivity(panel_with(0.0, 0), 0.05).ok());
}

TEST_CASE("from_records rejects a single individual") {
    DecisionRecord r;
    r.individual_id = "a";
    r.t = 1;
    r.prob_treat = 0.5;
    r.outcome = 1.0;
    CHECK(error_category([&] { MrtPanel::from_records({r}, {}); }) == "structure");
}
