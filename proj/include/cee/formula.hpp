#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "cee/types.hpp"

namespace cee {

struct SmoothSpec {
    int num_basis = 10;
    int penalty_order = 2;
    bool operator==(const SmoothSpec&) const = default;
};

// One additive term of a nuisance regression. `treat_interact` multiplies
// its inner term (linear or spline in `var`) by the treatment indicator.
struct Term {
    enum class Kind { intercept, linear, spline, treat_main, treat_interact };

    Kind kind = Kind::intercept;
    std::string var;
    bool spline_inner = false;  // treat_interact only
    SmoothSpec smooth;

    static Term intercept() { return {}; }
    static Term linear(std::string var) { return {Kind::linear, std::move(var), false, {}}; }
    static Term spline(std::string var, int num_basis = 10, int penalty_order = 2) {
        return {Kind::spline, std::move(var), false, {num_basis, penalty_order}};
    }
    static Term treat_main() { return {Kind::treat_main, {}, false, {}}; }
    static Term interact(const Term& inner);

    bool is_spline() const noexcept {
        return kind == Kind::spline || (kind == Kind::treat_interact && spline_inner);
    }
    // The main-effect term an interaction refers to.
    Term inner() const;
    std::string label() const;
    bool operator==(const Term&) const = default;
};

struct FormulaSpec {
    std::string response;  // informational only
    std::vector<Term> terms;
    Family family = Family::gaussian;

    // Throws ConfigError when a spline is declared twice for the same
    // variable, num_basis < penalty_order + 2, or an interaction's inner
    // term is missing from the spec.
    void validate() const;
    bool uses_treatment() const;
    bool has_splines() const;
    std::string to_string() const;
};

// Parses the formula mini-language, for example
//   "y ~ a*(s(z,10) + s(t,10)) + s(z,10) + s(t,10)"
//   "r ~ s(t)"            "a ~ 1"            "y ~ a*(t + home) - 1"
// `a`, `A` and `treat` denote the treatment indicator. `X*Y` with one side
// the treatment expands to the treatment main effect, the other side's main
// terms and their interactions with treatment; `a:X` adds only the
// interactions. `s(var[, k[, order]])` is a P-spline term. An intercept is
// included unless the right-hand side contains `- 1` or `0`.
FormulaSpec parse_formula(std::string_view text, Family family = Family::gaussian);

bool is_treatment_name(std::string_view name);

}  // namespace cee
