#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cee/panel.hpp"
#include "cee/types.hpp"

namespace cee {

// One component of the effect-modifier feature map f_t(S_t).
struct Feature {
    enum class Kind { intercept, covariate, time_index, custom };
    using Transform = std::function<double(double t, std::span<const double> covariates)>;

    Kind kind = Kind::intercept;
    std::string name;
    Transform transform;  // custom only

    static Feature intercept() { return {Kind::intercept, "(Intercept)", {}}; }
    static Feature covariate(std::string name) { return {Kind::covariate, std::move(name), {}}; }
    static Feature time_index() { return {Kind::time_index, "t", {}}; }
    static Feature custom(std::string name, Transform fn) { return {Kind::custom, std::move(name), std::move(fn)}; }
};

// How the reference policy pi_u is supplied for window lengths above one.
enum class PiMode { irrelevant, column, constant };

// The estimand: CEE(t; s) = g^{-1}-scale contrast modeled as f_t(s)' beta.
struct CeeModel {
    Link link = Link::identity;
    std::vector<Feature> features{Feature::intercept()};
    int delta = 1;
    PiMode pi_mode = PiMode::irrelevant;
    double pi_constant = 0.0;

    std::size_t dim() const noexcept { return features.size(); }
    std::vector<std::string> feature_names() const;

    // Throws ConfigError on an empty feature list, delta < 1, a pi mode
    // inconsistent with delta, or a constant pi outside [0, 1].
    void validate() const;

    // size() x dim() feature matrix in panel storage order. Throws
    // ConfigError for unknown covariates and DataError for non-finite values.
    Eigen::MatrixXd feature_matrix(const MrtPanel& panel) const;
};

// Parses a feature list such as "1", "1 + t" or "1 + is_weekday". `t`
// denotes the decision-point index; other names are covariates.
std::vector<Feature> parse_features(std::string_view text);

std::string to_string(PiMode mode);
PiMode parse_pi_mode(std::string_view text);

}  // namespace cee
