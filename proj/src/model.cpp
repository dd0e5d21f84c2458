#include "cee/model.hpp"

#include <cctype>
#include <cmath>

#include "cee/error.hpp"
#include "csv_util.hpp"

namespace cee {

std::vector<std::string> CeeModel::feature_names() const {
    std::vector<std::string> out;
    out.reserve(features.size());
    for (const auto& f : features) out.push_back(f.name);
    return out;
}

void CeeModel::validate() const {
    if (features.empty()) throw ConfigError("feature map must have at least one component");
    if (delta < 1) throw ConfigError("window length delta must be >= 1");
    if (delta == 1 && pi_mode != PiMode::irrelevant)
        throw ConfigError("reference policy is irrelevant when delta = 1; set pi_mode = irrelevant");
    if (delta > 1 && pi_mode == PiMode::irrelevant)
        throw ConfigError("delta > 1 requires a reference policy (pi_mode = column or constant)");
    if (pi_mode == PiMode::constant && !(pi_constant >= 0.0 && pi_constant <= 1.0))
        throw ConfigError("constant reference-policy probability must lie in [0, 1]");
    for (const auto& f : features)
        if (f.kind == Feature::Kind::custom && !f.transform)
            throw ConfigError("custom feature '" + f.name + "' has no transform");
}

Eigen::MatrixXd CeeModel::feature_matrix(const MrtPanel& panel) const {
    validate();
    const auto n = panel.size();
    const auto p = features.size();
    Eigen::MatrixXd F(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    const auto t = panel.t();
    const std::size_t ncov = panel.covariate_names().size();
    std::vector<double> row(ncov);
    for (std::size_t j = 0; j < p; ++j) {
        const auto& f = features[j];
        const auto col = static_cast<Eigen::Index>(j);
        switch (f.kind) {
            case Feature::Kind::intercept: F.col(col).setOnes(); break;
            case Feature::Kind::time_index:
                for (std::size_t k = 0; k < n; ++k) F(static_cast<Eigen::Index>(k), col) = t[k];
                break;
            case Feature::Kind::covariate: {
                const auto idx = panel.covariate_index(f.name);
                if (!idx) throw ConfigError("feature '" + f.name + "' is not a covariate of the panel");
                const auto v = panel.covariate(*idx);
                for (std::size_t k = 0; k < n; ++k) F(static_cast<Eigen::Index>(k), col) = v[k];
                break;
            }
            case Feature::Kind::custom:
                for (std::size_t k = 0; k < n; ++k) {
                    for (std::size_t c = 0; c < ncov; ++c) row[c] = panel.covariate(c)[k];
                    F(static_cast<Eigen::Index>(k), col) = f.transform(t[k], row);
                }
                break;
        }
    }
    if (!F.allFinite()) throw DataError("value", "feature map produced non-finite values");
    return F;
}

std::vector<Feature> parse_features(std::string_view text) {
    std::vector<Feature> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t plus = text.find('+', start);
        const std::string item = detail::trim(text.substr(start, plus == std::string_view::npos ? text.npos : plus - start));
        if (item.empty()) throw ConfigError("feature list '" + std::string(text) + "' has an empty term");
        if (item == "1") {
            out.push_back(Feature::intercept());
        } else if (item == "t") {
            out.push_back(Feature::time_index());
        } else {
            for (char c : item)
                if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
                    throw ConfigError("feature '" + item + "' is not a variable name");
            out.push_back(Feature::covariate(item));
        }
        if (plus == std::string_view::npos) break;
        start = plus + 1;
    }
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = i + 1; j < out.size(); ++j)
            if (out[i].name == out[j].name) throw ConfigError("feature '" + out[i].name + "' listed twice");
    return out;
}

std::string to_string(PiMode mode) {
    switch (mode) {
        case PiMode::irrelevant: return "irrelevant";
        case PiMode::column: return "column";
        case PiMode::constant: return "constant";
    }
    return {};
}

PiMode parse_pi_mode(std::string_view text) {
    if (text == "irrelevant") return PiMode::irrelevant;
    if (text == "column") return PiMode::column;
    if (text == "constant") return PiMode::constant;
    throw ConfigError("unknown pi_mode '" + std::string(text) + "' (expected irrelevant, column or constant)");
}

}  // namespace cee
