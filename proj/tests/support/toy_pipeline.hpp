#pragma once

#include "cee/estimator.hpp"
#include "cee/panel.hpp"
#include "toy_panels.hpp"

namespace toy {

inline cee::MrtPanel load(const oracle::Problem& pb) { return cee::parse_csv(to_csv(pb)); }

inline cee::CeeModel model(const oracle::Problem& pb) {
    cee::CeeModel m;
    m.features = cee::parse_features(pb.slope ? "1 + z" : "1");
    return m;
}

// Stage 1 matching oracle::fit: intercept-only logistic e, linear mu with
// a treatment interaction in z, constant numerator probability.
inline cee::Stage1Config stage1(const oracle::Problem& pb, cee::VarianceMode variance) {
    cee::Stage1Config c;
    c.engine = cee::Engine::glm;
    c.e_formula = cee::parse_formula("r ~ 1", cee::Family::binomial);
    c.mu_formula = cee::parse_formula("y ~ a*z");
    c.mu_family = cee::Family::gaussian;
    c.ptilde = pb.ptilde;
    c.variance = variance;
    return c;
}

}  // namespace toy
