#pragma once

// Data-parallel inner loops shared by the nuisance fitters and the
// estimating-equation solver. Every kernel has a scalar reference
// implementation and, on x86-64, an AVX2+FMA variant chosen at runtime.
// Results agree to rounding; the scalar variant defines the semantics.

#include <cstddef>

#include "cee/types.hpp"

namespace cee::kernels {

enum class Isa { scalar, avx2 };

// Best ISA supported by this CPU unless overridden by force_isa() or the
// CEE_FORCE_SCALAR environment variable.
Isa active_isa() noexcept;
void force_isa(Isa isa) noexcept;
void reset_isa() noexcept;
bool avx2_available() noexcept;
const char* isa_name(Isa isa) noexcept;

// Column-wise per-record inputs of the augmented estimating function.
// `weight` is the product of the stabilized and window weights; `outcome`
// must be finite (0 where unobserved).
struct EeInputs {
    const double* avail = nullptr;
    const double* treat = nullptr;
    const double* prob = nullptr;
    const double* obs = nullptr;
    const double* outcome = nullptr;
    const double* e = nullptr;
    const double* mu1 = nullptr;
    const double* mu0 = nullptr;
    const double* ptilde = nullptr;
    const double* weight = nullptr;
    std::size_t n = 0;
};

// For each record computes the scalar multiplier c of f in the per-record
// estimating function (so U_t = c * f) and its derivative with respect to
// the linear predictor eta = f'beta. Unavailable records produce exact zeros.
void ee_coefficients(Link link, const EeInputs& in, const double* eta, double* c, double* dc);

// Binomial IRLS working quantities under the logit link:
//   mu = expit(eta), w = prior * mu (1 - mu), z = eta + (y - mu) / (mu (1 - mu)).
// eta is clamped to [-700, 700] before exponentiation.
void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z);

// G = X' diag(w) X for a column-major n x p matrix X; G is p x p column-major
// and fully populated (both triangles).
void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G);

// v = X' diag(w) y. `y` may be null, meaning a vector of ones.
void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v);

namespace scalar {
void ee_identity(const EeInputs& in, const double* eta, double* c, double* dc);
void ee_log(const EeInputs& in, const double* eta, double* c, double* dc);
void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z);
void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G);
void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v);
}  // namespace scalar

#if defined(CEE_HAVE_AVX2)
namespace avx2 {
void ee_identity(const EeInputs& in, const double* eta, double* c, double* dc);
void ee_log(const EeInputs& in, const double* eta, double* c, double* dc);
void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z);
void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G);
void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v);
// Vectorized exp used by the kernels above; exposed for equivalence tests.
void exp_array(const double* x, std::size_t n, double* out);
}  // namespace avx2
#endif

}  // namespace cee::kernels
