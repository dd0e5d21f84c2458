#include <atomic>
#include <cstdlib>
#include <cstring>

#include "cee/kernels.hpp"

namespace cee::kernels {

namespace {

Isa detect() noexcept {
    const char* force = std::getenv("CEE_FORCE_SCALAR");
    if (force && std::strcmp(force, "0") != 0 && *force) return Isa::scalar;
    return avx2_available() ? Isa::avx2 : Isa::scalar;
}

std::atomic<int> g_override{-1};

}  // namespace

bool avx2_available() noexcept {
#if defined(CEE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return ok;
#else
    return false;
#endif
}

Isa active_isa() noexcept {
    const int o = g_override.load(std::memory_order_relaxed);
    if (o >= 0) return static_cast<Isa>(o);
    static const Isa detected = detect();
    return detected;
}

void force_isa(Isa isa) noexcept {
    if (isa == Isa::avx2 && !avx2_available()) isa = Isa::scalar;
    g_override.store(static_cast<int>(isa), std::memory_order_relaxed);
}

void reset_isa() noexcept { g_override.store(-1, std::memory_order_relaxed); }

const char* isa_name(Isa isa) noexcept { return isa == Isa::avx2 ? "avx2" : "scalar"; }

void ee_coefficients(Link link, const EeInputs& in, const double* eta, double* c, double* dc) {
#if defined(CEE_HAVE_AVX2)
    if (active_isa() == Isa::avx2) {
        link == Link::identity ? avx2::ee_identity(in, eta, c, dc) : avx2::ee_log(in, eta, c, dc);
        return;
    }
#endif
    link == Link::identity ? scalar::ee_identity(in, eta, c, dc) : scalar::ee_log(in, eta, c, dc);
}

void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z) {
#if defined(CEE_HAVE_AVX2)
    if (active_isa() == Isa::avx2) return avx2::logistic_working(eta, y, prior, n, mu, w, z);
#endif
    scalar::logistic_working(eta, y, prior, n, mu, w, z);
}

void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G) {
#if defined(CEE_HAVE_AVX2)
    if (active_isa() == Isa::avx2) return avx2::weighted_gram(X, w, n, p, G);
#endif
    scalar::weighted_gram(X, w, n, p, G);
}

void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v) {
#if defined(CEE_HAVE_AVX2)
    if (active_isa() == Isa::avx2) return avx2::weighted_xty(X, w, y, n, p, v);
#endif
    scalar::weighted_xty(X, w, y, n, p, v);
}

}  // namespace cee::kernels
