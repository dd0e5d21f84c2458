// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after a runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cee/kernels.hpp"

namespace cee::kernels::avx2 {

namespace {

constexpr std::size_t kLanes = 4;

// Cephes-style exp: x = k ln2 + r with |r| <= ln2 / 2, exp(r) from a (2,3)
// rational approximation, then scaled by 2^k built in the exponent field.
// Inputs are clamped to [-708, 709]; relative error is a few ulp.
inline __m256d exp_pd(__m256d x) {
    const __m256d hi = _mm256_set1_pd(709.0);
    const __m256d lo = _mm256_set1_pd(-708.0);
    x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
    const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);

    __m256d k = _mm256_floor_pd(_mm256_fmadd_pd(x, log2e, _mm256_set1_pd(0.5)));
    __m256d r = _mm256_fnmadd_pd(k, c1, x);
    r = _mm256_fnmadd_pd(k, c2, r);

    const __m256d rr = _mm256_mul_pd(r, r);
    __m256d px = _mm256_set1_pd(1.26177193074810590878E-4);
    px = _mm256_fmadd_pd(px, rr, _mm256_set1_pd(3.02994407707441961300E-2));
    px = _mm256_fmadd_pd(px, rr, _mm256_set1_pd(9.99999999999999999910E-1));
    px = _mm256_mul_pd(px, r);
    __m256d qx = _mm256_set1_pd(3.00198505138664455042E-6);
    qx = _mm256_fmadd_pd(qx, rr, _mm256_set1_pd(2.52448340349684104192E-3));
    qx = _mm256_fmadd_pd(qx, rr, _mm256_set1_pd(2.27265548208155028766E-1));
    qx = _mm256_fmadd_pd(qx, rr, _mm256_set1_pd(2.00000000000000000009E0));
    __m256d er = _mm256_div_pd(px, _mm256_sub_pd(qx, px));
    er = _mm256_fmadd_pd(_mm256_set1_pd(2.0), er, _mm256_set1_pd(1.0));

    // 2^k for k in [-1022, 1023]; k = -1023 only arises at the lower clamp
    // and is split into two factors to stay normal.
    const __m128i k32 = _mm256_cvtpd_epi32(k);
    __m256i k64 = _mm256_cvtepi32_epi64(k32);
    const __m256i low = _mm256_cmpgt_epi64(_mm256_set1_epi64x(-1022), k64);
    const __m256i k_adj = _mm256_blendv_epi8(k64, _mm256_add_epi64(k64, _mm256_set1_epi64x(1)), low);
    const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(k_adj, _mm256_set1_epi64x(1023)), 52);
    __m256d scale = _mm256_castsi256_pd(bits);
    __m256d result = _mm256_mul_pd(er, scale);
    result = _mm256_blendv_pd(result, _mm256_mul_pd(result, _mm256_set1_pd(0.5)), _mm256_castsi256_pd(low));
    return result;
}

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void exp_array(const double* x, std::size_t n, double* out) {
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) _mm256_storeu_pd(out + k, exp_pd(_mm256_loadu_pd(x + k)));
    if (k < n) {
        alignas(32) double buf[kLanes] = {0, 0, 0, 0};
        std::copy(x + k, x + n, buf);
        _mm256_store_pd(buf, exp_pd(_mm256_load_pd(buf)));
        std::copy(buf, buf + (n - k), out + k);
    }
}

namespace {

template <bool LogLink>
void ee_kernel(const EeInputs& in, const double* eta, double* c, double* dc) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d zero = _mm256_setzero_pd();
    auto body = [&](std::size_t k, const double* av, const double* tr, const double* pr, const double* ob,
                    const double* y, const double* e, const double* m1, const double* m0, const double* pt,
                    const double* wt, const double* et, double* cout, double* dcout) {
        const __m256d I = _mm256_loadu_pd(av + k);
        const __m256d a = _mm256_loadu_pd(tr + k);
        const __m256d p = _mm256_loadu_pd(pr + k);
        const __m256d mu1 = _mm256_loadu_pd(m1 + k);
        const __m256d mu0 = _mm256_loadu_pd(m0 + k);
        const __m256d centering = _mm256_sub_pd(_mm256_add_pd(p, a), one);
        const __m256d resid = _mm256_sub_pd(_mm256_sub_pd(_mm256_loadu_pd(y + k), _mm256_mul_pd(a, mu1)),
                                            _mm256_mul_pd(_mm256_sub_pd(one, a), mu0));
        const __m256d ipw = _mm256_div_pd(_mm256_loadu_pd(ob + k), _mm256_loadu_pd(e + k));
        const __m256d scale = _mm256_mul_pd(_mm256_mul_pd(I, _mm256_loadu_pd(wt + k)),
                                            _mm256_sub_pd(a, _mm256_loadu_pd(pt + k)));
        const __m256d lp = _mm256_loadu_pd(et + k);
        __m256d cv, dcv;
        if constexpr (!LogLink) {
            const __m256d aug = _mm256_mul_pd(centering, _mm256_sub_pd(_mm256_sub_pd(mu1, mu0), lp));
            cv = _mm256_mul_pd(scale, _mm256_add_pd(_mm256_mul_pd(ipw, resid), aug));
            dcv = _mm256_sub_pd(zero, _mm256_mul_pd(scale, centering));
        } else {
            const __m256d e1 = exp_pd(_mm256_sub_pd(zero, lp));
            const __m256d treated = _mm256_cmp_pd(a, one, _CMP_EQ_OQ);
            const __m256d ea = _mm256_blendv_pd(one, e1, treated);
            const __m256d obs_term = _mm256_mul_pd(_mm256_mul_pd(ipw, ea), resid);
            const __m256d aug = _mm256_mul_pd(centering, _mm256_sub_pd(_mm256_mul_pd(e1, mu1), mu0));
            cv = _mm256_mul_pd(scale, _mm256_add_pd(obs_term, aug));
            const __m256d d = _mm256_sub_pd(_mm256_sub_pd(zero, _mm256_mul_pd(a, obs_term)),
                                            _mm256_mul_pd(_mm256_mul_pd(centering, e1), mu1));
            dcv = _mm256_mul_pd(scale, d);
        }
        const __m256d unavailable = _mm256_cmp_pd(I, zero, _CMP_EQ_OQ);
        _mm256_storeu_pd(cout + k, _mm256_blendv_pd(cv, zero, unavailable));
        _mm256_storeu_pd(dcout + k, _mm256_blendv_pd(dcv, zero, unavailable));
    };

    std::size_t k = 0;
    for (; k + kLanes <= in.n; k += kLanes)
        body(k, in.avail, in.treat, in.prob, in.obs, in.outcome, in.e, in.mu1, in.mu0, in.ptilde, in.weight, eta, c,
             dc);
    if (k < in.n) {
        // Pad the tail with unavailable records so the blend zeroes them.
        const std::size_t m = in.n - k;
        alignas(32) double buf[11][kLanes];
        const double* src[11] = {in.avail, in.treat, in.prob, in.obs,    in.outcome, in.e,
                                 in.mu1,   in.mu0,   in.ptilde, in.weight, eta};
        for (int f = 0; f < 11; ++f) {
            std::fill(buf[f], buf[f] + kLanes, f == 5 ? 1.0 : 0.0);
            std::copy(src[f] + k, src[f] + in.n, buf[f]);
        }
        alignas(32) double cb[kLanes], dcb[kLanes];
        body(0, buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6], buf[7], buf[8], buf[9], buf[10], cb, dcb);
        std::copy(cb, cb + m, c + k);
        std::copy(dcb, dcb + m, dc + k);
    }
}

}  // namespace

void ee_identity(const EeInputs& in, const double* eta, double* c, double* dc) { ee_kernel<false>(in, eta, c, dc); }

void ee_log(const EeInputs& in, const double* eta, double* c, double* dc) { ee_kernel<true>(in, eta, c, dc); }

void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z) {
    const __m256d one = _mm256_set1_pd(1.0);
    const __m256d lo = _mm256_set1_pd(-700.0);
    const __m256d hi = _mm256_set1_pd(700.0);
    const __m256d floor_v = _mm256_set1_pd(1e-300);
    std::size_t k = 0;
    for (; k + kLanes <= n; k += kLanes) {
        const __m256d x = _mm256_min_pd(_mm256_max_pd(_mm256_loadu_pd(eta + k), lo), hi);
        const __m256d m = _mm256_div_pd(one, _mm256_add_pd(one, exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), x))));
        const __m256d v = _mm256_max_pd(_mm256_mul_pd(m, _mm256_sub_pd(one, m)), floor_v);
        _mm256_storeu_pd(mu + k, m);
        _mm256_storeu_pd(w + k, _mm256_mul_pd(_mm256_loadu_pd(prior + k), v));
        _mm256_storeu_pd(z + k, _mm256_add_pd(x, _mm256_div_pd(_mm256_sub_pd(_mm256_loadu_pd(y + k), m), v)));
    }
    if (k < n) scalar::logistic_working(eta + k, y + k, prior + k, n - k, mu + k, w + k, z + k);
}

void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G) {
    std::vector<double> wx(n);
    for (std::size_t j = 0; j < p; ++j) {
        const double* xj = X + j * n;
        std::size_t k = 0;
        for (; k + kLanes <= n; k += kLanes)
            _mm256_storeu_pd(wx.data() + k, _mm256_mul_pd(_mm256_loadu_pd(w + k), _mm256_loadu_pd(xj + k)));
        for (; k < n; ++k) wx[k] = w[k] * xj[k];

        for (std::size_t l = j; l < p; ++l) {
            const double* xl = X + l * n;
            __m256d acc0 = _mm256_setzero_pd();
            __m256d acc1 = _mm256_setzero_pd();
            std::size_t i = 0;
            for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
                acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(wx.data() + i), _mm256_loadu_pd(xl + i), acc0);
                acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(wx.data() + i + kLanes), _mm256_loadu_pd(xl + i + kLanes),
                                       acc1);
            }
            double s = hsum(_mm256_add_pd(acc0, acc1));
            for (; i < n; ++i) s += wx[i] * xl[i];
            G[j + l * p] = s;
            G[l + j * p] = s;
        }
    }
}

void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v) {
    std::vector<double> wy(w, w + n);
    if (y) {
        std::size_t k = 0;
        for (; k + kLanes <= n; k += kLanes)
            _mm256_storeu_pd(wy.data() + k, _mm256_mul_pd(_mm256_loadu_pd(w + k), _mm256_loadu_pd(y + k)));
        for (; k < n; ++k) wy[k] = w[k] * y[k];
    }
    for (std::size_t j = 0; j < p; ++j) {
        const double* xj = X + j * n;
        __m256d acc = _mm256_setzero_pd();
        std::size_t i = 0;
        for (; i + kLanes <= n; i += kLanes)
            acc = _mm256_fmadd_pd(_mm256_loadu_pd(wy.data() + i), _mm256_loadu_pd(xj + i), acc);
        double s = hsum(acc);
        for (; i < n; ++i) s += wy[i] * xj[i];
        v[j] = s;
    }
}

}  // namespace cee::kernels::avx2
