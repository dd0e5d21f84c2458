#include <algorithm>
#include <cmath>

#include "cee/kernels.hpp"

namespace cee::kernels::scalar {

void ee_identity(const EeInputs& in, const double* eta, double* c, double* dc) {
    for (std::size_t k = 0; k < in.n; ++k) {
        if (in.avail[k] == 0.0) {
            c[k] = 0.0;
            dc[k] = 0.0;
            continue;
        }
        const double a = in.treat[k];
        const double centering = in.prob[k] + a - 1.0;
        const double resid = in.outcome[k] - a * in.mu1[k] - (1.0 - a) * in.mu0[k];
        const double ipw = in.obs[k] / in.e[k];
        const double scale = in.avail[k] * in.weight[k] * (a - in.ptilde[k]);
        c[k] = scale * (ipw * resid + centering * (in.mu1[k] - in.mu0[k] - eta[k]));
        dc[k] = -scale * centering;
    }
}

void ee_log(const EeInputs& in, const double* eta, double* c, double* dc) {
    for (std::size_t k = 0; k < in.n; ++k) {
        if (in.avail[k] == 0.0) {
            c[k] = 0.0;
            dc[k] = 0.0;
            continue;
        }
        const double a = in.treat[k];
        const double centering = in.prob[k] + a - 1.0;
        const double resid = in.outcome[k] - a * in.mu1[k] - (1.0 - a) * in.mu0[k];
        const double ipw = in.obs[k] / in.e[k];
        const double e1 = std::exp(-eta[k]);
        const double ea = a == 1.0 ? e1 : 1.0;  // exp(-a * eta) for a in {0, 1}
        const double scale = in.avail[k] * in.weight[k] * (a - in.ptilde[k]);
        c[k] = scale * (ipw * ea * resid + centering * (e1 * in.mu1[k] - in.mu0[k]));
        dc[k] = scale * (-a * ipw * ea * resid - centering * e1 * in.mu1[k]);
    }
}

void logistic_working(const double* eta, const double* y, const double* prior, std::size_t n, double* mu,
                      double* w, double* z) {
    for (std::size_t k = 0; k < n; ++k) {
        const double x = std::clamp(eta[k], -700.0, 700.0);
        const double m = 1.0 / (1.0 + std::exp(-x));
        const double v = std::max(m * (1.0 - m), 1e-300);
        mu[k] = m;
        w[k] = prior[k] * v;
        z[k] = x + (y[k] - m) / v;
    }
}

void weighted_gram(const double* X, const double* w, std::size_t n, std::size_t p, double* G) {
    for (std::size_t j = 0; j < p; ++j) {
        const double* xj = X + j * n;
        for (std::size_t l = j; l < p; ++l) {
            const double* xl = X + l * n;
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += w[k] * xj[k] * xl[k];
            G[j + l * p] = s;
            G[l + j * p] = s;
        }
    }
}

void weighted_xty(const double* X, const double* w, const double* y, std::size_t n, std::size_t p, double* v) {
    for (std::size_t j = 0; j < p; ++j) {
        const double* xj = X + j * n;
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += w[k] * xj[k] * (y ? y[k] : 1.0);
        v[j] = s;
    }
}

}  // namespace cee::kernels::scalar
