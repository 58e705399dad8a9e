#pragma once

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "rsc/rng.hpp"

namespace rsc {

namespace detail {

// autocovariance of unit-step fractional Gaussian noise
inline double fgn_autocov(int k, double H) {
    double a = std::abs(static_cast<double>(k));
    return 0.5 * (std::pow(a + 1.0, 2.0 * H) - 2.0 * std::pow(a, 2.0 * H) +
                  std::pow(std::abs(a - 1.0), 2.0 * H));
}

// FFTW plan creation is not thread-safe; execution of distinct buffers is.
inline std::mutex& fftw_plan_mutex() {
    static std::mutex mu;
    return mu;
}

inline void fft_inplace(std::vector<std::complex<double>>& z) {
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> g(fftw_plan_mutex());
        plan = fftw_plan_dft_1d(static_cast<int>(z.size()), reinterpret_cast<fftw_complex*>(z.data()),
                                reinterpret_cast<fftw_complex*>(z.data()), FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> g(fftw_plan_mutex());
        fftw_destroy_plan(plan);
    }
}

}  // namespace detail

// One trajectory of fractional Gaussian noise with n unit-step increments,
// exact in law. Circulant embedding (Davies-Harte) of size 2n; falls back to
// Cholesky for small n if the embedding fails to be nonnegative-definite.
inline std::vector<double> sample_fgn(int n, double H, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("sample_fgn: n must be >= 1");
    if (n == 1) return {rng.gaussian()};

    const int M = 2 * n;
    std::vector<std::complex<double>> row(static_cast<size_t>(M));
    for (int j = 0; j <= n; ++j) row[static_cast<size_t>(j)] = detail::fgn_autocov(j, H);
    for (int j = n + 1; j < M; ++j) row[static_cast<size_t>(j)] = row[static_cast<size_t>(M - j)];
    detail::fft_inplace(row);

    double min_ev = 0.0;
    for (auto& z : row) min_ev = std::min(min_ev, z.real());
    if (min_ev < -1e-8) {
        // embedding not usable; exact O(n^3) fallback
        if (n > 2048) throw std::runtime_error("sample_fgn: circulant embedding failed at large n");
        std::vector<double> cov(static_cast<size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) cov[static_cast<size_t>(i) * n + j] = detail::fgn_autocov(i - j, H);
        std::vector<double> L(static_cast<size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j <= i; ++j) {
                double s = cov[static_cast<size_t>(i) * n + j];
                for (int k = 0; k < j; ++k)
                    s -= L[static_cast<size_t>(i) * n + k] * L[static_cast<size_t>(j) * n + k];
                if (i == j)
                    L[static_cast<size_t>(i) * n + j] = std::sqrt(std::max(s, 0.0));
                else
                    L[static_cast<size_t>(i) * n + j] = s / L[static_cast<size_t>(j) * n + j];
            }
        }
        std::vector<double> g(static_cast<size_t>(n));
        for (double& x : g) x = rng.gaussian();
        std::vector<double> out(static_cast<size_t>(n), 0.0);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k <= i; ++k) out[static_cast<size_t>(i)] += L[static_cast<size_t>(i) * n + k] * g[static_cast<size_t>(k)];
        return out;
    }

    std::vector<std::complex<double>> w(static_cast<size_t>(M));
    w[0] = std::sqrt(std::max(row[0].real(), 0.0)) * rng.gaussian();
    w[static_cast<size_t>(n)] = std::sqrt(std::max(row[static_cast<size_t>(n)].real(), 0.0)) * rng.gaussian();
    for (int j = 1; j < n; ++j) {
        double lam = std::max(row[static_cast<size_t>(j)].real(), 0.0);
        double a = rng.gaussian(), b = rng.gaussian();
        std::complex<double> v(a, b);
        w[static_cast<size_t>(j)] = std::sqrt(lam / 2.0) * v;
        w[static_cast<size_t>(M - j)] = std::conj(w[static_cast<size_t>(j)]);
    }
    detail::fft_inplace(w);

    std::vector<double> out(static_cast<size_t>(n));
    double scale = 1.0 / std::sqrt(static_cast<double>(M));
    for (int j = 0; j < n; ++j) out[static_cast<size_t>(j)] = w[static_cast<size_t>(j)].real() * scale;
    return out;
}

// fBm path values on an (n+1)-point grid with step dt: cumulative sums of fGn
// scaled by dt^H, starting at zero.
inline std::vector<double> sample_fbm_path(int n, double H, double dt, RngStream& rng) {
    std::vector<double> inc = sample_fgn(n, H, rng);
    std::vector<double> path(static_cast<size_t>(n) + 1, 0.0);
    double scale = std::pow(dt, H);
    for (int i = 0; i < n; ++i) path[static_cast<size_t>(i) + 1] = path[static_cast<size_t>(i)] + scale * inc[static_cast<size_t>(i)];
    return path;
}

}  // namespace rsc
