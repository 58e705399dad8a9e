#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/noise.hpp"
#include "rsc/rng.hpp"
#include "rsc/tensor.hpp"
#include "rsc/time_grid.hpp"

namespace rsc {

// Nested Monte Carlo structure for conditional (m,n)-norms: M_outer driving
// paths ("pasts"), and per past and branch time s, M_inner futures that share
// the past on [0, s] and are resampled beyond s, i.i.d. conditionally on the
// past. Futures are generated lazily over the window actually needed; the
// stream of future (i, j, s) is fixed by those keys alone, so a longer window
// extends the same draw.
//
// With `antithetic` (default) inner futures come in +/- pairs, which makes
// inner means of odd functionals of the future noise exact.
class BranchedEnsemble {
public:
    BranchedEnsemble(GridPtr grid, int dim, int M_outer, int M_inner, std::vector<int> branch_points,
                     std::uint64_t seed, bool antithetic = true, int workers = 1)
        : grid_(std::move(grid)),
          dim_(dim),
          M_outer_(M_outer),
          M_inner_(M_inner),
          branch_(std::move(branch_points)),
          seed_(seed),
          antithetic_(antithetic),
          outer_(BrownianEnsemble::generate(grid_, dim, M_outer, seed, workers)) {
        if (M_inner_ < 1) throw std::invalid_argument("BranchedEnsemble: M_inner must be >= 1");
        if (antithetic_ && M_inner_ % 2 != 0)
            throw std::invalid_argument("BranchedEnsemble: antithetic futures need an even M_inner");
        std::sort(branch_.begin(), branch_.end());
        for (int s : branch_)
            if (s < 0 || s > grid_->N)
                throw std::invalid_argument("BranchedEnsemble: branch point off the grid");
    }

    // Default branch points: every (N / 2^k)-th grid index, at most `count`.
    static std::vector<int> dyadic_branch_points(int N, int count) {
        int stride = N;
        while (stride > 1 && N / stride < count) stride /= 2;
        std::vector<int> out;
        for (int i = 0; i + stride <= N; i += stride) out.push_back(i);
        return out;
    }

    const TimeGrid& grid() const { return *grid_; }
    GridPtr grid_ptr() const { return grid_; }
    int dim() const { return dim_; }
    int outer_count() const { return M_outer_; }
    int inner_count() const { return M_inner_; }
    const std::vector<int>& branch_points() const { return branch_; }
    const BrownianEnsemble& outer() const { return outer_; }

    bool is_branch_point(int s) const {
        return std::binary_search(branch_.begin(), branch_.end(), s);
    }

    // Branch path values on [0, t_end]: the outer past up to s, fresh
    // increments on (s, t_end]. `out` must hold (t_end + 1) * dim values.
    void future_path(int i, int j, int s, int t_end, std::span<double> out) const {
        if (t_end > grid_->N) throw std::invalid_argument("BranchedEnsemble: window beyond horizon");
        auto past = outer_.path(i);
        size_t keep = static_cast<size_t>(std::min(s, t_end) + 1) * dim_;
        std::copy(past.begin(), past.begin() + static_cast<std::ptrdiff_t>(keep), out.begin());
        if (t_end <= s) return;
        double sign = 1.0;
        std::uint64_t jkey = static_cast<std::uint64_t>(j);
        if (antithetic_) {
            sign = (j % 2 == 0) ? 1.0 : -1.0;
            jkey = static_cast<std::uint64_t>(j / 2);
        }
        RngStream rng(seed_, {kStreamFuture, static_cast<std::uint64_t>(i), jkey,
                              static_cast<std::uint64_t>(s)});
        for (int t = s; t < t_end; ++t) {
            double sq = std::sqrt(grid_->dt(t));
            for (int a = 0; a < dim_; ++a)
                out[static_cast<size_t>(t + 1) * dim_ + a] =
                    out[static_cast<size_t>(t) * dim_ + a] + sign * sq * rng.gaussian();
        }
    }

private:
    GridPtr grid_;
    int dim_;
    int M_outer_;
    int M_inner_;
    std::vector<int> branch_;
    std::uint64_t seed_;
    bool antithetic_;
    BrownianEnsemble outer_;
};

// A_{s,t} evaluated on branch (i, j): the functional receives the branch path
// values on [0, t] and must use past i and future (i, j) only.
using BranchFunctional =
    std::function<void(std::span<const double> path, int i, int s, int t, double* out)>;

struct CondNormOptions {
    int width = 1;
};

// Per-past inner conditional m-norms c_i = (mean_j |A|^m)^(1/m). The outer
// n-th moment of these estimates || ||A_{s,t} | F_s||_m ||_n; n = infinity is
// taken as the max over pasts (biased low at finite M_outer).
inline std::vector<double> cond_norm_profile(const BranchedEnsemble& be, const BranchFunctional& A,
                                             int s, int t, double m, int width) {
    if (!be.is_branch_point(s))
        throw std::invalid_argument("cond_norm: s is not a branch point of the ensemble");
    if (t < s || t > be.grid().N) throw std::invalid_argument("cond_norm: need s <= t on the grid");
    std::vector<double> profile(static_cast<size_t>(be.outer_count()));
    std::vector<double> path(static_cast<size_t>(t + 1) * be.dim());
    std::vector<double> val(static_cast<size_t>(width));
    for (int i = 0; i < be.outer_count(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < be.inner_count(); ++j) {
            be.future_path(i, j, s, t, path);
            A(path, i, s, t, val.data());
            acc += std::pow(frobenius(val), m);
        }
        profile[static_cast<size_t>(i)] = std::pow(acc / be.inner_count(), 1.0 / m);
    }
    return profile;
}

inline double outer_moment(std::span<const double> profile, double n) {
    if (std::isinf(n)) {
        double best = 0.0;
        for (double c : profile) best = std::max(best, c);
        return best;
    }
    double acc = 0.0;
    for (double c : profile) acc += std::pow(c, n);
    return std::pow(acc / static_cast<double>(profile.size()), 1.0 / n);
}

// || ||A_{s,t} | F_s||_m ||_n estimate on a branched ensemble
inline double cond_norm(const BranchedEnsemble& be, const BranchFunctional& A, int s, int t,
                        double m, double n, int width = 1) {
    if (!(m >= 1.0) || m > n) throw std::invalid_argument("cond_norm: need 1 <= m <= n");
    if (std::isinf(m)) throw std::invalid_argument("cond_norm: inner exponent must be finite");
    auto profile = cond_norm_profile(be, A, s, t, m, width);
    return outer_moment(profile, n);
}

// E_s A_{s,t} per past, estimated by inner-future averaging; out has
// outer_count * width entries.
inline void cond_mean_profile(const BranchedEnsemble& be, const BranchFunctional& A, int s, int t,
                              int width, std::span<double> out) {
    if (!be.is_branch_point(s))
        throw std::invalid_argument("cond_mean: s is not a branch point of the ensemble");
    std::vector<double> path(static_cast<size_t>(t + 1) * be.dim());
    std::vector<double> val(static_cast<size_t>(width));
    for (int i = 0; i < be.outer_count(); ++i) {
        double* acc = out.data() + static_cast<size_t>(i) * width;
        std::fill(acc, acc + width, 0.0);
        for (int j = 0; j < be.inner_count(); ++j) {
            be.future_path(i, j, s, t, path);
            A(path, i, s, t, val.data());
            for (int q = 0; q < width; ++q) acc[q] += val[static_cast<size_t>(q)];
        }
        for (int q = 0; q < width; ++q) acc[q] /= be.inner_count();
    }
}

// ||E_s A_{s,t}||_n estimate (n over pasts)
inline double cond_mean_norm(const BranchedEnsemble& be, const BranchFunctional& A, int s, int t,
                             double n, int width = 1) {
    std::vector<double> means(static_cast<size_t>(be.outer_count()) * width);
    cond_mean_profile(be, A, s, t, width, means);
    std::vector<double> norms(static_cast<size_t>(be.outer_count()));
    for (int i = 0; i < be.outer_count(); ++i)
        norms[static_cast<size_t>(i)] =
            frobenius({means.data() + static_cast<size_t>(i) * width, static_cast<size_t>(width)});
    return outer_moment(norms, n);
}

}  // namespace rsc
