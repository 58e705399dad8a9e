#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/fbm.hpp"
#include "rsc/parallel.hpp"
#include "rsc/rng.hpp"
#include "rsc/tensor.hpp"
#include "rsc/time_grid.hpp"
#include "rsc/two_param_field.hpp"

namespace rsc {

enum class Flavor { geometric, ito };

inline const char* flavor_name(Flavor f) { return f == Flavor::geometric ? "geometric" : "ito"; }

// One-parameter path sampled on a grid, values of width `dim` per point.
struct SampledPath {
    GridPtr grid;
    int dim = 1;
    std::vector<double> v;  // (N+1) * dim

    std::span<const double> at(int i) const {
        return {v.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }
    std::span<double> at(int i) {
        return {v.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }
};

// Two-step rough path on a grid: path samples X plus the second-level tensor
// field XX over the stored pair set. XX is always reassembled from the finest
// computed cells through Chen's relation, so the stored object satisfies the
// relation up to rounding by construction.
struct RoughPath {
    GridPtr grid;
    int dim = 1;
    std::vector<double> X;  // (N+1) * dim
    TwoParamField XX;       // dim x dim valued
    double alpha = 0.5;
    Flavor flavor = Flavor::geometric;

    std::span<const double> x(int i) const {
        return {X.data() + static_cast<size_t>(i) * dim, static_cast<size_t>(dim)};
    }

    void delta_x(int i, int j, std::span<double> out) const {
        auto a = x(i), b = x(j);
        for (int k = 0; k < dim; ++k) out[static_cast<size_t>(k)] = b[static_cast<size_t>(k)] - a[static_cast<size_t>(k)];
    }

    Tensor delta_x(int i, int j) const {
        Tensor t(Shape::vec(dim));
        delta_x(i, j, t.values());
        return t;
    }

    // XX value at an arbitrary grid pair: stored slot if present, otherwise
    // Chen accumulation from the unit cells (always stored).
    void xx_eval(int i, int j, std::span<double> out) const {
        if (i > j) throw std::invalid_argument("RoughPath: xx_eval requires s <= t");
        if (i == j) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        if (XX.pairs().contains(i, j)) {
            XX.eval(i, j, out);
            return;
        }
        std::fill(out.begin(), out.end(), 0.0);
        std::vector<double> dxa(static_cast<size_t>(dim)), dxb(static_cast<size_t>(dim));
        for (int k = i; k < j; ++k) {
            const double* cell = XX.slot(k, k + 1);
            for (int q = 0; q < dim * dim; ++q) out[static_cast<size_t>(q)] += cell[q];
            delta_x(i, k, dxa);
            delta_x(k, k + 1, dxb);
            outer_add(dxa, dxb, out);
        }
    }

    Tensor xx_at(int i, int j) const {
        Tensor t(Shape::mat(dim, dim));
        xx_eval(i, j, t.values());
        return t;
    }

    TwoParamField delta_field(std::int64_t pair_budget = PairSet::kDefaultBudget) const {
        return delta(grid, X, Shape::vec(dim), pair_budget);
    }
};

// Ensemble of rough path samples on a shared grid. Values at (s, t) of sample
// k are computed from that sample's driving randomness up to t (adapted by
// construction). The ensemble max of per-sample seminorms estimates the
// essential supremum from below; callers should report it with the ensemble
// size rather than as the true ess-sup.
struct RandomRoughPath {
    GridPtr grid;
    int dim = 1;
    double alpha = 0.5;
    Flavor flavor = Flavor::geometric;
    std::vector<RoughPath> sample;

    int M() const { return static_cast<int>(sample.size()); }
};

namespace detail {

// Fill a pair-set field from unit cells by Chen's relation.
inline void chen_complete(const RoughPath& rp, TwoParamField& XX) {
    int N = rp.grid->N;
    int d = rp.dim;
    std::vector<double> dxa(static_cast<size_t>(d)), dxb(static_cast<size_t>(d));
    if (XX.pairs().kind() == PairSet::Kind::dense) {
        for (int i = 0; i < N; ++i) {
            for (int j = i + 2; j <= N; ++j) {
                double* out = XX.slot(i, j);
                const double* prev = XX.slot(i, j - 1);
                const double* cell = XX.slot(j - 1, j);
                for (int q = 0; q < d * d; ++q) out[q] = prev[q] + cell[q];
                rp.delta_x(i, j - 1, dxa);
                rp.delta_x(j - 1, j, dxb);
                outer_add(dxa, dxb, {out, static_cast<size_t>(d * d)});
            }
        }
    } else {
        for (int h = 2; h <= N; h *= 2) {
            int half = h / 2;
            for (int i = 0; i + h <= N; ++i) {
                double* out = XX.slot(i, i + h);
                const double* a = XX.slot(i, i + half);
                const double* b = XX.slot(i + half, i + h);
                for (int q = 0; q < d * d; ++q) out[q] = a[q] + b[q];
                rp.delta_x(i, i + half, dxa);
                rp.delta_x(i + half, i + h, dxb);
                outer_add(dxa, dxb, {out, static_cast<size_t>(d * d)});
            }
        }
    }
}

// Geometric lift of the piecewise-linear interpolation of a finely sampled
// path, coarsened to the output grid. Unit cells on the fine grid carry
// (1/2) dX (x) dX; coarse cells are assembled by Chen within each cell.
inline RoughPath lift_piecewise_linear(const SampledPath& fine, int refine, double alpha,
                                       std::int64_t pair_budget) {
    if (refine < 1) throw std::invalid_argument("lift_smooth: refine must be >= 1");
    if (fine.grid->N % refine != 0)
        throw std::invalid_argument("lift_smooth: fine grid must refine the output grid");
    int Nc = fine.grid->N / refine;
    int d = fine.dim;
    GridPtr out_grid = make_grid_ptr(fine.grid->T, Nc, fine.grid->dyadic() && is_power_of_two(Nc)
                                                           ? GridKind::dyadic
                                                           : GridKind::uniform);
    RoughPath rp;
    rp.grid = out_grid;
    rp.dim = d;
    rp.alpha = alpha;
    rp.flavor = Flavor::geometric;
    rp.X.resize(static_cast<size_t>(Nc + 1) * d);
    for (int i = 0; i <= Nc; ++i)
        for (int k = 0; k < d; ++k)
            rp.X[static_cast<size_t>(i) * d + k] = fine.v[static_cast<size_t>(i) * refine * d + k];
    rp.XX = TwoParamField(out_grid, Shape::mat(d, d), pair_budget);

    std::vector<double> dxa(static_cast<size_t>(d)), dxb(static_cast<size_t>(d));
    for (int c = 0; c < Nc; ++c) {
        double* cell = rp.XX.slot(c, c + 1);
        std::fill(cell, cell + d * d, 0.0);
        int f0 = c * refine;
        for (int f = f0; f < f0 + refine; ++f) {
            for (int k = 0; k < d; ++k)
                dxb[static_cast<size_t>(k)] =
                    fine.v[static_cast<size_t>(f + 1) * d + k] - fine.v[static_cast<size_t>(f) * d + k];
            // (1/2) dX (x) dX for the fine cell
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) cell[a * d + b] += 0.5 * dxb[static_cast<size_t>(a)] * dxb[static_cast<size_t>(b)];
            // cross term (X_f - X_{cell start}) (x) dX
            for (int k = 0; k < d; ++k)
                dxa[static_cast<size_t>(k)] =
                    fine.v[static_cast<size_t>(f) * d + k] - fine.v[static_cast<size_t>(f0) * d + k];
            outer_add(dxa, dxb, {cell, static_cast<size_t>(d * d)});
        }
    }
    chen_complete(rp, rp.XX);
    return rp;
}

}  // namespace detail

// Canonical lift of a (finely sampled) smooth path via iterated integrals of
// its piecewise-linear interpolation; quadrature error lives only in the
// finest cells.
inline RoughPath lift_smooth(const SampledPath& fine, int refine, double alpha = 1.0,
                             std::int64_t pair_budget = PairSet::kDefaultBudget) {
    return detail::lift_piecewise_linear(fine, refine, alpha, pair_budget);
}

enum class Calculus { ito, stratonovich };

// Brownian rough path ensemble. Increments are sampled exactly on a fine grid
// with R substeps per coarse step; the second level over coarse cells is the
// left-point Riemann sum on the fine grid (bias O(step/R) off-diagonal), with
// diagonal entries replaced by their exact values.
inline RandomRoughPath lift_brownian(int dim, GridPtr grid, int M, std::uint64_t seed,
                                     Calculus calculus = Calculus::ito, int R = 64,
                                     double alpha = 0.45,
                                     std::int64_t pair_budget = PairSet::kDefaultBudget,
                                     int workers = 1) {
    if (dim < 1) throw std::invalid_argument("lift_brownian: dim must be >= 1");
    if (R < 1) throw std::invalid_argument("lift_brownian: subgrid factor must be >= 1");
    int N = grid->N;
    RandomRoughPath out;
    out.grid = grid;
    out.dim = dim;
    out.alpha = alpha;
    out.flavor = calculus == Calculus::ito ? Flavor::ito : Flavor::geometric;
    out.sample.resize(static_cast<size_t>(M));

    parallel_for(M, workers, [&](std::int64_t k) {
        RngStream rng(seed, {kStreamBrownian, static_cast<std::uint64_t>(k)});
        RoughPath& rp = out.sample[static_cast<size_t>(k)];
        rp.grid = grid;
        rp.dim = dim;
        rp.alpha = alpha;
        rp.flavor = out.flavor;
        rp.X.assign(static_cast<size_t>(N + 1) * dim, 0.0);
        rp.XX = TwoParamField(grid, Shape::mat(dim, dim), pair_budget);

        std::vector<double> bf(static_cast<size_t>(dim));   // running fine value minus cell start
        std::vector<double> db(static_cast<size_t>(dim));   // fine increment
        for (int i = 0; i < N; ++i) {
            double hf = grid->dt(i) / R;
            double sq = std::sqrt(hf);
            double* cell = rp.XX.slot(i, i + 1);
            std::fill(cell, cell + dim * dim, 0.0);
            std::fill(bf.begin(), bf.end(), 0.0);
            for (int r = 0; r < R; ++r) {
                for (int a = 0; a < dim; ++a) db[static_cast<size_t>(a)] = sq * rng.gaussian();
                outer_add(bf, db, {cell, static_cast<size_t>(dim * dim)});
                for (int a = 0; a < dim; ++a) bf[static_cast<size_t>(a)] += db[static_cast<size_t>(a)];
            }
            double h = grid->dt(i);
            for (int a = 0; a < dim; ++a) {
                rp.X[static_cast<size_t>(i + 1) * dim + a] = rp.X[static_cast<size_t>(i) * dim + a] + bf[static_cast<size_t>(a)];
                // exact diagonal; Stratonovich adds (1/2) h Id
                double ito_diag = 0.5 * (bf[static_cast<size_t>(a)] * bf[static_cast<size_t>(a)] - h);
                cell[a * dim + a] = calculus == Calculus::ito ? ito_diag : ito_diag + 0.5 * h;
            }
        }
        detail::chen_complete(rp, rp.XX);
    });
    return out;
}

// Fractional Brownian rough path ensemble: exact circulant-embedding synthesis
// on a fine grid per coordinate (independent coordinates), then the geometric
// lift of the piecewise-linear interpolation, coarsened. Valid for H > 1/3.
inline RandomRoughPath lift_fbm(double H, int dim, GridPtr grid, int M, std::uint64_t seed,
                                int fine_factor = 8, double alpha = 0.0,
                                std::int64_t pair_budget = PairSet::kDefaultBudget,
                                int workers = 1) {
    if (!(H > 1.0 / 3.0))
        throw std::invalid_argument("lift_fbm: Hurst parameter must exceed 1/3");
    if (H >= 1.0) throw std::invalid_argument("lift_fbm: Hurst parameter must be below 1");
    if (dim < 1) throw std::invalid_argument("lift_fbm: dim must be >= 1");
    if (fine_factor < 1) throw std::invalid_argument("lift_fbm: fine_factor must be >= 1");
    if (alpha <= 0.0) alpha = std::max(0.05, H - 0.05);
    if (alpha >= H) throw std::invalid_argument("lift_fbm: declared alpha must be below H");

    int Nf = grid->N * fine_factor;
    double hf = grid->T / Nf;
    RandomRoughPath out;
    out.grid = grid;
    out.dim = dim;
    out.alpha = alpha;
    out.flavor = Flavor::geometric;
    out.sample.resize(static_cast<size_t>(M));

    GridPtr fine_grid = grid_ptr(grid->refined(fine_factor));
    parallel_for(M, workers, [&](std::int64_t k) {
        SampledPath fine;
        fine.grid = fine_grid;
        fine.dim = dim;
        fine.v.assign(static_cast<size_t>(Nf + 1) * dim, 0.0);
        for (int c = 0; c < dim; ++c) {
            RngStream rng(seed, {kStreamFbm, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(c)});
            std::vector<double> path = sample_fbm_path(Nf, H, hf, rng);
            for (int i = 0; i <= Nf; ++i) fine.v[static_cast<size_t>(i) * dim + c] = path[static_cast<size_t>(i)];
        }
        out.sample[static_cast<size_t>(k)] =
            detail::lift_piecewise_linear(fine, fine_factor, alpha, pair_budget);
        out.sample[static_cast<size_t>(k)].grid = grid;
    });
    return out;
}

// Max Chen defect |XX_{s,t} - XX_{s,u} - XX_{u,t} - dX_{s,u} (x) dX_{u,t}| over
// grid triples: every triple for small dense fields, dyadic midpoint triples
// otherwise.
inline double chen_defect(const RoughPath& rp) {
    int N = rp.grid->N;
    int d = rp.dim;
    int w = d * d;
    std::vector<double> buf(static_cast<size_t>(w)), tmp(static_cast<size_t>(w));
    std::vector<double> dxa(static_cast<size_t>(d)), dxb(static_cast<size_t>(d));
    double best = 0.0;
    auto defect = [&](int i, int u, int j) {
        rp.XX.eval(i, j, buf);
        rp.XX.eval(i, u, tmp);
        for (int q = 0; q < w; ++q) buf[static_cast<size_t>(q)] -= tmp[static_cast<size_t>(q)];
        rp.XX.eval(u, j, tmp);
        for (int q = 0; q < w; ++q) buf[static_cast<size_t>(q)] -= tmp[static_cast<size_t>(q)];
        rp.delta_x(i, u, dxa);
        rp.delta_x(u, j, dxb);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) buf[static_cast<size_t>(a * d + b)] -= dxa[static_cast<size_t>(a)] * dxb[static_cast<size_t>(b)];
        best = std::max(best, frobenius(buf));
    };
    bool dense = rp.XX.pairs().kind() == PairSet::Kind::dense;
    if (dense && N <= 96) {
        for (int i = 0; i < N; ++i)
            for (int u = i + 1; u < N; ++u)
                for (int j = u + 1; j <= N; ++j) defect(i, u, j);
    } else {
        for (int h = 1; 2 * h <= N; h *= 2)
            for (int i = 0; i + 2 * h <= N; ++i) defect(i, i + h, i + 2 * h);
    }
    return best;
}

inline double chen_defect(const RandomRoughPath& rrp) {
    double best = 0.0;
    for (const auto& s : rrp.sample) best = std::max(best, chen_defect(s));
    return best;
}

// Max deviation from the geometric identity Sym(XX) = (1/2) dX (x) dX over
// stored pairs.
inline double symmetry_defect(const RoughPath& rp) {
    int d = rp.dim;
    std::vector<double> dx(static_cast<size_t>(d));
    double best = 0.0;
    std::vector<double> buf(static_cast<size_t>(d) * d);
    rp.XX.pairs().for_each([&](int i, int j, std::int64_t s) {
        const double* xx = rp.XX.raw().data() + static_cast<size_t>(s) * d * d;
        rp.delta_x(i, j, dx);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b)
                buf[static_cast<size_t>(a * d + b)] =
                    0.5 * (xx[a * d + b] + xx[b * d + a]) - 0.5 * dx[static_cast<size_t>(a)] * dx[static_cast<size_t>(b)];
        best = std::max(best, frobenius(buf));
    });
    return best;
}

inline double symmetry_defect(const RandomRoughPath& rrp) {
    double best = 0.0;
    for (const auto& s : rrp.sample) best = std::max(best, symmetry_defect(s));
    return best;
}

// inhomogeneous rough path distance |dX - dXbar|_alpha + |XX - XXbar|_{alpha+alpha'}
inline double rough_distance(const RoughPath& a, const RoughPath& b, double alpha, double alpha_prime) {
    if (a.grid->N != b.grid->N || std::abs(a.grid->T - b.grid->T) > 1e-12 || a.dim != b.dim)
        throw std::invalid_argument("rough_distance: grid or dimension mismatch");
    if (a.XX.pairs().kind() != b.XX.pairs().kind())
        throw std::invalid_argument("rough_distance: pair-set mismatch");
    const auto& t = a.grid->t;
    int d = a.dim;
    double first = 0.0, second = 0.0;
    std::vector<double> buf(static_cast<size_t>(d) * d);
    a.XX.pairs().for_each([&](int i, int j, std::int64_t s) {
        double dt = t[static_cast<size_t>(j)] - t[static_cast<size_t>(i)];
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
            double diff = (a.X[static_cast<size_t>(j) * d + k] - a.X[static_cast<size_t>(i) * d + k]) -
                          (b.X[static_cast<size_t>(j) * d + k] - b.X[static_cast<size_t>(i) * d + k]);
            acc += diff * diff;
        }
        first = std::max(first, std::sqrt(acc) / std::pow(dt, alpha));
        const double* xa = a.XX.raw().data() + static_cast<size_t>(s) * d * d;
        const double* xb = b.XX.raw().data() + static_cast<size_t>(s) * d * d;
        for (int q = 0; q < d * d; ++q) buf[static_cast<size_t>(q)] = xa[q] - xb[q];
        second = std::max(second, frobenius(buf) / std::pow(dt, alpha + alpha_prime));
    });
    return first + second;
}

// Per-sample stopping: X^tau_t = X_{t ^ tau}, XX^tau_{s,t} = XX_{s ^ tau, t ^ tau}.
// Idempotent; never increases the per-sample rough path seminorms.
inline RandomRoughPath stop_rough_path(const RandomRoughPath& rrp, const std::vector<int>& tau_idx) {
    if (tau_idx.size() != rrp.sample.size())
        throw std::invalid_argument("stop_rough_path: one stopping index per sample required");
    int N = rrp.grid->N;
    RandomRoughPath out;
    out.grid = rrp.grid;
    out.dim = rrp.dim;
    out.alpha = rrp.alpha;
    out.flavor = rrp.flavor;
    out.sample.resize(rrp.sample.size());
    int d = rrp.dim;
    for (size_t k = 0; k < rrp.sample.size(); ++k) {
        int tau = tau_idx[k];
        if (tau < 0 || tau > N) throw std::invalid_argument("stop_rough_path: stopping time off the grid");
        const RoughPath& src = rrp.sample[k];
        RoughPath& dst = out.sample[k];
        dst.grid = src.grid;
        dst.dim = d;
        dst.alpha = src.alpha;
        dst.flavor = src.flavor;
        dst.X.resize(src.X.size());
        for (int i = 0; i <= N; ++i) {
            int ic = std::min(i, tau);
            for (int q = 0; q < d; ++q)
                dst.X[static_cast<size_t>(i) * d + q] = src.X[static_cast<size_t>(ic) * d + q];
        }
        dst.XX = TwoParamField(src.grid, Shape::mat(d, d), src.XX.pairs());
        dst.XX.pairs().for_each([&](int i, int j, std::int64_t s) {
            double* outv = dst.XX.raw().data() + static_cast<size_t>(s) * d * d;
            int ic = std::min(i, tau), jc = std::min(j, tau);
            if (ic == jc)
                std::fill(outv, outv + d * d, 0.0);
            else
                src.xx_eval(ic, jc, {outv, static_cast<size_t>(d * d)});
        });
    }
    return out;
}

// Restriction to every `factor`-th grid point; the second level restricts
// exactly (Chen reassembly from unit cells).
inline RoughPath restrict_rough_path(const RoughPath& rp, int factor,
                                     std::int64_t pair_budget = PairSet::kDefaultBudget) {
    int N = rp.grid->N;
    if (factor < 1 || N % factor != 0)
        throw std::invalid_argument("restrict_rough_path: factor must divide N");
    int Nc = N / factor;
    RoughPath out;
    out.grid = make_grid_ptr(rp.grid->T, Nc,
                             rp.grid->dyadic() && is_power_of_two(Nc) ? GridKind::dyadic
                                                                      : GridKind::uniform);
    out.dim = rp.dim;
    out.alpha = rp.alpha;
    out.flavor = rp.flavor;
    int d = rp.dim;
    out.X.resize(static_cast<size_t>(Nc + 1) * d);
    for (int i = 0; i <= Nc; ++i)
        for (int q = 0; q < d; ++q)
            out.X[static_cast<size_t>(i) * d + q] = rp.X[static_cast<size_t>(i) * factor * d + q];
    out.XX = TwoParamField(out.grid, Shape::mat(d, d), pair_budget);
    for (int c = 0; c < Nc; ++c)
        rp.xx_eval(c * factor, (c + 1) * factor, {out.XX.slot(c, c + 1), static_cast<size_t>(d * d)});
    detail::chen_complete(out, out.XX);
    return out;
}

// per-sample |X|_alpha-type seminorm estimate: max over the ensemble (a lower
// bound for the essential supremum, reported together with M)
inline double ensemble_rough_norm(const RandomRoughPath& rrp, double alpha) {
    double best = 0.0;
    for (const auto& s : rrp.sample) {
        double dx = holder_seminorm(s.delta_field(), alpha);
        double xx = holder_seminorm(s.XX, 2 * alpha);
        best = std::max(best, dx + xx);
    }
    return best;
}

}  // namespace rsc
