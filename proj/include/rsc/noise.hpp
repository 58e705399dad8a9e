#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/parallel.hpp"
#include "rsc/rng.hpp"
#include "rsc/time_grid.hpp"

namespace rsc {

// Ensemble of Brownian paths on a grid, B_0 = 0. Sample k is drawn from the
// stream (seed, kStreamBrownian, k), so ensembles with the same seed share
// their leading samples regardless of M.
struct BrownianEnsemble {
    GridPtr grid;
    int dim = 1;
    int M = 0;
    std::uint64_t seed = 0;
    std::vector<double> v;  // M * (N+1) * dim path values

    static BrownianEnsemble generate(GridPtr grid, int dim, int M, std::uint64_t seed,
                                     int workers = 1) {
        if (dim < 1) throw std::invalid_argument("BrownianEnsemble: dim must be >= 1");
        BrownianEnsemble e;
        e.grid = grid;
        e.dim = dim;
        e.M = M;
        e.seed = seed;
        int N = grid->N;
        e.v.assign(static_cast<size_t>(M) * (N + 1) * dim, 0.0);
        parallel_for(M, workers, [&](std::int64_t k) {
            RngStream rng(seed, {kStreamBrownian, static_cast<std::uint64_t>(k)});
            double* p = e.v.data() + static_cast<size_t>(k) * (N + 1) * dim;
            for (int i = 0; i < N; ++i) {
                double sq = std::sqrt(grid->dt(i));
                for (int a = 0; a < dim; ++a)
                    p[static_cast<size_t>(i + 1) * dim + a] =
                        p[static_cast<size_t>(i) * dim + a] + sq * rng.gaussian();
            }
        });
        return e;
    }

    std::span<const double> path(int k) const {
        size_t len = static_cast<size_t>(grid->points()) * dim;
        return {v.data() + static_cast<size_t>(k) * len, len};
    }
    std::span<const double> at(int k, int i) const {
        size_t len = static_cast<size_t>(grid->points()) * dim;
        return {v.data() + static_cast<size_t>(k) * len + static_cast<size_t>(i) * dim,
                static_cast<size_t>(dim)};
    }
    void increment(int k, int i, int j, std::span<double> out) const {
        auto a = at(k, i), b = at(k, j);
        for (int q = 0; q < dim; ++q) out[static_cast<size_t>(q)] = b[static_cast<size_t>(q)] - a[static_cast<size_t>(q)];
    }

    // Restriction to a coarser grid sharing every `factor`-th point. Used for
    // common-random-number coupling across a grid ladder: generate on the
    // finest grid, restrict to the coarser ones.
    BrownianEnsemble restrict_to(GridPtr coarse) const {
        int factor = grid->N / coarse->N;
        if (factor * coarse->N != grid->N)
            throw std::invalid_argument("BrownianEnsemble: coarse grid must divide the fine one");
        BrownianEnsemble e;
        e.grid = coarse;
        e.dim = dim;
        e.M = M;
        e.seed = seed;
        int Nc = coarse->N;
        e.v.resize(static_cast<size_t>(M) * (Nc + 1) * dim);
        for (int k = 0; k < M; ++k)
            for (int i = 0; i <= Nc; ++i)
                for (int a = 0; a < dim; ++a)
                    e.v[(static_cast<size_t>(k) * (Nc + 1) + i) * dim + a] =
                        v[(static_cast<size_t>(k) * (grid->N + 1) + static_cast<size_t>(i) * factor) * dim + a];
        return e;
    }
};

}  // namespace rsc
