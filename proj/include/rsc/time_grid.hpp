#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace rsc {

enum class GridKind { uniform, dyadic };

inline bool is_power_of_two(long long n) { return n > 0 && (n & (n - 1)) == 0; }

// Partition of [0, T] into N intervals. Dyadic grids carry their level L
// (N = 2^L) and satisfy t[k] = T * k / 2^L exactly.
struct TimeGrid {
    std::vector<double> t;
    double T = 0.0;
    int N = 0;
    GridKind kind = GridKind::uniform;
    int level = -1;  // valid iff kind == dyadic

    double dt(int i) const { return t[static_cast<size_t>(i) + 1] - t[static_cast<size_t>(i)]; }
    double step() const { return T / N; }
    int points() const { return N + 1; }

    bool dyadic() const { return kind == GridKind::dyadic; }

    // Grid with `factor` substeps per interval; dyadic refines to dyadic when
    // factor is a power of two.
    TimeGrid refined(int factor) const {
        if (factor < 1) throw std::invalid_argument("TimeGrid::refined: factor must be >= 1");
        bool dy = dyadic() && is_power_of_two(factor);
        return make(T, N * factor, dy ? GridKind::dyadic : GridKind::uniform);
    }

    static TimeGrid make(double T, int N, GridKind kind) {
        if (T <= 0.0) throw std::invalid_argument("TimeGrid: horizon must be positive");
        if (N < 1) throw std::invalid_argument("TimeGrid: interval count must be >= 1");
        TimeGrid g;
        g.T = T;
        g.N = N;
        g.kind = kind;
        if (kind == GridKind::dyadic) {
            if (!is_power_of_two(N))
                throw std::invalid_argument("TimeGrid: dyadic grid needs a power-of-two interval count, got " +
                                            std::to_string(N));
            g.level = 0;
            while ((1 << g.level) != N) ++g.level;
        }
        g.t.resize(static_cast<size_t>(N) + 1);
        for (int k = 0; k <= N; ++k) g.t[static_cast<size_t>(k)] = T * (static_cast<double>(k) / N);
        g.t[static_cast<size_t>(N)] = T;
        return g;
    }
};

inline TimeGrid make_grid(double T, int N, GridKind kind = GridKind::uniform) {
    return TimeGrid::make(T, N, kind);
}

using GridPtr = std::shared_ptr<const TimeGrid>;

inline GridPtr make_grid_ptr(double T, int N, GridKind kind = GridKind::uniform) {
    return std::make_shared<const TimeGrid>(TimeGrid::make(T, N, kind));
}

inline GridPtr grid_ptr(TimeGrid g) { return std::make_shared<const TimeGrid>(std::move(g)); }

}  // namespace rsc
