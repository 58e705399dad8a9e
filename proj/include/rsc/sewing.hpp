#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/branched.hpp"
#include "rsc/controlled.hpp"
#include "rsc/parallel.hpp"
#include "rsc/regression.hpp"
#include "rsc/rough_path.hpp"

namespace rsc {

// Two-parameter germ A_{s,t} over an ensemble, A_{s,s} = 0, A_{s,t} measurable
// at t. `eval` addresses stored outer samples; `branch_eval`, when present,
// evaluates the same functional on a branched future (outer k, inner j,
// branched at s0) and enables the conditional coherence diagnostics.
struct Germ {
    int width = 1;
    int samples = 1;
    std::function<void(int k, int i, int j, double* out)> eval;
    std::function<void(int k, int jinner, int s0, int i, int j, double* out)> branch_eval;
};

// germ from a one-parameter path ensemble: A = delta Y (sews back exactly)
inline Germ increment_germ(const std::vector<double>& paths, int M, int points, int width) {
    Germ g;
    g.width = width;
    g.samples = M;
    const double* data = paths.data();
    g.eval = [data, points, width](int k, int i, int j, double* out) {
        const double* yi = data + (static_cast<size_t>(k) * points + i) * width;
        const double* yj = data + (static_cast<size_t>(k) * points + j) * width;
        for (int c = 0; c < width; ++c) out[c] = yj[c] - yi[c];
    };
    return g;
}

struct SewReport {
    int width = 1;
    int levels = 0;        // finest computed level
    int stride = 1;        // grid steps per finest-level cell
    int boundary_points = 0;
    std::vector<double> sewn;        // M * boundary_points * width, finest level
    std::vector<double> level_mesh;  // mesh size per level transition
    std::vector<double> level_diff;  // || A^{P_{k+1}} - A^{P_k} ||_m, max over t
    SlopeFit cauchy_rate;            // log diff vs log mesh (positive = converging)

    // coherence constants of the sewing hypotheses, fitted on dyadic triples:
    // ||E_s dA_{s,u,t}||_n ~ Gamma_1 (t-s)^{1+eps1},
    // || ||dA_{s,u,t}|F_s||_m ||_n ~ Gamma_2 (t-s)^{1/2+eps2}
    double gamma1 = std::numeric_limits<double>::quiet_NaN();
    double eps1 = std::numeric_limits<double>::quiet_NaN();
    double r2_1 = std::numeric_limits<double>::quiet_NaN();
    double gamma2 = std::numeric_limits<double>::quiet_NaN();
    double eps2 = std::numeric_limits<double>::quiet_NaN();
    double r2_2 = std::numeric_limits<double>::quiet_NaN();

    std::span<const double> value(int k, int b) const {
        return {sewn.data() + (static_cast<size_t>(k) * boundary_points + b) * width,
                static_cast<size_t>(width)};
    }
};

// Dyadic stochastic sewing: Riemann sums of the germ along dyadic partitions,
// the sewn path being the finest computed level. The Cauchy table quantifies
// the distance to the (not finitely computable) limit; the fitted coherence
// exponents are reported for comparison against the sewing hypotheses.
inline SewReport sew(const Germ& germ, const TimeGrid& grid, int m, int k_max = -1,
                     const BranchedEnsemble* be = nullptr, int workers = 1) {
    if (!grid.dyadic()) throw std::invalid_argument("sew: dyadic grid required");
    if (k_max < 0) k_max = grid.level;
    if (k_max > grid.level) throw std::invalid_argument("sew: more levels than the grid carries");
    int M = germ.samples;
    int w = germ.width;

    // spot-check the zero-diagonal contract
    {
        std::vector<double> buf(static_cast<size_t>(w));
        for (int i : {0, grid.N / 2, grid.N}) {
            germ.eval(0, i, i, buf.data());
            if (frobenius(buf) != 0.0)
                throw std::invalid_argument("sew: germ violates A_{s,s} = 0");
        }
    }

    SewReport rep;
    rep.width = w;
    rep.levels = k_max;
    rep.stride = grid.N >> k_max;
    rep.boundary_points = (1 << k_max) + 1;

    // per-sample Riemann sums at every level; level-k values kept at level-k
    // boundaries for the Cauchy table
    std::vector<std::vector<double>> sums(static_cast<size_t>(k_max) + 1);
    for (int k = 0; k <= k_max; ++k)
        sums[(size_t)k].assign(static_cast<size_t>(M) * ((1 << k) + 1) * w, 0.0);

    parallel_for(M, workers, [&](std::int64_t kk) {
        std::vector<double> cell(static_cast<size_t>(w));
        for (int lev = 0; lev <= k_max; ++lev) {
            int cells = 1 << lev;
            int stride = grid.N / cells;
            double* path = sums[(size_t)lev].data() + static_cast<size_t>(kk) * (cells + 1) * w;
            for (int c = 0; c < cells; ++c) {
                germ.eval(static_cast<int>(kk), c * stride, (c + 1) * stride, cell.data());
                for (int q = 0; q < w; ++q)
                    path[static_cast<size_t>(c + 1) * w + q] = path[static_cast<size_t>(c) * w + q] + cell[(size_t)q];
            }
        }
    });

    // Cauchy table: || A^{P_{k+1}}_t - A^{P_k}_t ||_m, max over level-k boundaries
    for (int lev = 0; lev < k_max; ++lev) {
        int cells = 1 << lev;
        double worst = 0.0;
        for (int b = 1; b <= cells; ++b) {
            double acc = 0.0;
            for (int k = 0; k < M; ++k) {
                const double* a =
                    sums[(size_t)lev].data() + (static_cast<size_t>(k) * (cells + 1) + b) * w;
                const double* bfine = sums[(size_t)lev + 1].data() +
                                      (static_cast<size_t>(k) * (2 * cells + 1) + 2 * b) * w;
                double diff = 0.0;
                for (int q = 0; q < w; ++q) {
                    double dd = bfine[q] - a[q];
                    diff += dd * dd;
                }
                acc += std::pow(std::sqrt(diff), m);
            }
            worst = std::max(worst, std::pow(acc / M, 1.0 / m));
        }
        rep.level_mesh.push_back(grid.T / (1 << lev));
        rep.level_diff.push_back(worst);
    }
    rep.sewn = std::move(sums[(size_t)k_max]);
    if (rep.level_diff.size() >= 2) {
        bool all_zero = true;
        for (double d : rep.level_diff) all_zero &= d == 0.0;
        if (!all_zero) {
            std::vector<double> lx, ly;
            for (size_t i = 0; i < rep.level_diff.size(); ++i)
                if (rep.level_diff[i] > 0) {
                    lx.push_back(std::log(rep.level_mesh[i]));
                    ly.push_back(std::log(rep.level_diff[i]));
                }
            if (lx.size() >= 2) rep.cauchy_rate = fit_line(lx, ly);
        } else {
            rep.cauchy_rate.slope = std::numeric_limits<double>::infinity();
            rep.cauchy_rate.scales = static_cast<int>(rep.level_diff.size());
        }
    }

    // conditional coherence regressions on dyadic midpoint triples
    if (be != nullptr && germ.branch_eval) {
        double n = m;  // plain outer moment at the same order
        std::vector<double> l1x, l1y, l2x, l2y;
        auto branch = germ.branch_eval;
        for (int s : be->branch_points()) {
            for (int span = 2 * rep.stride; s + span <= grid.N; span *= 2) {
                int mid = s + span / 2;
                int t = s + span;
                // dA_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t} on the branch
                auto eval_da = [branch, w, s, mid, t](int k, int jn, double* out) {
                    std::vector<double> buf(static_cast<size_t>(w));
                    branch(k, jn, s, s, t, out);
                    branch(k, jn, s, s, mid, buf.data());
                    for (int q = 0; q < w; ++q) out[q] -= buf[(size_t)q];
                    branch(k, jn, s, mid, t, buf.data());
                    for (int q = 0; q < w; ++q) out[q] -= buf[(size_t)q];
                };
                std::vector<double> val(static_cast<size_t>(w)),
                    mean(static_cast<size_t>(w));
                std::vector<double> prof_mean(static_cast<size_t>(be->outer_count()));
                std::vector<double> prof_m(static_cast<size_t>(be->outer_count()));
                for (int k = 0; k < be->outer_count(); ++k) {
                    std::fill(mean.begin(), mean.end(), 0.0);
                    double acc_m = 0.0;
                    for (int jn = 0; jn < be->inner_count(); ++jn) {
                        eval_da(k, jn, val.data());
                        for (int q = 0; q < w; ++q) mean[(size_t)q] += val[(size_t)q];
                        acc_m += std::pow(frobenius(val), m);
                    }
                    for (int q = 0; q < w; ++q) mean[(size_t)q] /= be->inner_count();
                    prof_mean[(size_t)k] = frobenius(mean);
                    prof_m[(size_t)k] = std::pow(acc_m / be->inner_count(), 1.0 / m);
                }
                double dt = grid.t[(size_t)t] - grid.t[(size_t)s];
                double e1 = outer_moment(prof_mean, n);
                double e2 = outer_moment(prof_m, n);
                if (e1 > 1e-300) {
                    l1x.push_back(std::log(dt));
                    l1y.push_back(std::log(e1));
                }
                if (e2 > 1e-300) {
                    l2x.push_back(std::log(dt));
                    l2y.push_back(std::log(e2));
                }
            }
        }
        if (l1x.size() >= 3) {
            auto f1 = fit_line(l1x, l1y);
            rep.eps1 = f1.slope - 1.0;
            rep.gamma1 = std::exp(f1.intercept);
            rep.r2_1 = f1.r2;
        }
        if (l2x.size() >= 3) {
            auto f2 = fit_line(l2x, l2y);
            rep.eps2 = f2.slope - 0.5;
            rep.gamma2 = std::exp(f2.intercept);
            rep.r2_2 = f2.r2;
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Uniqueness diagnostic (vanishing-remainder pattern)
// ---------------------------------------------------------------------------

struct UniquenessVerdict {
    double eps = 0.0;  // fitted excess exponent; +inf sentinel for R == 0
    bool pass = false;
    bool inconclusive = false;
    bool conditional = false;  // whether E_s was estimated by branching
};

// Checks that || R_{s,t} ||_2 <= (w eta)^{1/2} and || E_s R_{s,t} ||_2 <= w eta
// with w(s,t) = t-s and eta(s,t) = (t-s)^eps for a fitted eps > 0. The fit
// needs at least 3 span scales.
inline UniquenessVerdict sew_uniqueness_check(const Germ& R, const TimeGrid& grid,
                                              const BranchedEnsemble* be = nullptr,
                                              double threshold = 0.05) {
    if (!grid.dyadic()) throw std::invalid_argument("sew_uniqueness_check: dyadic grid required");
    int w = R.width;
    int M = R.samples;
    std::vector<double> spans, plain_norm, mean_norm;
    std::vector<double> val(static_cast<size_t>(w));
    for (int span = std::max(1, grid.N / 32); span <= grid.N; span *= 2) {
        double worst_plain = 0.0, worst_mean = 0.0;
        for (int s = 0; s + span <= grid.N; s += std::max(1, span / 2)) {
            double acc = 0.0;
            std::vector<double> mean(static_cast<size_t>(w), 0.0);
            for (int k = 0; k < M; ++k) {
                R.eval(k, s, s + span, val.data());
                acc += std::pow(frobenius(val), 2.0);
                for (int q = 0; q < w; ++q) mean[(size_t)q] += val[(size_t)q] / M;
            }
            worst_plain = std::max(worst_plain, std::sqrt(acc / M));
            worst_mean = std::max(worst_mean, frobenius(mean));
        }
        if (be != nullptr && R.branch_eval) {
            // replace the mean proxy by a conditional estimate at branch points
            worst_mean = 0.0;
            for (int s : be->branch_points()) {
                if (s + span > grid.N) continue;
                std::vector<double> prof(static_cast<size_t>(be->outer_count()));
                std::vector<double> mn(static_cast<size_t>(w));
                for (int k = 0; k < be->outer_count(); ++k) {
                    std::fill(mn.begin(), mn.end(), 0.0);
                    for (int jn = 0; jn < be->inner_count(); ++jn) {
                        R.branch_eval(k, jn, s, s, s + span, val.data());
                        for (int q = 0; q < w; ++q) mn[(size_t)q] += val[(size_t)q];
                    }
                    for (int q = 0; q < w; ++q) mn[(size_t)q] /= be->inner_count();
                    prof[(size_t)k] = frobenius(mn);
                }
                worst_mean = std::max(worst_mean, outer_moment(prof, 2.0));
            }
        }
        spans.push_back(grid.T * span / grid.N);
        plain_norm.push_back(worst_plain);
        mean_norm.push_back(worst_mean);
    }
    if (spans.size() < 3)
        throw std::invalid_argument("sew_uniqueness_check: need at least 3 span scales");

    UniquenessVerdict v;
    v.conditional = be != nullptr && R.branch_eval != nullptr;
    bool all_zero = true;
    for (size_t i = 0; i < spans.size(); ++i)
        all_zero &= plain_norm[i] <= 1e-300 && mean_norm[i] <= 1e-300;
    if (all_zero) {
        v.eps = std::numeric_limits<double>::infinity();
        v.pass = true;
        return v;
    }
    double eps_a = std::numeric_limits<double>::infinity();
    double eps_b = std::numeric_limits<double>::infinity();
    {
        std::vector<double> lx, ly;
        for (size_t i = 0; i < spans.size(); ++i)
            if (plain_norm[i] > 1e-300) {
                lx.push_back(std::log(spans[i]));
                ly.push_back(std::log(plain_norm[i]));
            }
        if (lx.size() >= 3) eps_a = 2.0 * fit_line(lx, ly).slope - 1.0;
    }
    {
        std::vector<double> lx, ly;
        for (size_t i = 0; i < spans.size(); ++i)
            if (mean_norm[i] > 1e-300) {
                lx.push_back(std::log(spans[i]));
                ly.push_back(std::log(mean_norm[i]));
            }
        if (lx.size() >= 3) eps_b = fit_line(lx, ly).slope - 1.0;
    }
    v.eps = std::min(eps_a, eps_b);
    v.pass = v.eps > threshold;
    v.inconclusive = std::abs(v.eps) <= threshold;
    return v;
}

// ---------------------------------------------------------------------------
// Rough stochastic integrals via sewing
// ---------------------------------------------------------------------------

struct RsiResult {
    ControlledPath integral;  // ( int Z dX, Z ) on the finest sewn grid
    SewReport report;
    double hzm_slope = std::numeric_limits<double>::quiet_NaN();     // vs alpha + (alpha ^ beta)
    double hcondz_slope = std::numeric_limits<double>::quiet_NaN();  // vs alpha+(alpha^beta)+beta'
};

namespace detail {

inline int integrand_rows(const ControlledPath& cp, int d) {
    int w = cp.width();
    if (w % d != 0)
        throw std::invalid_argument("rough integral: Z must be L(V, W)-valued for the driver");
    return w / d;
}

// forward germ A_{s,t} = Z_s dX_{s,t} + Z'_s XX_{s,t}
inline void forward_germ_value(std::span<const double> z, std::span<const double> zp,
                               std::span<const double> dx, std::span<const double> xx, int p, int d,
                               double* out) {
    for (int wq = 0; wq < p; ++wq) {
        double s = 0.0;
        for (int v = 0; v < d; ++v) s += z[static_cast<size_t>(wq) * d + v] * dx[(size_t)v];
        for (int v = 0; v < d; ++v)
            for (int a = 0; a < d; ++a)
                s += zp[(static_cast<size_t>(wq) * d + v) * d + a] * xx[static_cast<size_t>(a) * d + v];
        out[wq] = s;
    }
}

// backward germ Abar_{s,t} = Z_t dX_{s,t} + Z'_t (XX_{s,t} - dX (x) dX)
inline void backward_germ_value(std::span<const double> z, std::span<const double> zp,
                                std::span<const double> dx, std::span<const double> xx, int p,
                                int d, double* out) {
    for (int wq = 0; wq < p; ++wq) {
        double s = 0.0;
        for (int v = 0; v < d; ++v) s += z[static_cast<size_t>(wq) * d + v] * dx[(size_t)v];
        for (int v = 0; v < d; ++v)
            for (int a = 0; a < d; ++a)
                s += zp[(static_cast<size_t>(wq) * d + v) * d + a] *
                     (xx[static_cast<size_t>(a) * d + v] - dx[(size_t)a] * dx[(size_t)v]);
        out[wq] = s;
    }
}

inline const RoughPath& driver_sample(const RoughPath* det, const RandomRoughPath* rnd, int k) {
    return det ? *det : rnd->sample[static_cast<size_t>(k)];
}

}  // namespace detail

// Forward rough stochastic integral of a controlled integrand against a
// deterministic rough path: the sewn limit of Z_s dX + Z'_s XX. The output
// pair ( int Z dX, Z ) is again a controlled path. Exponent hypotheses
// alpha + beta > 1/2 and alpha + (alpha ^ beta) + beta' > 1 are the caller's
// declaration; violations are reported, not fatal.
inline RsiResult rsi_forward(const ControlledPath& cp, const RoughPath& rp, int m, int k_max = -1,
                             const BranchedEnsemble* be = nullptr, int workers = 1) {
    if (cp.d != rp.dim) throw std::invalid_argument("rsi_forward: driver dimension mismatch");
    int d = cp.d;
    int p = detail::integrand_rows(cp, d);
    const ControlledPath* pcp = &cp;
    const RoughPath* prp = &rp;

    Germ g;
    g.width = p;
    g.samples = cp.M;
    g.eval = [pcp, prp, p, d](int k, int i, int j, double* out) {
        if (i == j) {
            std::fill(out, out + p, 0.0);
            return;
        }
        std::vector<double> dx(static_cast<size_t>(d)), xx(static_cast<size_t>(d) * d);
        prp->delta_x(i, j, dx);
        prp->xx_eval(i, j, xx);
        detail::forward_germ_value(pcp->z(k, i), pcp->zp(k, i), dx, xx, p, d, out);
    };
    if (cp.rule && be != nullptr) {
        auto rule = cp.rule;
        const BranchedEnsemble* pbe = be;
        g.branch_eval = [rule, prp, pbe, p, d](int k, int jn, int s0, int i, int j, double* out) {
            if (i == j) {
                std::fill(out, out + p, 0.0);
                return;
            }
            std::vector<double> path(static_cast<size_t>(j + 1) * pbe->dim());
            pbe->future_path(k, jn, s0, j, path);
            std::vector<double> z(static_cast<size_t>(p) * d), zp(static_cast<size_t>(p) * d * d);
            rule(path, i, z.data(), zp.data());
            std::vector<double> dx(static_cast<size_t>(d)), xx(static_cast<size_t>(d) * d);
            prp->delta_x(i, j, dx);
            prp->xx_eval(i, j, xx);
            detail::forward_germ_value(z, zp, dx, xx, p, d, out);
        };
    }

    RsiResult res;
    res.report = sew(g, *cp.grid, m, k_max, be, workers);

    // package ( int Z dX, Z ) on the sewn grid
    int stride = res.report.stride;
    int bp = res.report.boundary_points;
    GridPtr out_grid =
        stride == 1 ? cp.grid : make_grid_ptr(cp.grid->T, bp - 1, GridKind::dyadic);
    ControlledPath& out = res.integral;
    out.grid = out_grid;
    out.zshape = Shape::vec(p);
    out.d = d;
    out.M = cp.M;
    out.beta = rp.alpha;
    out.beta_prime = std::min(rp.alpha, cp.beta);
    out.Z = res.report.sewn;
    out.Zp.resize(static_cast<size_t>(cp.M) * bp * p * d);
    for (int k = 0; k < cp.M; ++k)
        for (int b = 0; b < bp; ++b) {
            auto src = cp.z(k, b * stride);
            std::copy(src.begin(), src.end(),
                      out.Zp.begin() + (static_cast<size_t>(k) * bp + b) * p * d);
        }

    // local-error exponents: || d(int) - Z_s dX ||_m vs alpha + (alpha ^ beta)
    {
        std::vector<double> lx, ly;
        std::vector<double> dx(static_cast<size_t>(d));
        for (int span = 2; span <= bp - 1; span *= 2) {
            double worst = 0.0;
            for (int s = 0; s + span <= bp - 1; s += span) {
                double acc = 0.0;
                for (int k = 0; k < cp.M; ++k) {
                    rp.delta_x(s * stride, (s + span) * stride, dx);
                    auto zi = cp.z(k, s * stride);
                    auto a0 = res.report.value(k, s);
                    auto a1 = res.report.value(k, s + span);
                    double diff = 0.0;
                    for (int wq = 0; wq < p; ++wq) {
                        double e = a1[(size_t)wq] - a0[(size_t)wq];
                        for (int v = 0; v < d; ++v)
                            e -= zi[static_cast<size_t>(wq) * d + v] * dx[(size_t)v];
                        diff += e * e;
                    }
                    acc += std::pow(std::sqrt(diff), m);
                }
                worst = std::max(worst, std::pow(acc / cp.M, 1.0 / m));
            }
            if (worst > 1e-300) {
                lx.push_back(std::log(cp.grid->T * span / (bp - 1)));
                ly.push_back(std::log(worst));
            }
        }
        if (lx.size() >= 3) res.hzm_slope = fit_line(lx, ly).slope;
    }
    // conditional exponent || E_s ( d(int) - Z_s dX - Z'_s XX ) || via branch sums
    if (g.branch_eval && be != nullptr) {
        std::vector<double> lx, ly;
        auto branch = g.branch_eval;
        for (int s : be->branch_points()) {
            if (s % stride != 0) continue;
            for (int span = 2 * stride; s + span <= cp.grid->N; span *= 2) {
                int t = s + span;
                std::vector<double> mn(static_cast<size_t>(p)), val(static_cast<size_t>(p)),
                    germ0(static_cast<size_t>(p));
                std::vector<double> prof(static_cast<size_t>(be->outer_count()));
                for (int k = 0; k < be->outer_count(); ++k) {
                    std::fill(mn.begin(), mn.end(), 0.0);
                    for (int jn = 0; jn < be->inner_count(); ++jn) {
                        // finest-level Riemann sum of the germ over [s, t] on the branch
                        std::fill(val.begin(), val.end(), 0.0);
                        for (int c = s; c < t; c += stride) {
                            branch(k, jn, s, c, c + stride, germ0.data());
                            for (int q = 0; q < p; ++q) val[(size_t)q] += germ0[(size_t)q];
                        }
                        branch(k, jn, s, s, t, germ0.data());
                        for (int q = 0; q < p; ++q) mn[(size_t)q] += val[(size_t)q] - germ0[(size_t)q];
                    }
                    for (int q = 0; q < p; ++q) mn[(size_t)q] /= be->inner_count();
                    prof[(size_t)k] = frobenius(mn);
                }
                double est = outer_moment(prof, m);
                if (est > 1e-300) {
                    double dt = cp.grid->t[(size_t)t] - cp.grid->t[(size_t)s];
                    lx.push_back(std::log(dt));
                    ly.push_back(std::log(est));
                }
            }
        }
        if (lx.size() >= 3) res.hcondz_slope = fit_line(lx, ly).slope;
    }
    return res;
}

// Backward rough stochastic integral with a (possibly random, e.g. stopped)
// integrator: the sewn limit of Z_t dX_{s,t} + Z'_t (XX - dX (x) dX).
inline RsiResult rsi_backward(const ControlledPath& cp, const RoughPath* det,
                              const RandomRoughPath* rnd, int m, int k_max = -1,
                              const BranchedEnsemble* be = nullptr, int workers = 1) {
    if (det == nullptr && rnd == nullptr)
        throw std::invalid_argument("rsi_backward: an integrator is required");
    int ddim = det ? det->dim : rnd->dim;
    if (cp.d != ddim) throw std::invalid_argument("rsi_backward: driver dimension mismatch");
    if (rnd && rnd->M() != cp.M)
        throw std::invalid_argument("rsi_backward: random integrator needs a matching ensemble");
    int d = cp.d;
    int p = detail::integrand_rows(cp, d);
    const ControlledPath* pcp = &cp;

    Germ g;
    g.width = p;
    g.samples = cp.M;
    g.eval = [pcp, det, rnd, p, d](int k, int i, int j, double* out) {
        if (i == j) {
            std::fill(out, out + p, 0.0);
            return;
        }
        const RoughPath& rp = detail::driver_sample(det, rnd, k);
        std::vector<double> dx(static_cast<size_t>(d)), xx(static_cast<size_t>(d) * d);
        rp.delta_x(i, j, dx);
        rp.xx_eval(i, j, xx);
        detail::backward_germ_value(pcp->z(k, j), pcp->zp(k, j), dx, xx, p, d, out);
    };

    RsiResult res;
    res.report = sew(g, *cp.grid, m, k_max, be, workers);
    int stride = res.report.stride;
    int bp = res.report.boundary_points;
    GridPtr out_grid =
        stride == 1 ? cp.grid : make_grid_ptr(cp.grid->T, bp - 1, GridKind::dyadic);
    ControlledPath& out = res.integral;
    out.grid = out_grid;
    out.zshape = Shape::vec(p);
    out.d = d;
    out.M = cp.M;
    out.beta = det ? det->alpha : rnd->alpha;
    out.beta_prime = std::min(out.beta, cp.beta);
    out.Z = res.report.sewn;
    out.Zp.resize(static_cast<size_t>(cp.M) * bp * p * d);
    for (int k = 0; k < cp.M; ++k)
        for (int b = 0; b < bp; ++b) {
            auto src = cp.z(k, b * stride);
            std::copy(src.begin(), src.end(),
                      out.Zp.begin() + (static_cast<size_t>(k) * bp + b) * p * d);
        }
    return res;
}

// ---------------------------------------------------------------------------
// Dyadic defect decomposition (algebraic identity behind the Davie iteration)
// ---------------------------------------------------------------------------

// For any two-parameter field J and depth j:
//   J_{s,t} - sum_{[u,v] in P_j} J_{u,v} = sum_{k<j} sum_{[u,v] in P_k} dJ_{u,(u+v)/2,v}.
// Returns the max residual between the two sides over the ensemble; zero up
// to rounding for arbitrary fields.
inline double dyadic_defect_decomposition(const Germ& J, int s, int t, int depth) {
    if ((t - s) % (1 << depth) != 0)
        throw std::invalid_argument("dyadic_defect_decomposition: span must split into 2^depth cells");
    if (t <= s) throw std::invalid_argument("dyadic_defect_decomposition: need s < t");
    int w = J.width;
    std::vector<double> lhs(static_cast<size_t>(w)), buf(static_cast<size_t>(w)),
        rhs(static_cast<size_t>(w));
    double worst = 0.0;
    for (int k = 0; k < J.samples; ++k) {
        J.eval(k, s, t, lhs.data());
        int cells = 1 << depth;
        int stride = (t - s) / cells;
        for (int c = 0; c < cells; ++c) {
            J.eval(k, s + c * stride, s + (c + 1) * stride, buf.data());
            for (int q = 0; q < w; ++q) lhs[(size_t)q] -= buf[(size_t)q];
        }
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (int lev = 0; lev < depth; ++lev) {
            int cl = 1 << lev;
            int st = (t - s) / cl;
            for (int c = 0; c < cl; ++c) {
                int u = s + c * st, v = s + (c + 1) * st, mid = u + st / 2;
                J.eval(k, u, v, buf.data());
                for (int q = 0; q < w; ++q) rhs[(size_t)q] += buf[(size_t)q];
                J.eval(k, u, mid, buf.data());
                for (int q = 0; q < w; ++q) rhs[(size_t)q] -= buf[(size_t)q];
                J.eval(k, mid, v, buf.data());
                for (int q = 0; q < w; ++q) rhs[(size_t)q] -= buf[(size_t)q];
            }
        }
        double diff = 0.0;
        for (int q = 0; q < w; ++q) {
            double dd = lhs[(size_t)q] - rhs[(size_t)q];
            diff += dd * dd;
        }
        worst = std::max(worst, std::sqrt(diff));
    }
    return worst;
}

}  // namespace rsc
