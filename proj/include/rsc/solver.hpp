#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsc/branched.hpp"
#include "rsc/noise.hpp"
#include "rsc/parallel.hpp"
#include "rsc/regression.hpp"
#include "rsc/rough_path.hpp"
#include "rsc/sewing.hpp"
#include "rsc/vector_fields.hpp"

namespace rsc {

// Coefficients of dY = b dt + sigma dB + (f, f') dX. Drift and diffusion are
// random bounded (or locally Lipschitz) fields; the rough part is a
// controlled vector field with Df. Either part may be absent.
struct RSDECoefficients {
    int p = 1;   // state dimension
    int d1 = 1;  // Brownian dimension
    int d = 1;   // rough-driver dimension
    CoeffField b;
    CoeffField sigma;
    std::optional<ControlledVectorField> fvf;

    bool has_rough() const { return fvf.has_value(); }
};

enum class SolveMethod { davie, picard };

struct Trajectory {
    GridPtr grid;
    int p = 1;
    int M = 0;
    std::vector<double> Y;  // M * (N+1) * p
    std::vector<char> blown_up;
    std::string method;
    std::vector<std::string> warnings;

    std::span<const double> y(int k, int i) const {
        return {Y.data() + (static_cast<size_t>(k) * grid->points() + i) * p, static_cast<size_t>(p)};
    }
    std::span<double> y_mut(int k, int i) {
        return {Y.data() + (static_cast<size_t>(k) * grid->points() + i) * p, static_cast<size_t>(p)};
    }
};

namespace detail {

struct StepWork {
    std::vector<double> bv, sg, fv, gv, dx, xx, db;
    void resize(const RSDECoefficients& c) {
        bv.assign(static_cast<size_t>(c.p), 0.0);
        sg.assign(static_cast<size_t>(c.p) * c.d1, 0.0);
        fv.assign(static_cast<size_t>(c.p) * c.d, 0.0);
        gv.assign(static_cast<size_t>(c.p) * c.d * c.d, 0.0);
        dx.assign(static_cast<size_t>(c.d), 0.0);
        xx.assign(static_cast<size_t>(c.d) * c.d, 0.0);
        db.assign(static_cast<size_t>(c.d1), 0.0);
    }
};

}  // namespace detail

// One explicit Davie step:
//   y_next = y + b h + sigma dB + f dX + (Df f + f') XX.
// The pure-SDE reduction (no rough part) performs exactly y + b h + sigma dB,
// bit-identical to classical Euler-Maruyama with shared noise.
inline void step_davie(std::span<const double> y, const RSDECoefficients& c, int sample, double t,
                       double h, std::span<const double> dB, std::span<const double> dX,
                       std::span<const double> XX, std::span<double> out, detail::StepWork& w) {
    if (h <= 0.0) throw std::invalid_argument("step_davie: step size must be positive");
    std::copy(y.begin(), y.end(), out.begin());
    if (c.b) {
        c.b.eval(sample, t, y, w.bv.data());
        for (int r = 0; r < c.p; ++r) out[(size_t)r] += w.bv[(size_t)r] * h;
    }
    if (c.sigma) {
        c.sigma.eval(sample, t, y, w.sg.data());
        mat_vec_add(w.sg, dB, out);
    }
    if (c.fvf) {
        c.fvf->eval_f(t, y, w.fv);
        mat_vec_add(w.fv, dX, out);
        c.fvf->davie_tensor(t, y, w.gv);
        ten3_mat_add(w.gv, XX, c.p, c.d, out);
    }
}

inline Tensor step_davie(const Tensor& y, const RSDECoefficients& c, double h, const Tensor& dB,
                         const Tensor& dX, const Tensor& XX, int sample = 0, double t = 0.0) {
    detail::StepWork w;
    w.resize(c);
    Tensor out(y.shape());
    step_davie(y.values(), c, sample, t, h, dB.values(), dX.values(), XX.values(), out.values(), w);
    return out;
}

namespace detail {

// Davie march of one sample on [from, to]; returns the first index where the
// state leaves radius `exit_radius` (or -1). Non-finite states freeze the
// trajectory and report blow-up via exit index `to + 1` sentinel handling at
// the call site.
inline int march_davie(const RSDECoefficients& c, const RoughPath* rp,
                       std::span<const double> noise_path, int sample, const TimeGrid& grid,
                       int from, int to, std::span<const double> y0, double* Y, int stride_pts,
                       double exit_radius, StepWork& w) {
    int p = c.p;
    std::copy(y0.begin(), y0.end(), Y + static_cast<size_t>(from) * stride_pts);
    int exit_idx = -1;
    if (exit_radius > 0 && frobenius(y0) > exit_radius) return from;
    for (int i = from; i < to; ++i) {
        double h = grid.dt(i);
        const double* yi = Y + static_cast<size_t>(i) * stride_pts;
        double* yn = Y + static_cast<size_t>(i + 1) * stride_pts;
        if (c.sigma && !noise_path.empty())
            for (int a = 0; a < c.d1; ++a)
                w.db[(size_t)a] = noise_path[static_cast<size_t>(i + 1) * c.d1 + a] -
                                  noise_path[static_cast<size_t>(i) * c.d1 + a];
        if (c.fvf && rp) {
            rp->delta_x(i, i + 1, w.dx);
            std::copy(rp->XX.slot(i, i + 1), rp->XX.slot(i, i + 1) + c.d * c.d, w.xx.begin());
        }
        step_davie({yi, static_cast<size_t>(p)}, c, sample, grid.t[(size_t)i], h, w.db, w.dx, w.xx,
                   {yn, static_cast<size_t>(p)}, w);
        bool finite = true;
        for (int r = 0; r < p; ++r) finite &= std::isfinite(yn[r]);
        if (!finite) {
            for (int j = i + 1; j <= to; ++j)
                std::copy(yi, yi + p, Y + static_cast<size_t>(j) * stride_pts);
            return i + 1;
        }
        if (exit_radius > 0 && frobenius({yn, static_cast<size_t>(p)}) > exit_radius)
            return i + 1;
    }
    return exit_idx;
}

}  // namespace detail

// Explicit Davie-scheme march over the whole grid.
inline Trajectory solve_davie(const RSDECoefficients& c, const RoughPath* rp,
                              const BrownianEnsemble* noise, std::span<const double> xi, int M,
                              GridPtr grid, int workers = 1) {
    if (c.has_rough() && rp == nullptr)
        throw std::invalid_argument("solve_davie: rough coefficients need a rough path");
    if (c.sigma && noise == nullptr)
        throw std::invalid_argument("solve_davie: diffusion needs a Brownian ensemble");
    if (noise && noise->grid->N != grid->N)
        throw std::invalid_argument("solve_davie: noise grid mismatch");
    if (rp && rp->grid->N != grid->N) throw std::invalid_argument("solve_davie: driver grid mismatch");
    if (xi.size() != static_cast<size_t>(M) * c.p)
        throw std::invalid_argument("solve_davie: one initial value per sample required");

    Trajectory tr;
    tr.grid = grid;
    tr.p = c.p;
    tr.M = M;
    tr.method = "davie";
    tr.Y.assign(static_cast<size_t>(M) * grid->points() * c.p, 0.0);
    tr.blown_up.assign(static_cast<size_t>(M), 0);
    if (c.has_rough() && rp) {
        double step_pow = std::pow(grid->step(), 2.0 * rp->alpha);
        if (step_pow > 0.25)
            tr.warnings.push_back("step^(2 alpha) = " + std::to_string(step_pow) +
                                  " exceeds 0.25; declared Hoelder data demand a finer grid");
        if (c.fvf->gamma <= 1.0 / rp->alpha)
            tr.warnings.push_back("critical regularity gamma <= 1/alpha: uniqueness diagnostics "
                                  "are non-certifying");
    }
    parallel_for(M, workers, [&](std::int64_t k) {
        detail::StepWork w;
        w.resize(c);
        std::span<const double> path =
            noise ? noise->path(static_cast<int>(k)) : std::span<const double>();
        int exit = detail::march_davie(c, rp, path, static_cast<int>(k), *grid, 0, grid->N,
                                       xi.subspan(static_cast<size_t>(k) * c.p, c.p),
                                       tr.Y.data() + static_cast<size_t>(k) * grid->points() * c.p,
                                       c.p, -1.0, w);
        if (exit >= 0) tr.blown_up[(size_t)k] = 1;
    });
    return tr;
}

// ---------------------------------------------------------------------------
// Picard iteration of the fixed-point map
//   Phi(Y, Y') = ( xi + int b dt + int sigma dB + int f(Y) dX, f(Y) )
// with the rough stochastic integral evaluated by sewing at the trajectory's
// own grid level. Iterates until the metric
//   d = ||d(Y - Ybar)||_{beta;m} + ||d(Y' - Ybar')||_{beta';m}
//       + ||E.(R - Rbar)||_{beta+beta';m}
// falls below tolerance; the conditional-expectation term is bounded from
// above by the plain moment (Jensen), which can only delay the stop.
// ---------------------------------------------------------------------------

struct PicardOptions {
    double tol = 1e-8;
    int max_iter = 25;
    int m = 2;
    double beta = 0.45, beta_prime = 0.45;
};

namespace detail {

inline double picard_metric(const ControlledPath& a, const ControlledPath& b, const RoughPath& rp,
                            int m, double beta, double beta_prime) {
    int M = a.M, w = a.width(), d = a.d;
    const auto& t = a.grid->t;
    PairSet pairs = PairSet::choose(a.grid->N);
    RemainderEval ra(a, rp), rb(b, rp);
    double dz = 0, dzp = 0, er = 0;
    std::vector<double> va(static_cast<size_t>(w)), vb(static_cast<size_t>(w));
    pairs.for_each([&](int i, int j, std::int64_t) {
        double dt = t[(size_t)j] - t[(size_t)i];
        double az = 0, azp = 0, aer = 0;
        for (int k = 0; k < M; ++k) {
            double acc = 0;
            for (int cq = 0; cq < w; ++cq) {
                double dd = (a.z(k, j)[(size_t)cq] - a.z(k, i)[(size_t)cq]) -
                            (b.z(k, j)[(size_t)cq] - b.z(k, i)[(size_t)cq]);
                acc += dd * dd;
            }
            az += std::pow(std::sqrt(acc), m);
            acc = 0;
            for (int cq = 0; cq < w * d; ++cq) {
                double dd = (a.zp(k, j)[(size_t)cq] - a.zp(k, i)[(size_t)cq]) -
                            (b.zp(k, j)[(size_t)cq] - b.zp(k, i)[(size_t)cq]);
                acc += dd * dd;
            }
            azp += std::pow(std::sqrt(acc), m);
            ra.eval(k, i, j, va);
            rb.eval(k, i, j, vb);
            acc = 0;
            for (int cq = 0; cq < w; ++cq) {
                double dd = va[(size_t)cq] - vb[(size_t)cq];
                acc += dd * dd;
            }
            aer += std::pow(std::sqrt(acc), m);
        }
        dz = std::max(dz, std::pow(az / M, 1.0 / m) / std::pow(dt, beta));
        dzp = std::max(dzp, std::pow(azp / M, 1.0 / m) / std::pow(dt, beta_prime));
        er = std::max(er, std::pow(aer / M, 1.0 / m) / std::pow(dt, beta + beta_prime));
    });
    return dz + dzp + er;
}

}  // namespace detail

inline Trajectory solve_picard(const RSDECoefficients& c, const RoughPath& rp,
                               const BrownianEnsemble* noise, std::span<const double> xi, int M,
                               GridPtr grid, const PicardOptions& opt = {}, int workers = 1) {
    if (!c.has_rough()) throw std::invalid_argument("solve_picard: a rough vector field is required");
    if (c.p != c.fvf->q) throw std::invalid_argument("solve_picard: field/state dimension mismatch");
    int p = c.p, d = c.d;
    int pts = grid->points();

    auto make_state = [&](const std::vector<double>& Y) {
        ControlledPath cp;
        cp.grid = grid;
        cp.zshape = Shape::vec(p);
        cp.d = d;
        cp.M = M;
        cp.Z = Y;
        cp.Zp.assign(static_cast<size_t>(M) * pts * p * d, 0.0);
        for (int k = 0; k < M; ++k)
            for (int i = 0; i < pts; ++i)
                c.fvf->eval_f(grid->t[(size_t)i], cp.z(k, i), cp.zp_mut(k, i));
        return cp;
    };

    // initial iterate Y^0_t = xi + f_0(xi) dX_{0,t}
    std::vector<double> Y(static_cast<size_t>(M) * pts * p);
    {
        std::vector<double> f0(static_cast<size_t>(p) * d), dx(static_cast<size_t>(d));
        for (int k = 0; k < M; ++k) {
            auto x0 = xi.subspan(static_cast<size_t>(k) * p, p);
            c.fvf->eval_f(grid->t[0], x0, f0);
            for (int i = 0; i < pts; ++i) {
                double* yi = Y.data() + (static_cast<size_t>(k) * pts + i) * p;
                std::copy(x0.begin(), x0.end(), yi);
                rp.delta_x(0, i, dx);
                mat_vec_add(f0, dx, {yi, static_cast<size_t>(p)});
            }
        }
    }
    ControlledPath state = make_state(Y);

    double prev_metric = std::numeric_limits<double>::infinity();
    int increases = 0;
    std::vector<double> metrics;
    for (int it = 0; it < opt.max_iter; ++it) {
        // integrand (f(Y), Df(Y) f(Y) + f'(Y)) and its rough integral
        auto integrand = compose(*c.fvf, state);
        auto rough = rsi_forward(integrand, rp, opt.m, -1, nullptr, workers);

        std::vector<double> next(static_cast<size_t>(M) * pts * p);
        parallel_for(M, workers, [&](std::int64_t k) {
            std::vector<double> bv(static_cast<size_t>(p)), sg(static_cast<size_t>(p) * c.d1),
                db(static_cast<size_t>(c.d1));
            std::vector<double> acc(static_cast<size_t>(p), 0.0);
            auto x0 = xi.subspan(static_cast<size_t>(k) * p, p);
            for (int i = 0; i < pts; ++i) {
                double* yi = next.data() + (static_cast<size_t>(k) * pts + i) * p;
                for (int r = 0; r < p; ++r) yi[r] = x0[(size_t)r] + acc[(size_t)r];
                auto rint = rough.report.value(static_cast<int>(k), i);
                for (int r = 0; r < p; ++r) yi[r] += rint[(size_t)r];
                if (i < pts - 1) {
                    double h = grid->dt(i);
                    auto ycur = state.z(static_cast<int>(k), i);
                    if (c.b) {
                        c.b.eval(static_cast<int>(k), grid->t[(size_t)i], ycur, bv.data());
                        for (int r = 0; r < p; ++r) acc[(size_t)r] += bv[(size_t)r] * h;
                    }
                    if (c.sigma && noise) {
                        c.sigma.eval(static_cast<int>(k), grid->t[(size_t)i], ycur, sg.data());
                        noise->increment(static_cast<int>(k), i, i + 1, db);
                        mat_vec_add(sg, db, acc);
                    }
                }
            }
        });
        ControlledPath next_state = make_state(next);
        double dmetric =
            detail::picard_metric(next_state, state, rp, opt.m, opt.beta, opt.beta_prime);
        metrics.push_back(dmetric);
        state = std::move(next_state);
        if (dmetric < opt.tol) break;
        if (dmetric > prev_metric) {
            if (++increases >= 3) {
                std::string diag = "solve_picard: metric not contracting:";
                for (double md : metrics) diag += " " + std::to_string(md);
                throw std::runtime_error(diag);
            }
        } else {
            increases = 0;
        }
        prev_metric = dmetric;
    }
    if (!metrics.empty() && metrics.back() >= opt.tol)
        // ran out of iterations; report the final metric for diagnosis
        throw std::runtime_error("solve_picard: no convergence after " +
                                 std::to_string(opt.max_iter) +
                                 " iterations, final metric = " + std::to_string(metrics.back()));

    Trajectory tr;
    tr.grid = grid;
    tr.p = p;
    tr.M = M;
    tr.method = "picard";
    tr.Y = std::move(state.Z);
    tr.blown_up.assign(static_cast<size_t>(M), 0);
    for (int k = 0; k < M; ++k) {
        bool fine = true;
        for (int i = 0; i < pts; ++i)
            for (int r = 0; r < p; ++r) fine &= std::isfinite(tr.y(k, i)[(size_t)r]);
        tr.blown_up[(size_t)k] = fine ? 0 : 1;
    }
    return tr;
}

inline Trajectory solve_rsde(const RSDECoefficients& c, const RoughPath* rp,
                             const BrownianEnsemble* noise, std::span<const double> xi, int M,
                             GridPtr grid, SolveMethod method = SolveMethod::davie,
                             const PicardOptions& opt = {}, int workers = 1) {
    if (method == SolveMethod::davie) return solve_davie(c, rp, noise, xi, M, grid, workers);
    if (rp == nullptr) throw std::invalid_argument("solve_rsde: picard needs a rough path");
    return solve_picard(c, *rp, noise, xi, M, grid, opt, workers);
}

// ---------------------------------------------------------------------------
// Localized solving with blow-up stopping
// ---------------------------------------------------------------------------

// Radius schedule K_N. Exit times are detected by first grid crossing (no
// sub-grid interpolation), so the reported tau is right-biased by at most one
// step. The largest radius is tied to the step size: below ~1/(4h) the
// truncation bias -1/K dominates, far above it each doubling costs extra
// steps of pure lag, as the discrete trajectory leaves any ball in O(1) steps
// once h |b(y)| ~ |y|.
struct StoppingPolicy {
    std::vector<double> radii;

    static StoppingPolicy for_grid(const TimeGrid& grid, double xi_bound, double cap_factor = 0.25) {
        StoppingPolicy p;
        double cap = std::max(8.0, cap_factor * grid.N / grid.T);
        for (double K = 8.0 + xi_bound; K < cap + xi_bound; K *= 2) p.radii.push_back(K);
        p.radii.push_back(cap + xi_bound);
        return p;
    }

    void validate() const {
        if (radii.empty()) throw std::invalid_argument("StoppingPolicy: empty schedule");
        for (size_t i = 1; i < radii.size(); ++i)
            if (radii[i] <= radii[i - 1])
                throw std::invalid_argument("StoppingPolicy: radii must increase");
    }
};

struct LocalSolveResult {
    Trajectory traj;             // trajectory under the largest radius reached
    std::vector<int> tau_idx;    // first exit index (= N when never exiting)
    std::vector<char> blown_up;  // schedule exhausted
    std::vector<double> radius_used;
};

// Per sample: solve with radius-K clamped coefficients, detect the first grid
// exit |y| > K, escalate K and re-solve (identical arithmetic before the
// clamp activates, so trajectories agree up to the exit), until either no
// exit occurs or the schedule is exhausted. tau is the sup of exit times
// reached; exhausting the schedule counts as blow-up, not as an error.
inline LocalSolveResult solve_local(const RSDECoefficients& c, const RoughPath* rp,
                                    const BrownianEnsemble* noise, std::span<const double> xi,
                                    int M, GridPtr grid, const StoppingPolicy& policy,
                                    int workers = 1) {
    policy.validate();
    LocalSolveResult res;
    res.traj.grid = grid;
    res.traj.p = c.p;
    res.traj.M = M;
    res.traj.method = "davie-local";
    res.traj.Y.assign(static_cast<size_t>(M) * grid->points() * c.p, 0.0);
    res.traj.blown_up.assign(static_cast<size_t>(M), 0);
    res.tau_idx.assign(static_cast<size_t>(M), grid->N);
    res.blown_up.assign(static_cast<size_t>(M), 0);
    res.radius_used.assign(static_cast<size_t>(M), 0.0);

    parallel_for(M, workers, [&](std::int64_t k) {
        detail::StepWork w;
        std::span<const double> path =
            noise ? noise->path(static_cast<int>(k)) : std::span<const double>();
        double* Y = res.traj.Y.data() + static_cast<size_t>(k) * grid->points() * c.p;
        int exit_idx = -1;
        for (size_t ri = 0; ri < policy.radii.size(); ++ri) {
            double K = policy.radii[ri];
            RSDECoefficients cc = c;
            cc.b = clamp_coeff(c.b, K);
            cc.sigma = clamp_coeff(c.sigma, K);
            if (c.fvf) cc.fvf = clamp_vector_field(*c.fvf, K);
            w.resize(cc);
            exit_idx = detail::march_davie(cc, rp, path, static_cast<int>(k), *grid, 0, grid->N,
                                           xi.subspan(static_cast<size_t>(k) * c.p, c.p), Y, c.p, K, w);
            res.radius_used[(size_t)k] = K;
            if (exit_idx < 0) break;  // never left the ball: done
            res.tau_idx[(size_t)k] = exit_idx;
        }
        if (exit_idx >= 0) {
            res.blown_up[(size_t)k] = 1;
            res.traj.blown_up[(size_t)k] = 1;
            // freeze the state at the exit
            for (int i = exit_idx + 1; i <= grid->N; ++i)
                std::copy(Y + static_cast<size_t>(exit_idx) * c.p,
                          Y + static_cast<size_t>(exit_idx + 1) * c.p,
                          Y + static_cast<size_t>(i) * c.p);
        } else {
            res.tau_idx[(size_t)k] = grid->N;
        }
    });
    return res;
}

// ---------------------------------------------------------------------------
// Davie-expansion remainder diagnostics
// ---------------------------------------------------------------------------

struct SpanStat {
    double dt = 0.0;
    double cond = 0.0;  // || ||J|F_s||_m ||_n estimate
    double mean = 0.0;  // ||E_s J||_n estimate
};

struct RemainderReport {
    std::vector<SpanStat> forward, backward;
    SlopeFit j_cond_slope, j_mean_slope;        // targets: alpha+(alpha^beta), then + beta'
    SlopeFit jbar_cond_slope, jbar_mean_slope;  // backward analogues
};

// Measures the conditional smallness of the forward remainder
//   J_{s,t} = dY - int b dr - int sigma dB - f_s(Y_s) dX - (Df f + f')(Y_s) XX
// and its backward analogue, on dyadic spans of the coarse grid. Trajectories
// and the Lebesgue/Ito integrals run on a fine_factor-refined grid to keep
// their own discretization error below the measured signal; conditional
// norms re-solve the trajectory on branched futures from the frozen past
// state. n = infinity outer norms are ensemble maxima.
inline RemainderReport remainder_diagnostics(const RSDECoefficients& c, const RoughPath& rp_fine,
                                             int fine_factor, std::span<const double> xi,
                                             const BranchedEnsemble& be,
                                             const std::vector<int>& coarse_spans, double m,
                                             double n, int workers = 1) {
    if (coarse_spans.size() < 4)
        throw std::invalid_argument("remainder_diagnostics: need at least 4 dyadic span scales");
    const TimeGrid& gf = be.grid();
    if (rp_fine.grid->N != gf.N)
        throw std::invalid_argument("remainder_diagnostics: driver must live on the fine grid");
    int M = be.outer_count();
    int p = c.p;

    // outer trajectories on the fine grid
    Trajectory traj = solve_davie(c, c.has_rough() ? &rp_fine : nullptr,
                                  c.sigma ? &be.outer() : nullptr, xi, M, be.grid_ptr(), workers);

    auto eval_J = [&](std::span<const double> Ypath, std::span<const double> Bpath, int sample,
                      int s, int t, bool backward, std::span<double> out) {
        // dY - sum b h - sum sigma dB
        std::vector<double> bv(static_cast<size_t>(p)), sg(static_cast<size_t>(p) * c.d1),
            db(static_cast<size_t>(c.d1));
        for (int r = 0; r < p; ++r)
            out[(size_t)r] = Ypath[static_cast<size_t>(t) * p + r] - Ypath[static_cast<size_t>(s) * p + r];
        for (int i = s; i < t; ++i) {
            std::span<const double> yi{Ypath.data() + static_cast<size_t>(i) * p, static_cast<size_t>(p)};
            if (c.b) {
                c.b.eval(sample, gf.t[(size_t)i], yi, bv.data());
                for (int r = 0; r < p; ++r) out[(size_t)r] -= bv[(size_t)r] * gf.dt(i);
            }
            if (c.sigma) {
                c.sigma.eval(sample, gf.t[(size_t)i], yi, sg.data());
                for (int a = 0; a < c.d1; ++a)
                    db[(size_t)a] = Bpath[static_cast<size_t>(i + 1) * c.d1 + a] -
                                    Bpath[static_cast<size_t>(i) * c.d1 + a];
                for (int r = 0; r < p; ++r) {
                    double acc = 0;
                    for (int a = 0; a < c.d1; ++a) acc += sg[static_cast<size_t>(r) * c.d1 + a] * db[(size_t)a];
                    out[(size_t)r] -= acc;
                }
            }
        }
        if (c.fvf) {
            int anchor = backward ? t : s;
            std::span<const double> ya{Ypath.data() + static_cast<size_t>(anchor) * p,
                                       static_cast<size_t>(p)};
            std::vector<double> fv(static_cast<size_t>(p) * c.d),
                gv(static_cast<size_t>(p) * c.d * c.d), dx(static_cast<size_t>(c.d)),
                xx(static_cast<size_t>(c.d) * c.d);
            rp_fine.delta_x(s, t, dx);
            rp_fine.xx_eval(s, t, xx);
            if (backward)
                for (int a = 0; a < c.d; ++a)
                    for (int b2 = 0; b2 < c.d; ++b2)
                        xx[static_cast<size_t>(a) * c.d + b2] -= dx[(size_t)a] * dx[(size_t)b2];
            c.fvf->eval_f(gf.t[(size_t)anchor], ya, fv);
            for (int r = 0; r < p; ++r) {
                double acc = 0;
                for (int v = 0; v < c.d; ++v) acc += fv[static_cast<size_t>(r) * c.d + v] * dx[(size_t)v];
                out[(size_t)r] -= acc;
            }
            c.fvf->davie_tensor(gf.t[(size_t)anchor], ya, gv);
            for (int r = 0; r < p; ++r) {
                double acc = 0;
                const double* g = gv.data() + static_cast<size_t>(r) * c.d * c.d;
                for (int q = 0; q < c.d * c.d; ++q) acc += g[q] * xx[(size_t)q];
                out[(size_t)r] -= acc;
            }
        }
    };

    RemainderReport rep;
    std::vector<int> spans_f;
    for (int sc : coarse_spans) spans_f.push_back(sc * fine_factor);

    for (int span : spans_f) {
        SpanStat fw, bw;
        fw.dt = bw.dt = gf.T * span / gf.N;
        std::vector<double> prof_cond_f(static_cast<size_t>(M)), prof_mean_f(static_cast<size_t>(M));
        std::vector<double> prof_cond_b(static_cast<size_t>(M)), prof_mean_b(static_cast<size_t>(M));
        std::vector<char> used(static_cast<size_t>(M), 0);

        parallel_for(M, workers, [&](std::int64_t kk) {
            int k = static_cast<int>(kk);
            detail::StepWork w;
            w.resize(c);
            double best_cf = 0, best_mf = 0, best_cb = 0, best_mb = 0;
            bool any = false;
            std::vector<double> Ybranch, Bpath, val_f(static_cast<size_t>(p)),
                val_b(static_cast<size_t>(p)), mean_f(static_cast<size_t>(p)),
                mean_b(static_cast<size_t>(p));
            for (int s : be.branch_points()) {
                int t = s + span;
                if (t > gf.N) continue;
                any = true;
                double acc_cf = 0, acc_cb = 0;
                std::fill(mean_f.begin(), mean_f.end(), 0.0);
                std::fill(mean_b.begin(), mean_b.end(), 0.0);
                Bpath.resize(static_cast<size_t>(t + 1) * c.d1);
                Ybranch.resize(static_cast<size_t>(t + 1) * p);
                std::copy(traj.Y.begin() + static_cast<size_t>(k) * gf.points() * p,
                          traj.Y.begin() + static_cast<size_t>(k) * gf.points() * p +
                              static_cast<size_t>(s + 1) * p,
                          Ybranch.begin());
                for (int jn = 0; jn < be.inner_count(); ++jn) {
                    be.future_path(k, jn, s, t, Bpath);
                    detail::march_davie(c, c.has_rough() ? &rp_fine : nullptr, Bpath, k, gf, s, t,
                                        {Ybranch.data() + static_cast<size_t>(s) * p,
                                         static_cast<size_t>(p)},
                                        Ybranch.data(), p, -1.0, w);
                    eval_J(Ybranch, Bpath, k, s, t, false, val_f);
                    eval_J(Ybranch, Bpath, k, s, t, true, val_b);
                    acc_cf += std::pow(frobenius(val_f), m);
                    acc_cb += std::pow(frobenius(val_b), m);
                    for (int r = 0; r < p; ++r) {
                        mean_f[(size_t)r] += val_f[(size_t)r];
                        mean_b[(size_t)r] += val_b[(size_t)r];
                    }
                }
                double inv = 1.0 / be.inner_count();
                best_cf = std::max(best_cf, std::pow(acc_cf * inv, 1.0 / m));
                best_cb = std::max(best_cb, std::pow(acc_cb * inv, 1.0 / m));
                for (int r = 0; r < p; ++r) {
                    mean_f[(size_t)r] *= inv;
                    mean_b[(size_t)r] *= inv;
                }
                best_mf = std::max(best_mf, frobenius(mean_f));
                best_mb = std::max(best_mb, frobenius(mean_b));
            }
            used[(size_t)kk] = any ? 1 : 0;
            prof_cond_f[(size_t)kk] = best_cf;
            prof_mean_f[(size_t)kk] = best_mf;
            prof_cond_b[(size_t)kk] = best_cb;
            prof_mean_b[(size_t)kk] = best_mb;
        });
        fw.cond = outer_moment(prof_cond_f, n);
        fw.mean = outer_moment(prof_mean_f, n);
        bw.cond = outer_moment(prof_cond_b, n);
        bw.mean = outer_moment(prof_mean_b, n);
        rep.forward.push_back(fw);
        rep.backward.push_back(bw);
    }

    auto fit_of = [&](auto&& get, const std::vector<SpanStat>& table) {
        std::vector<double> lx, ly;
        for (const auto& st : table)
            if (get(st) > 1e-300) {
                lx.push_back(std::log(st.dt));
                ly.push_back(std::log(get(st)));
            }
        return lx.size() >= 2 ? fit_line(lx, ly) : SlopeFit{};
    };
    rep.j_cond_slope = fit_of([](const SpanStat& s) { return s.cond; }, rep.forward);
    rep.j_mean_slope = fit_of([](const SpanStat& s) { return s.mean; }, rep.forward);
    rep.jbar_cond_slope = fit_of([](const SpanStat& s) { return s.cond; }, rep.backward);
    rep.jbar_mean_slope = fit_of([](const SpanStat& s) { return s.mean; }, rep.backward);
    return rep;
}

// ---------------------------------------------------------------------------
// Doob-Meyer split of a stochastic controlled rough path
// ---------------------------------------------------------------------------

struct DoobMeyerResult {
    GridPtr grid;
    int M = 0;
    std::vector<double> J;     // M * (N+1), adapted compensator
    std::vector<double> Mart;  // M * (N+1), martingale part  Z - Z_0 - J
    SewReport report;
    SlopeFit jz_slope;       // || dJ - Z'_s dX ||_m decay (est.jz echo)
    double mart_check = 0.0; // max_s,t || inner-mean dM_{s,t} ||_2 estimate
    double mart_se = 0.0;    // Monte Carlo stderr of that estimate
};

// J is built by sewing the germ E_s dZ_{s,t} (inner-future averaging on the
// branched ensemble); M = Z - Z_0 - J. The scalar-valued case is supported.
inline DoobMeyerResult doob_meyer_split(const ControlledPath& cp, const RoughPath& rp,
                                        const BranchedEnsemble& be, int m = 2, int k_max = -1,
                                        int workers = 1) {
    if (!cp.rule)
        throw std::invalid_argument("doob_meyer_split: controlled path needs a regeneration rule");
    if (cp.width() != 1)
        throw std::invalid_argument("doob_meyer_split: scalar-valued paths only");
    if (cp.M != be.outer_count())
        throw std::invalid_argument("doob_meyer_split: branching must match the ensemble");
    const TimeGrid& grid = *cp.grid;
    int M = cp.M;

    auto rule = cp.rule;
    const BranchedEnsemble* pbe = &be;
    Germ g;
    g.width = 1;
    g.samples = M;
    g.eval = [rule, pbe](int k, int i, int j, double* out) {
        if (i == j) {
            out[0] = 0.0;
            return;
        }
        // E_i dZ_{i,j} estimated over futures branched at i
        std::vector<double> path(static_cast<size_t>(j + 1) * pbe->dim());
        double zi = 0, zj = 0, zp = 0, acc = 0;
        for (int jn = 0; jn < pbe->inner_count(); ++jn) {
            pbe->future_path(k, jn, i, j, path);
            rule(path, i, &zi, &zp);
            rule(path, j, &zj, &zp);
            acc += zj - zi;
        }
        out[0] = acc / pbe->inner_count();
    };

    DoobMeyerResult res;
    res.grid = cp.grid;
    res.M = M;
    res.report = sew(g, grid, m, k_max, nullptr, workers);
    if (res.report.stride != 1)
        throw std::invalid_argument("doob_meyer_split: sew to full depth for the split");
    res.J = res.report.sewn;
    res.Mart.resize(res.J.size());
    for (int k = 0; k < M; ++k)
        for (int i = 0; i <= grid.N; ++i)
            res.Mart[static_cast<size_t>(k) * grid.points() + i] =
                cp.z(k, i)[0] - cp.z(k, 0)[0] - res.J[static_cast<size_t>(k) * grid.points() + i];

    // est.jz echo: || dJ_{s,t} - Z'_s dX_{s,t} ||_m over dyadic spans
    {
        std::vector<double> lx, ly, dx(static_cast<size_t>(cp.d));
        for (int span = 1; span <= grid.N / 2; span *= 2) {
            double worst = 0.0;
            for (int s = 0; s + span <= grid.N; s += std::max(1, span)) {
                double acc = 0.0;
                for (int k = 0; k < M; ++k) {
                    rp.delta_x(s, s + span, dx);
                    double dj = res.J[static_cast<size_t>(k) * grid.points() + s + span] -
                                res.J[static_cast<size_t>(k) * grid.points() + s];
                    for (int q = 0; q < cp.d; ++q) dj -= cp.zp(k, s)[(size_t)q] * dx[(size_t)q];
                    acc += std::pow(std::abs(dj), m);
                }
                worst = std::max(worst, std::pow(acc / M, 1.0 / m));
            }
            if (worst > 1e-300) {
                lx.push_back(std::log(grid.T * span / grid.N));
                ly.push_back(std::log(worst));
            }
        }
        if (lx.size() >= 3) res.jz_slope = fit_line(lx, ly);
    }

    // martingale check: || E_s dM_{s,t} || estimated as inner-mean(dZ) - dJ,
    // with dJ taken from the realized compensator (exact for compensators
    // that are F_s-measurable over the span, e.g. deterministic J)
    {
        double worst = 0.0, worst_se = 0.0;
        std::vector<double> path;
        for (int s : be.branch_points()) {
            for (int span : default_spans(grid.N)) {
                int t = s + span;
                if (t > grid.N) continue;
                std::vector<double> est(static_cast<size_t>(M));
                for (int k = 0; k < M; ++k) {
                    path.resize(static_cast<size_t>(t + 1) * be.dim());
                    double zi = 0, zj = 0, zp = 0, acc = 0;
                    for (int jn = 0; jn < be.inner_count(); ++jn) {
                        be.future_path(k, jn, s, t, path);
                        rule(path, s, &zi, &zp);
                        rule(path, t, &zj, &zp);
                        acc += zj - zi;
                    }
                    double dj = res.J[static_cast<size_t>(k) * grid.points() + t] -
                                res.J[static_cast<size_t>(k) * grid.points() + s];
                    est[(size_t)k] = acc / be.inner_count() - dj;
                }
                double mean = 0;
                for (double e : est) mean += e / M;
                double var = 0;
                for (double e : est) var += (e - mean) * (e - mean);
                var = M > 1 ? var / (M - 1) / M : 0.0;
                if (std::abs(mean) > worst) {
                    worst = std::abs(mean);
                    worst_se = std::sqrt(var);
                }
            }
        }
        res.mart_check = worst;
        res.mart_se = worst_se;
    }
    return res;
}

}  // namespace rsc
