#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/branched.hpp"
#include "rsc/noise.hpp"
#include "rsc/rough_path.hpp"
#include "rsc/tensor.hpp"
#include "rsc/time_grid.hpp"
#include "rsc/two_param_field.hpp"
#include "rsc/vector_fields.hpp"

namespace rsc {

// Pointwise rule producing (Z_t, Z'_t) from the driving noise path up to t.
// The rule must consume values at indices <= t only (adaptedness); this is a
// documented contract, not mechanically verified.
using PointwiseRule =
    std::function<void(std::span<const double> noise_prefix, int t, double* z, double* zp)>;

// Ensemble of stochastic controlled rough path samples (Z, Z'). Z values have
// shape `zshape` (width w); Z' values are L(V, .)-valued with width w * d.
// The remainder R^Z_{s,t} = dZ_{s,t} - Z'_s dX_{s,t} is always derived, never
// stored. When `rule` is set the path can be re-evaluated on branched futures
// for conditional-norm estimation.
struct ControlledPath {
    GridPtr grid;
    Shape zshape;
    int d = 1;  // rough driver dimension
    int M = 0;
    double beta = 0.45, beta_prime = 0.45;
    std::vector<double> Z;   // M * (N+1) * w
    std::vector<double> Zp;  // M * (N+1) * w * d
    PointwiseRule rule;      // optional regenerator
    bool deterministic = false;

    int width() const { return zshape.size(); }

    std::span<const double> z(int k, int i) const {
        int w = width();
        return {Z.data() + (static_cast<size_t>(k) * grid->points() + i) * w, static_cast<size_t>(w)};
    }
    std::span<const double> zp(int k, int i) const {
        int wd = width() * d;
        return {Zp.data() + (static_cast<size_t>(k) * grid->points() + i) * wd, static_cast<size_t>(wd)};
    }
    std::span<double> z_mut(int k, int i) {
        int w = width();
        return {Z.data() + (static_cast<size_t>(k) * grid->points() + i) * w, static_cast<size_t>(w)};
    }
    std::span<double> zp_mut(int k, int i) {
        int wd = width() * d;
        return {Zp.data() + (static_cast<size_t>(k) * grid->points() + i) * wd, static_cast<size_t>(wd)};
    }
};

// Materialize a controlled path on an outer noise ensemble (or M identical
// deterministic samples when `noise` is null).
inline ControlledPath make_controlled_path(GridPtr grid, int M, Shape zshape, int d,
                                           PointwiseRule rule, const BrownianEnsemble* noise,
                                           double beta = 0.45, double beta_prime = 0.45) {
    ControlledPath cp;
    cp.grid = grid;
    cp.zshape = zshape;
    cp.d = d;
    cp.M = M;
    cp.beta = beta;
    cp.beta_prime = beta_prime;
    cp.rule = rule;
    cp.deterministic = noise == nullptr;
    int w = zshape.size();
    int pts = grid->points();
    cp.Z.resize(static_cast<size_t>(M) * pts * w);
    cp.Zp.resize(static_cast<size_t>(M) * pts * w * d);
    if (noise && noise->M < M)
        throw std::invalid_argument("make_controlled_path: noise ensemble smaller than M");
    std::vector<double> empty;
    for (int k = 0; k < M; ++k) {
        std::span<const double> path =
            noise ? noise->path(k) : std::span<const double>(empty.data(), 0);
        for (int i = 0; i < pts; ++i) rule(path, i, cp.z_mut(k, i).data(), cp.zp_mut(k, i).data());
    }
    return cp;
}

// R^Z_{s,t} = dZ_{s,t} - Z'_s dX_{s,t}, evaluated per sample and pair against
// a shared deterministic driver or the matching random one.
class RemainderEval {
public:
    RemainderEval(const ControlledPath& cp, const RoughPath& rp) : cp_(&cp), det_(&rp) {
        if (cp.d != rp.dim)
            throw std::invalid_argument("remainder: driver dimension does not match Z'");
    }
    RemainderEval(const ControlledPath& cp, const RandomRoughPath& rrp) : cp_(&cp), rand_(&rrp) {
        if (cp.d != rrp.dim)
            throw std::invalid_argument("remainder: driver dimension does not match Z'");
        if (cp.M != rrp.M())
            throw std::invalid_argument("remainder: random driver needs a matching ensemble");
    }

    int width() const { return cp_->width(); }

    void eval(int k, int i, int j, std::span<double> out) const {
        int w = cp_->width(), d = cp_->d;
        auto zi = cp_->z(k, i);
        auto zj = cp_->z(k, j);
        auto zp = cp_->zp(k, i);
        const RoughPath& rp = det_ ? *det_ : rand_->sample[static_cast<size_t>(k)];
        std::vector<double> dx(static_cast<size_t>(d));
        rp.delta_x(i, j, dx);
        for (int c = 0; c < w; ++c) {
            double s = zj[(size_t)c] - zi[(size_t)c];
            for (int q = 0; q < d; ++q) s -= zp[static_cast<size_t>(c) * d + q] * dx[(size_t)q];
            out[(size_t)c] = s;
        }
    }

    Tensor at(int k, int i, int j) const {
        Tensor t(cp_->zshape);
        eval(k, i, j, t.values());
        return t;
    }

    // dense/dyadic field of R^Z for one sample
    TwoParamField field(int k, std::int64_t pair_budget = PairSet::kDefaultBudget) const {
        TwoParamField f(cp_->grid, cp_->zshape, pair_budget);
        int w = cp_->width();
        f.pairs().for_each([&](int i, int j, std::int64_t s) {
            eval(k, i, j, {f.raw().data() + static_cast<size_t>(s) * w, static_cast<size_t>(w)});
        });
        return f;
    }

private:
    const ControlledPath* cp_;
    const RoughPath* det_ = nullptr;
    const RandomRoughPath* rand_ = nullptr;
};

inline RemainderEval remainder(const ControlledPath& cp, const RoughPath& rp) {
    return RemainderEval(cp, rp);
}
inline RemainderEval remainder(const ControlledPath& cp, const RandomRoughPath& rrp) {
    return RemainderEval(cp, rrp);
}

// Composition (Z, Z') = (f(Y), Df(Y) Y' + f'(Y)) of a controlled vector field
// with a controlled path. Output Z is L(V, W)-valued (shape p x d).
inline ControlledPath compose(const ControlledVectorField& f, const ControlledPath& cp) {
    if (!f.has_df()) throw std::invalid_argument("compose: vector field must provide Df");
    if (!(f.gamma > 2.0 && f.gamma <= 3.0))
        throw std::invalid_argument("compose: regularity gamma must lie in (2, 3]");
    if (cp.zshape.rank != 1 || cp.zshape.extent[0] != f.q)
        throw std::invalid_argument("compose: controlled path must be state-valued of dimension " +
                                    std::to_string(f.q));
    if (cp.d != f.d) throw std::invalid_argument("compose: driver dimensions differ");

    int q = f.q, p = f.p, d = f.d;
    ControlledPath out;
    out.grid = cp.grid;
    out.zshape = Shape::mat(p, d);
    out.d = d;
    out.M = cp.M;
    out.beta = cp.beta;
    out.beta_prime = std::min(cp.beta_prime, (f.gamma - 2.0) * cp.beta);
    out.deterministic = cp.deterministic;
    int pts = cp.grid->points();
    out.Z.resize(static_cast<size_t>(cp.M) * pts * p * d);
    out.Zp.resize(static_cast<size_t>(cp.M) * pts * p * d * d);

    std::vector<double> dfv(static_cast<size_t>(p) * d * q), fpv(static_cast<size_t>(p) * d * d);
    for (int k = 0; k < cp.M; ++k) {
        for (int i = 0; i < pts; ++i) {
            double t = cp.grid->t[(size_t)i];
            auto y = cp.z(k, i);
            auto yp = cp.zp(k, i);  // q x d
            f.eval_f(t, y, out.z_mut(k, i));
            f.eval_df(t, y, dfv);
            f.eval_fp(t, y, fpv);
            auto zp = out.zp_mut(k, i);  // (p*d) x d
            for (int w = 0; w < p; ++w)
                for (int v = 0; v < d; ++v)
                    for (int j = 0; j < d; ++j) {
                        double s = fpv[(static_cast<size_t>(w) * d + j) * d + v];  // f'[w][j][v]
                        for (int u = 0; u < q; ++u)
                            s += dfv[(static_cast<size_t>(w) * d + v) * q + u] *
                                 yp[static_cast<size_t>(u) * d + j];
                        zp[(static_cast<size_t>(w) * d + v) * d + j] = s;
                    }
        }
    }
    if (cp.rule) {
        auto yrule = cp.rule;
        ControlledVectorField fcopy = f;
        GridPtr grid = cp.grid;
        out.rule = [yrule, fcopy, grid, q, p, d](std::span<const double> noise, int t, double* z,
                                                 double* zp) {
            std::vector<double> y(static_cast<size_t>(q)), yp(static_cast<size_t>(q) * d);
            yrule(noise, t, y.data(), yp.data());
            double tt = grid->t[(size_t)t];
            fcopy.eval_f(tt, y, {z, static_cast<size_t>(p) * d});
            std::vector<double> dfv(static_cast<size_t>(p) * d * q), fpv(static_cast<size_t>(p) * d * d);
            fcopy.eval_df(tt, y, dfv);
            fcopy.eval_fp(tt, y, fpv);
            for (int w = 0; w < p; ++w)
                for (int v = 0; v < d; ++v)
                    for (int j = 0; j < d; ++j) {
                        double s = fpv[(static_cast<size_t>(w) * d + j) * d + v];
                        for (int u = 0; u < q; ++u)
                            s += dfv[(static_cast<size_t>(w) * d + v) * q + u] * yp[static_cast<size_t>(u) * d + j];
                        zp[(static_cast<size_t>(w) * d + v) * d + j] = s;
                    }
        };
    }
    return out;
}

// ---------------------------------------------------------------------------
// (m, n)-norm reports for stochastic controlled rough paths
// ---------------------------------------------------------------------------

struct PairStat {
    int s = 0, t = 0;
    double dt = 0.0;
    double value = 0.0;     // raw conditional-norm estimate
    double rescaled = 0.0;  // value / dt^exponent
};

struct ScrpNormReport {
    double dz = 0.0;      // ||dZ||_{beta; m,n}
    double sup_zp = 0.0;  // sup_t ||Z'_t||_n
    double dzp = 0.0;     // ||dZ'||_{beta'; m,n}
    double er = 0.0;      // ||E. R^Z||_{beta+beta'; n}
    double r_mn = 0.0;    // ||R^Z||_{beta+beta'; m,n} (script-D variant)
    std::vector<PairStat> dz_table, dzp_table, er_table, r_table;
};

namespace detail {

inline std::vector<std::pair<int, int>> branch_pairs(const BranchedEnsemble& be,
                                                     const std::vector<int>& spans) {
    std::vector<std::pair<int, int>> out;
    for (int s : be.branch_points())
        for (int span : spans) {
            int t = s + span;
            if (span >= 1 && t <= be.grid().N) out.emplace_back(s, t);
        }
    if (out.empty()) throw std::invalid_argument("branch_pairs: no admissible (s, t) pairs");
    return out;
}

}  // namespace detail

inline std::vector<int> default_spans(int N) {
    std::vector<int> spans;
    for (int s = std::max(1, N / 16); s <= N / 2; s *= 2) spans.push_back(s);
    if (spans.empty()) spans.push_back(1);
    return spans;
}

// The four components of the stochastic controlled rough path seminorm, each
// estimated as a max over branch-point pairs of rescaled conditional-norm
// estimates, plus the script-D remainder variant. Requires a regenerating
// rule on cp. n = infinity outer norms are ensemble maxima (biased low).
inline ScrpNormReport scrp_norm(const ControlledPath& cp, const RoughPath& rp, double m, double n,
                                double beta, double beta_prime, const BranchedEnsemble& be,
                                std::vector<int> spans = {}) {
    if (!cp.rule) throw std::invalid_argument("scrp_norm: controlled path has no regeneration rule");
    if (!(m >= 1.0) || m > n) throw std::invalid_argument("scrp_norm: need 1 <= m <= n");
    if (spans.empty()) spans = default_spans(be.grid().N);
    auto pairs = detail::branch_pairs(be, spans);
    int w = cp.width();
    int d = cp.d;
    const auto& grid = be.grid();

    ScrpNormReport rep;

    // sup_t ||Z'_t||_n over the stored ensemble
    for (int i = 0; i < grid.points(); ++i) {
        std::vector<double> norms(static_cast<size_t>(cp.M));
        for (int k = 0; k < cp.M; ++k) norms[(size_t)k] = frobenius(cp.zp(k, i));
        rep.sup_zp = std::max(rep.sup_zp, outer_moment(norms, n));
    }

    auto rule = cp.rule;
    BranchFunctional dz_fn = [rule, w, d](std::span<const double> path, int, int s, int t, double* out) {
        std::vector<double> zs(static_cast<size_t>(w)), zt(static_cast<size_t>(w)),
            zp(static_cast<size_t>(w) * d);
        rule(path, s, zs.data(), zp.data());
        rule(path, t, zt.data(), zp.data());
        for (int c = 0; c < w; ++c) out[c] = zt[(size_t)c] - zs[(size_t)c];
    };
    BranchFunctional dzp_fn = [rule, w, d](std::span<const double> path, int, int s, int t, double* out) {
        std::vector<double> z(static_cast<size_t>(w)), zps(static_cast<size_t>(w) * d),
            zpt(static_cast<size_t>(w) * d);
        rule(path, s, z.data(), zps.data());
        rule(path, t, z.data(), zpt.data());
        for (int c = 0; c < w * d; ++c) out[c] = zpt[(size_t)c] - zps[(size_t)c];
    };
    const RoughPath* rpp = &rp;
    BranchFunctional r_fn = [rule, rpp, w, d](std::span<const double> path, int, int s, int t,
                                              double* out) {
        std::vector<double> zs(static_cast<size_t>(w)), zt(static_cast<size_t>(w)),
            zps(static_cast<size_t>(w) * d), zpt(static_cast<size_t>(w) * d),
            dx(static_cast<size_t>(d));
        rule(path, s, zs.data(), zps.data());
        rule(path, t, zt.data(), zpt.data());
        rpp->delta_x(s, t, dx);
        for (int c = 0; c < w; ++c) {
            double acc = zt[(size_t)c] - zs[(size_t)c];
            for (int q = 0; q < d; ++q) acc -= zps[static_cast<size_t>(c) * d + q] * dx[(size_t)q];
            out[c] = acc;
        }
    };

    for (auto [s, t] : pairs) {
        double dt = grid.t[(size_t)t] - grid.t[(size_t)s];
        PairStat ps{s, t, dt, 0, 0};

        ps.value = cond_norm(be, dz_fn, s, t, m, n, w);
        ps.rescaled = ps.value / std::pow(dt, beta);
        rep.dz_table.push_back(ps);
        rep.dz = std::max(rep.dz, ps.rescaled);

        ps.value = cond_norm(be, dzp_fn, s, t, m, n, w * d);
        ps.rescaled = ps.value / std::pow(dt, beta_prime);
        rep.dzp_table.push_back(ps);
        rep.dzp = std::max(rep.dzp, ps.rescaled);

        ps.value = cond_mean_norm(be, r_fn, s, t, n, w);
        ps.rescaled = ps.value / std::pow(dt, beta + beta_prime);
        rep.er_table.push_back(ps);
        rep.er = std::max(rep.er, ps.rescaled);

        ps.value = cond_norm(be, r_fn, s, t, m, n, w);
        ps.rescaled = ps.value / std::pow(dt, beta + beta_prime);
        rep.r_table.push_back(ps);
        rep.r_mn = std::max(rep.r_mn, ps.rescaled);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

struct ScrpDistanceReport {
    double initial = 0.0;  // || |Z_0 - Zbar_0| ^ 1 ||_m
    double dz = 0.0;
    double zp = 0.0;  // sup_t + Hoelder part for Z' - Zbar'
    double er = 0.0;
    double total() const { return initial + dz + zp + er; }
};

// Four-term distance between stochastic controlled rough paths over possibly
// different drivers, with plain L_m norms (n = m) and remainders against each
// path's own driver. Both paths must share the ensemble pairing (common
// randomness); with identical inputs every term vanishes identically.
inline ScrpDistanceReport scrp_distance(const ControlledPath& a, const RoughPath& Xa,
                                        const ControlledPath& b, const RoughPath& Xb, double m,
                                        double kappa, double kappa_prime,
                                        const BranchedEnsemble* be = nullptr,
                                        std::vector<int> spans = {}) {
    if (a.M != b.M || a.width() != b.width() || a.d != b.d || a.grid->N != b.grid->N)
        throw std::invalid_argument("scrp_distance: ensemble mismatch");
    int M = a.M, w = a.width(), d = a.d;
    int N = a.grid->N;
    const auto& t = a.grid->t;
    ScrpDistanceReport rep;

    {
        double acc = 0.0;
        for (int k = 0; k < M; ++k) {
            double diff = 0.0;
            auto za = a.z(k, 0), zb = b.z(k, 0);
            for (int c = 0; c < w; ++c) {
                double dd = za[(size_t)c] - zb[(size_t)c];
                diff += dd * dd;
            }
            acc += std::pow(std::min(std::sqrt(diff), 1.0), m);
        }
        rep.initial = std::pow(acc / M, 1.0 / m);
    }

    PairSet pairs = PairSet::choose(N);
    std::vector<double> va(static_cast<size_t>(w)), vb(static_cast<size_t>(w));
    auto lm_over_pairs = [&](auto&& value_fn, double expo) {
        double best = 0.0;
        pairs.for_each([&](int i, int j, std::int64_t) {
            double acc = 0.0;
            for (int k = 0; k < M; ++k) acc += std::pow(value_fn(k, i, j), m);
            double r = std::pow(acc / M, 1.0 / m) / std::pow(t[(size_t)j] - t[(size_t)i], expo);
            best = std::max(best, r);
        });
        return best;
    };

    rep.dz = lm_over_pairs(
        [&](int k, int i, int j) {
            auto ai = a.z(k, i), aj = a.z(k, j), bi = b.z(k, i), bj = b.z(k, j);
            double acc = 0.0;
            for (int c = 0; c < w; ++c) {
                double dd = (aj[(size_t)c] - ai[(size_t)c]) - (bj[(size_t)c] - bi[(size_t)c]);
                acc += dd * dd;
            }
            return std::sqrt(acc);
        },
        kappa);

    double sup_zp = 0.0;
    for (int i = 0; i <= N; ++i) {
        double acc = 0.0;
        for (int k = 0; k < M; ++k) {
            auto pa = a.zp(k, i), pb = b.zp(k, i);
            double diff = 0.0;
            for (int c = 0; c < w * d; ++c) {
                double dd = pa[(size_t)c] - pb[(size_t)c];
                diff += dd * dd;
            }
            acc += std::pow(std::sqrt(diff), m);
        }
        sup_zp = std::max(sup_zp, std::pow(acc / M, 1.0 / m));
    }
    double dzp = lm_over_pairs(
        [&](int k, int i, int j) {
            auto ai = a.zp(k, i), aj = a.zp(k, j), bi = b.zp(k, i), bj = b.zp(k, j);
            double acc = 0.0;
            for (int c = 0; c < w * d; ++c) {
                double dd = (aj[(size_t)c] - ai[(size_t)c]) - (bj[(size_t)c] - bi[(size_t)c]);
                acc += dd * dd;
            }
            return std::sqrt(acc);
        },
        kappa_prime);
    rep.zp = sup_zp + dzp;

    // ||E.(R - Rbar)||_{kappa+kappa'; m}: conditional expectation by inner
    // branching when available (exact pathwise cancellation at zero
    // perturbation), direct evaluation for deterministic paths.
    RemainderEval ra(a, Xa), rb(b, Xb);
    if (a.deterministic && b.deterministic) {
        rep.er = lm_over_pairs(
            [&](int k, int i, int j) {
                ra.eval(k, i, j, va);
                rb.eval(k, i, j, vb);
                double acc = 0.0;
                for (int c = 0; c < w; ++c) {
                    double dd = va[(size_t)c] - vb[(size_t)c];
                    acc += dd * dd;
                }
                return std::sqrt(acc);
            },
            kappa + kappa_prime);
    } else if (be != nullptr) {
        if (!a.rule || !b.rule)
            throw std::invalid_argument("scrp_distance: conditional term needs regeneration rules");
        if (spans.empty()) spans = default_spans(N);
        auto bpairs = detail::branch_pairs(*be, spans);
        auto rule_a = a.rule, rule_b = b.rule;
        const RoughPath *pXa = &Xa, *pXb = &Xb;
        BranchFunctional rdiff = [rule_a, rule_b, pXa, pXb, w, d](std::span<const double> path, int,
                                                                  int s, int tt, double* out) {
            std::vector<double> zs(static_cast<size_t>(w)), zt(static_cast<size_t>(w)),
                zps(static_cast<size_t>(w) * d), zpt(static_cast<size_t>(w) * d),
                dx(static_cast<size_t>(d));
            auto accumulate = [&](const PointwiseRule& rule, const RoughPath* X, double sign) {
                rule(path, s, zs.data(), zps.data());
                rule(path, tt, zt.data(), zpt.data());
                X->delta_x(s, tt, dx);
                for (int c = 0; c < w; ++c) {
                    double acc = zt[(size_t)c] - zs[(size_t)c];
                    for (int q = 0; q < d; ++q) acc -= zps[static_cast<size_t>(c) * d + q] * dx[(size_t)q];
                    out[c] += sign * acc;
                }
            };
            std::fill(out, out + w, 0.0);
            accumulate(rule_a, pXa, 1.0);
            accumulate(rule_b, pXb, -1.0);
        };
        double best = 0.0;
        for (auto [s, tt] : bpairs) {
            std::vector<double> means(static_cast<size_t>(be->outer_count()) * w);
            cond_mean_profile(*be, rdiff, s, tt, w, means);
            double acc = 0.0;
            for (int i = 0; i < be->outer_count(); ++i)
                acc += std::pow(
                    frobenius({means.data() + static_cast<size_t>(i) * w, static_cast<size_t>(w)}), m);
            double val = std::pow(acc / be->outer_count(), 1.0 / m);
            best = std::max(best,
                            val / std::pow(t[(size_t)tt] - t[(size_t)s], kappa + kappa_prime));
        }
        rep.er = best;
    } else {
        // plain-moment upper bound (Jensen)
        rep.er = lm_over_pairs(
            [&](int k, int i, int j) {
                ra.eval(k, i, j, va);
                rb.eval(k, i, j, vb);
                double acc = 0.0;
                for (int c = 0; c < w; ++c) {
                    double dd = va[(size_t)c] - vb[(size_t)c];
                    acc += dd * dd;
                }
                return std::sqrt(acc);
            },
            kappa + kappa_prime);
    }
    return rep;
}

struct CvfDistanceReport {
    double bk_df = 0.0;   // [[ d(f - fbar) ]]_{beta; m}
    double bk_dfp = 0.0;  // [[ d(f' - fbar') ]]_{beta'; m}
    double bk_ddf = 0.0;  // [[ d(Df - Dfbar) ]]_{beta'; m}
    double bk_er = 0.0;   // [[ E.(R^f - Rbar^fbar) ]]_{beta+beta'; m}
    // companion sup-norm gaps, reported alongside the brackets
    double sup_f = 0.0, sup_fp = 0.0, sup_df = 0.0;
    double brackets() const { return bk_df + bk_dfp + bk_ddf + bk_er; }
};

// Bracket distance between two (deterministic) controlled vector fields over
// probe points; the sup over all of W is replaced by a sup over the probes.
inline CvfDistanceReport cvf_distance(const ControlledVectorField& f, const RoughPath& X,
                                      const ControlledVectorField& fb, const RoughPath& Xb,
                                      double /*m*/, double beta, double beta_prime,
                                      const std::vector<std::vector<double>>& probes) {
    if (probes.empty()) throw std::invalid_argument("cvf_distance: empty probe set");
    if (f.p != fb.p || f.d != fb.d || f.q != fb.q)
        throw std::invalid_argument("cvf_distance: field dimensions differ");
    int p = f.p, d = f.d, q = f.q;
    int wf = p * d, wdf = p * d * q, wfp = p * d * d;
    const auto& t = X.grid->t;
    PairSet pairs = PairSet::choose(X.grid->N);
    CvfDistanceReport rep;

    std::vector<double> fa(static_cast<size_t>(wf)), fa2(static_cast<size_t>(wf)),
        ga(static_cast<size_t>(wf)), ga2(static_cast<size_t>(wf));
    std::vector<double> da(static_cast<size_t>(wdf)), da2(static_cast<size_t>(wdf)),
        db(static_cast<size_t>(wdf)), db2(static_cast<size_t>(wdf));
    std::vector<double> pa(static_cast<size_t>(wfp)), pa2(static_cast<size_t>(wfp)),
        pb(static_cast<size_t>(wfp)), pb2(static_cast<size_t>(wfp));
    std::vector<double> dxa(static_cast<size_t>(d)), dxb(static_cast<size_t>(d));

    for (const auto& y : probes) {
        f.eval_f(t[0], y, fa);
        fb.eval_f(t[0], y, ga);
        f.eval_df(t[0], y, da);
        fb.eval_df(t[0], y, db);
        f.eval_fp(t[0], y, pa);
        fb.eval_fp(t[0], y, pb);
        for (size_t ti = 0; ti < t.size(); ++ti) {
            f.eval_f(t[ti], y, fa);
            fb.eval_f(t[ti], y, ga);
            double g = 0.0;
            for (int c = 0; c < wf; ++c) {
                double dd = fa[(size_t)c] - ga[(size_t)c];
                g += dd * dd;
            }
            rep.sup_f = std::max(rep.sup_f, std::sqrt(g));
            f.eval_df(t[ti], y, da);
            fb.eval_df(t[ti], y, db);
            g = 0.0;
            for (int c = 0; c < wdf; ++c) {
                double dd = da[(size_t)c] - db[(size_t)c];
                g += dd * dd;
            }
            rep.sup_df = std::max(rep.sup_df, std::sqrt(g));
            f.eval_fp(t[ti], y, pa);
            fb.eval_fp(t[ti], y, pb);
            g = 0.0;
            for (int c = 0; c < wfp; ++c) {
                double dd = pa[(size_t)c] - pb[(size_t)c];
                g += dd * dd;
            }
            rep.sup_fp = std::max(rep.sup_fp, std::sqrt(g));
        }

        pairs.for_each([&](int i, int j, std::int64_t) {
            double dt = t[(size_t)j] - t[(size_t)i];
            double ts = t[(size_t)i], tt = t[(size_t)j];
            // [[ d(f - fbar) ]]
            f.eval_f(ts, y, fa);
            f.eval_f(tt, y, fa2);
            fb.eval_f(ts, y, ga);
            fb.eval_f(tt, y, ga2);
            double g = 0.0;
            for (int c = 0; c < wf; ++c) {
                double dd = (fa2[(size_t)c] - fa[(size_t)c]) - (ga2[(size_t)c] - ga[(size_t)c]);
                g += dd * dd;
            }
            rep.bk_df = std::max(rep.bk_df, std::sqrt(g) / std::pow(dt, beta));
            // [[ d(Df - Dfbar) ]]
            f.eval_df(ts, y, da);
            f.eval_df(tt, y, da2);
            fb.eval_df(ts, y, db);
            fb.eval_df(tt, y, db2);
            g = 0.0;
            for (int c = 0; c < wdf; ++c) {
                double dd = (da2[(size_t)c] - da[(size_t)c]) - (db2[(size_t)c] - db[(size_t)c]);
                g += dd * dd;
            }
            rep.bk_ddf = std::max(rep.bk_ddf, std::sqrt(g) / std::pow(dt, beta_prime));
            // [[ d(f' - fbar') ]]
            f.eval_fp(ts, y, pa);
            f.eval_fp(tt, y, pa2);
            fb.eval_fp(ts, y, pb);
            fb.eval_fp(tt, y, pb2);
            g = 0.0;
            for (int c = 0; c < wfp; ++c) {
                double dd = (pa2[(size_t)c] - pa[(size_t)c]) - (pb2[(size_t)c] - pb[(size_t)c]);
                g += dd * dd;
            }
            rep.bk_dfp = std::max(rep.bk_dfp, std::sqrt(g) / std::pow(dt, beta_prime));
            // [[ E.(R^f - Rbar^f) ]] with R^f_{s,t}(y) = f_t(y) - f_s(y) - f'_s(y) dX_{s,t}
            X.delta_x(i, j, dxa);
            Xb.delta_x(i, j, dxb);
            g = 0.0;
            for (int w = 0; w < p; ++w)
                for (int v = 0; v < d; ++v) {
                    double r1 = fa2[(static_cast<size_t>(w) * d + v)] - fa[(static_cast<size_t>(w) * d + v)];
                    for (int a = 0; a < d; ++a)
                        r1 -= pa[(static_cast<size_t>(w) * d + a) * d + v] * dxa[(size_t)a];
                    double r2 = ga2[(static_cast<size_t>(w) * d + v)] - ga[(static_cast<size_t>(w) * d + v)];
                    for (int a = 0; a < d; ++a)
                        r2 -= pb[(static_cast<size_t>(w) * d + a) * d + v] * dxb[(size_t)a];
                    g += (r1 - r2) * (r1 - r2);
                }
            rep.bk_er = std::max(rep.bk_er, std::sqrt(g) / std::pow(dt, beta + beta_prime));
        });
    }
    return rep;
}

}  // namespace rsc
