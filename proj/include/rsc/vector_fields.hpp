#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rsc/tensor.hpp"

namespace rsc {

using FieldEval = std::function<void(double t, std::span<const double> y, double* out)>;

// Controlled vector field (f, f') with spatial derivative Df.
//
// Index conventions, all row-major:
//   f  : (p, d)       f[w][v]
//   Df : (p, d, q)    Df[w][v][u] = d f^{w,v} / d y^u
//   f' : (p, d, d)    f'[w][a][b], contracted against XX[a][b]
// q is the state dimension, d the rough-driver dimension, p the output rows.
struct ControlledVectorField {
    int q = 1, p = 1, d = 1;
    double gamma = 3.0;
    FieldEval f;
    FieldEval df;
    FieldEval fp;   // null means f' = 0
    FieldEval d2f;  // optional, (p, d, q, q) flattened

    // declared bounds, spot-checked on probe sets rather than certified
    double sup_bound = std::numeric_limits<double>::infinity();
    double lip_bound = std::numeric_limits<double>::infinity();

    bool has_df() const { return static_cast<bool>(df); }

    void eval_f(double t, std::span<const double> y, std::span<double> out) const {
        f(t, y, out.data());
    }
    void eval_df(double t, std::span<const double> y, std::span<double> out) const {
        if (!df) throw std::runtime_error("ControlledVectorField: Df evaluator missing");
        df(t, y, out.data());
    }
    void eval_fp(double t, std::span<const double> y, std::span<double> out) const {
        if (fp)
            fp(t, y, out.data());
        else
            std::fill(out.begin(), out.end(), 0.0);
    }

    // G[w][a][b] = sum_u Df[w][b][u] f[u][a] + f'[w][a][b]; the coefficient of
    // XX_{s,t} in the Davie expansion. Requires p == q.
    void davie_tensor(double t, std::span<const double> y, std::span<double> out) const {
        if (p != q) throw std::invalid_argument("davie_tensor: field must map state to L(V, state)");
        std::vector<double> fv(static_cast<size_t>(p) * d), dfv(static_cast<size_t>(p) * d * q);
        eval_f(t, y, fv);
        eval_df(t, y, dfv);
        eval_fp(t, y, out);
        for (int w = 0; w < p; ++w)
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) {
                    double s = 0.0;
                    for (int u = 0; u < q; ++u)
                        s += dfv[(static_cast<size_t>(w) * d + b) * q + u] * fv[static_cast<size_t>(u) * d + a];
                    out[(static_cast<size_t>(w) * d + a) * d + b] += s;
                }
    }
};

// Random bounded coefficient field (drift b or diffusion sigma). `sample`
// carries the adaptedness: evaluators may depend on the sample's own noise
// path up to t, a contract that cannot be verified mechanically.
struct CoeffField {
    int q = 1;     // state dimension
    int rows = 1;  // output rows (= q for drift)
    int cols = 1;  // 1 for drift, Brownian dimension for sigma
    std::function<void(int sample, double t, std::span<const double> y, double* out)> eval;
    double sup_bound = std::numeric_limits<double>::infinity();
    double lip_bound = std::numeric_limits<double>::infinity();

    explicit operator bool() const { return static_cast<bool>(eval); }
};

using Params = std::map<std::string, double>;

inline double param(const Params& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

// Built-in scalar/small-dimension field registry; experiment configs refer to
// these by name, no runtime code loading.
inline ControlledVectorField make_vector_field(const std::string& name, const Params& prm = {}) {
    ControlledVectorField v;
    if (name == "linear") {
        double lam = param(prm, "lambda", 1.0);
        v.q = v.p = v.d = 1;
        v.gamma = 3.0;
        v.f = [lam](double, std::span<const double> y, double* out) { out[0] = lam * y[0]; };
        v.df = [lam](double, std::span<const double>, double* out) { out[0] = lam; };
        v.lip_bound = std::abs(lam);
    } else if (name == "constant") {
        double c = param(prm, "c", 1.0);
        v.q = v.p = v.d = 1;
        v.f = [c](double, std::span<const double>, double* out) { out[0] = c; };
        v.df = [](double, std::span<const double>, double* out) { out[0] = 0.0; };
        v.sup_bound = std::abs(c);
        v.lip_bound = 0.0;
    } else if (name == "identity") {
        v.q = v.p = 1;
        v.d = 1;
        v.f = [](double, std::span<const double> y, double* out) { out[0] = y[0]; };
        v.df = [](double, std::span<const double>, double* out) { out[0] = 1.0; };
        v.lip_bound = 1.0;
    } else if (name == "affine") {
        double a = param(prm, "a", 1.0), b = param(prm, "b", 0.0);
        v.q = v.p = v.d = 1;
        v.f = [a, b](double, std::span<const double> y, double* out) { out[0] = a * y[0] + b; };
        v.df = [a](double, std::span<const double>, double* out) { out[0] = a; };
        v.lip_bound = std::abs(a);
    } else if (name == "sin") {
        double a = param(prm, "a", 1.0), b = param(prm, "b", 1.0);
        v.q = v.p = v.d = 1;
        v.f = [a, b](double, std::span<const double> y, double* out) { out[0] = a * std::sin(b * y[0]); };
        v.df = [a, b](double, std::span<const double> y, double* out) { out[0] = a * b * std::cos(b * y[0]); };
        v.d2f = [a, b](double, std::span<const double> y, double* out) {
            out[0] = -a * b * b * std::sin(b * y[0]);
        };
        v.sup_bound = std::abs(a);
        v.lip_bound = std::abs(a * b);
    } else if (name == "tanh_poly") {
        // tanh-clamped polynomial a * tanh((c0 + c1 y + c2 y^2) / a)
        double a = param(prm, "a", 1.0);
        double c0 = param(prm, "c0", 0.0), c1 = param(prm, "c1", 1.0), c2 = param(prm, "c2", 0.0);
        v.q = v.p = v.d = 1;
        v.f = [=](double, std::span<const double> y, double* out) {
            out[0] = a * std::tanh((c0 + c1 * y[0] + c2 * y[0] * y[0]) / a);
        };
        v.df = [=](double, std::span<const double> y, double* out) {
            double u = (c0 + c1 * y[0] + c2 * y[0] * y[0]) / a;
            double th = std::tanh(u);
            out[0] = (1.0 - th * th) * (c1 + 2.0 * c2 * y[0]);
        };
        v.sup_bound = std::abs(a);
    } else if (name == "rotation") {
        // f(y) = theta (-y2, y1)^T, planar state driven by a scalar rough path
        double theta = param(prm, "theta", 1.0);
        v.q = v.p = 2;
        v.d = 1;
        v.f = [theta](double, std::span<const double> y, double* out) {
            out[0] = -theta * y[1];
            out[1] = theta * y[0];
        };
        v.df = [theta](double, std::span<const double>, double* out) {
            // Df[w][0][u]
            out[0] = 0.0;
            out[1] = -theta;
            out[2] = theta;
            out[3] = 0.0;
        };
        v.lip_bound = std::abs(theta);
    } else {
        throw std::invalid_argument("make_vector_field: unknown field '" + name + "'");
    }
    return v;
}

inline CoeffField make_coeff(const std::string& name, const Params& prm = {}, int q = 1, int cols = 1) {
    CoeffField c;
    c.q = q;
    c.rows = q;
    c.cols = cols;
    // Scalar profile g applied per state coordinate: drift rows get g(y_r),
    // diffusion matrices get g(y_r) on the diagonal.
    auto diagonal = [q, cols](std::function<double(double)> g) {
        return [g, q, cols](int, double, std::span<const double> y, double* out) {
            std::fill(out, out + q * cols, 0.0);
            if (cols == 1)
                for (int r = 0; r < q; ++r) out[r] = g(y[(size_t)r]);
            else
                for (int r = 0; r < std::min(q, cols); ++r) out[r * cols + r] = g(y[(size_t)r]);
        };
    };
    if (name == "zero") {
        c.eval = nullptr;
        c.sup_bound = 0.0;
        c.lip_bound = 0.0;
    } else if (name == "constant") {
        double a = param(prm, "a", 1.0);
        c.eval = diagonal([a](double) { return a; });
        c.sup_bound = std::abs(a);
        c.lip_bound = 0.0;
    } else if (name == "linear") {
        double a = param(prm, "a", 1.0);
        c.eval = diagonal([a](double y) { return a * y; });
        c.lip_bound = std::abs(a);
    } else if (name == "quadratic") {
        double a = param(prm, "a", 1.0);
        c.eval = diagonal([a](double y) { return a * y * y; });
    } else if (name == "sin") {
        double a = param(prm, "a", 1.0), b = param(prm, "b", 1.0);
        c.eval = diagonal([a, b](double y) { return a * std::sin(b * y); });
        c.sup_bound = std::abs(a);
        c.lip_bound = std::abs(a * b);
    } else {
        throw std::invalid_argument("make_coeff: unknown coefficient '" + name + "'");
    }
    return c;
}

// Multiply a time-homogeneous field by the smooth modulation
// g(t) = 1 + amp * sin(freq * t). The pair (g f, 0) remains a controlled
// vector field: the remainder gains only a Lipschitz-in-time part.
inline ControlledVectorField with_time_modulation(const ControlledVectorField& v, double amp,
                                                  double freq) {
    ControlledVectorField out = v;
    auto g = [amp, freq](double t) { return 1.0 + amp * std::sin(freq * t); };
    int nf = v.p * v.d, ndf = v.p * v.d * v.q;
    auto base_f = v.f;
    out.f = [base_f, g, nf](double t, std::span<const double> y, double* dst) {
        base_f(t, y, dst);
        double s = g(t);
        for (int k = 0; k < nf; ++k) dst[k] *= s;
    };
    if (v.df) {
        auto base_df = v.df;
        out.df = [base_df, g, ndf](double t, std::span<const double> y, double* dst) {
            base_df(t, y, dst);
            double s = g(t);
            for (int k = 0; k < ndf; ++k) dst[k] *= s;
        };
    }
    out.sup_bound = v.sup_bound * (1.0 + std::abs(amp));
    out.lip_bound = v.lip_bound * (1.0 + std::abs(amp));
    return out;
}

// ---------------------------------------------------------------------------
// Smooth radial clamp for locally regular fields: c(y) = y for |y| <= K, and
// |c(y)| saturates at K + K/10 beyond, with a C^2 (indeed C^infinity)
// transition of width K/10.
// ---------------------------------------------------------------------------
struct ClampMap {
    double radius;
    double width;  // = radius / 10

    explicit ClampMap(double K) : radius(K), width(K / 10.0) {
        if (!(K > 0)) throw std::invalid_argument("ClampMap: radius must be positive");
    }

    double psi(double r) const { return r <= radius ? r : radius + width * std::tanh((r - radius) / width); }
    double psi_prime(double r) const {
        if (r <= radius) return 1.0;
        double th = std::tanh((r - radius) / width);
        return 1.0 - th * th;
    }

    void apply(std::span<const double> y, std::span<double> cy) const {
        double r = frobenius(y);
        if (r <= radius) {
            std::copy(y.begin(), y.end(), cy.begin());
            return;
        }
        double s = psi(r) / r;
        for (size_t k = 0; k < y.size(); ++k) cy[k] = s * y[k];
    }

    // Jacobian Dc(y) = psi'(r) P + (psi(r)/r)(I - P), P the radial projector
    void jacobian(std::span<const double> y, std::span<double> J, int q) const {
        double r = frobenius(y);
        if (r <= radius) {
            for (int i = 0; i < q; ++i)
                for (int j = 0; j < q; ++j) J[static_cast<size_t>(i) * q + j] = (i == j) ? 1.0 : 0.0;
            return;
        }
        double pp = psi_prime(r), pr = psi(r) / r;
        for (int i = 0; i < q; ++i)
            for (int j = 0; j < q; ++j) {
                double proj = y[(size_t)i] * y[(size_t)j] / (r * r);
                J[static_cast<size_t>(i) * q + j] = pp * proj + pr * ((i == j ? 1.0 : 0.0) - proj);
            }
    }
};

// Truncation f^K of a locally regular controlled vector field: evaluators are
// composed with the clamp, Df by the chain rule. f^K = f on |y| <= K.
inline ControlledVectorField clamp_vector_field(const ControlledVectorField& v, double K) {
    ControlledVectorField out = v;
    ClampMap c(K);
    int q = v.q, p = v.p, d = v.d;
    auto base_f = v.f;
    out.f = [c, base_f, q](double t, std::span<const double> y, double* dst) {
        std::vector<double> cy(static_cast<size_t>(q));
        c.apply(y, cy);
        base_f(t, cy, dst);
    };
    if (v.df) {
        auto base_df = v.df;
        out.df = [c, base_df, q, p, d](double t, std::span<const double> y, double* dst) {
            std::vector<double> cy(static_cast<size_t>(q)), J(static_cast<size_t>(q) * q),
                raw(static_cast<size_t>(p) * d * q);
            c.apply(y, cy);
            c.jacobian(y, J, q);
            base_df(t, cy, raw.data());
            // Df^K[w][v][u] = sum_u' Df[w][v][u'] J[u'][u]
            for (int w = 0; w < p; ++w)
                for (int vv = 0; vv < d; ++vv)
                    for (int u = 0; u < q; ++u) {
                        double s = 0.0;
                        for (int u2 = 0; u2 < q; ++u2)
                            s += raw[(static_cast<size_t>(w) * d + vv) * q + u2] * J[static_cast<size_t>(u2) * q + u];
                        dst[(static_cast<size_t>(w) * d + vv) * q + u] = s;
                    }
        };
    }
    if (v.fp) {
        auto base_fp = v.fp;
        out.fp = [c, base_fp, q](double t, std::span<const double> y, double* dst) {
            std::vector<double> cy(static_cast<size_t>(q));
            c.apply(y, cy);
            base_fp(t, cy, dst);
        };
    }
    out.sup_bound = std::min(out.sup_bound, std::numeric_limits<double>::infinity());
    return out;
}

inline CoeffField clamp_coeff(const CoeffField& f, double K) {
    if (!f) return f;
    CoeffField out = f;
    ClampMap c(K);
    int q = f.q;
    auto base = f.eval;
    out.eval = [c, base, q](int sample, double t, std::span<const double> y, double* dst) {
        std::vector<double> cy(static_cast<size_t>(q));
        c.apply(y, cy);
        base(sample, t, cy, dst);
    };
    return out;
}

// Spot-check declared bounds over a probe set; returns measured (sup, lip).
inline std::pair<double, double> probe_bounds(const ControlledVectorField& v, double t,
                                              const std::vector<std::vector<double>>& probes) {
    if (probes.empty()) throw std::invalid_argument("probe_bounds: empty probe set");
    double sup = 0.0, lip = 0.0;
    std::vector<double> fa(static_cast<size_t>(v.p) * v.d), fb(static_cast<size_t>(v.p) * v.d);
    for (size_t i = 0; i < probes.size(); ++i) {
        v.eval_f(t, probes[i], fa);
        sup = std::max(sup, frobenius(fa));
        for (size_t j = i + 1; j < probes.size(); ++j) {
            v.eval_f(t, probes[j], fb);
            double dy = 0.0;
            for (size_t k = 0; k < probes[i].size(); ++k) {
                double dd = probes[i][k] - probes[j][k];
                dy += dd * dd;
            }
            dy = std::sqrt(dy);
            if (dy < 1e-12) continue;
            double dfv = 0.0;
            for (size_t k = 0; k < fa.size(); ++k) {
                double dd = fa[k] - fb[k];
                dfv += dd * dd;
            }
            lip = std::max(lip, std::sqrt(dfv) / dy);
        }
    }
    return {sup, lip};
}

// uniform lattice over [lo, hi]^q used as a default probe set
inline std::vector<std::vector<double>> probe_lattice(int q, double lo, double hi, int per_axis) {
    if (per_axis < 2) throw std::invalid_argument("probe_lattice: need at least 2 points per axis");
    std::vector<std::vector<double>> out;
    std::vector<int> idx(static_cast<size_t>(q), 0);
    while (true) {
        std::vector<double> y(static_cast<size_t>(q));
        for (int k = 0; k < q; ++k)
            y[(size_t)k] = lo + (hi - lo) * idx[(size_t)k] / (per_axis - 1);
        out.push_back(std::move(y));
        int k = 0;
        while (k < q && ++idx[(size_t)k] == per_axis) idx[(size_t)k++] = 0;
        if (k == q) break;
    }
    return out;
}

}  // namespace rsc
