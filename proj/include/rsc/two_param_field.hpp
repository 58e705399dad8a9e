#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rsc/tensor.hpp"
#include "rsc/time_grid.hpp"

namespace rsc {

// Set of grid pairs (i, j), i < j, over which two-parameter fields are stored
// and seminorm suprema are taken. Dense keeps every pair; beyond the pair
// budget only pairs with j - i a power of two are kept (these are exactly the
// pairs dyadic sewing touches).
class PairSet {
public:
    enum class Kind { dense, dyadic };

    static PairSet dense(int N) { return PairSet(Kind::dense, N); }
    static PairSet dyadic(int N) { return PairSet(Kind::dyadic, N); }

    static PairSet choose(int N, std::int64_t pair_budget = kDefaultBudget) {
        std::int64_t dense_count = static_cast<std::int64_t>(N) * (N + 1) / 2;
        return dense_count <= pair_budget ? dense(N) : dyadic(N);
    }

    static constexpr std::int64_t kDefaultBudget = 1 << 17;

    Kind kind() const { return kind_; }
    int N() const { return N_; }

    std::int64_t count() const { return count_; }

    // slot of pair (i, j) in storage order, or -1 if the pair is not kept
    std::int64_t slot(int i, int j) const {
        if (i < 0 || j > N_ || i >= j) return -1;
        if (kind_ == Kind::dense) {
            std::int64_t ii = i;
            return ii * N_ - ii * (ii - 1) / 2 + (j - i - 1);
        }
        int h = j - i;
        if (!is_power_of_two(h)) return -1;
        int k = 0;
        while ((1 << k) != h) ++k;
        return offsets_[static_cast<size_t>(k)] + i;
    }

    bool contains(int i, int j) const { return slot(i, j) >= 0; }

    template <class F>
    void for_each(F&& f) const {
        if (kind_ == Kind::dense) {
            std::int64_t s = 0;
            for (int i = 0; i < N_; ++i)
                for (int j = i + 1; j <= N_; ++j) f(i, j, s++);
        } else {
            std::int64_t s = 0;
            for (int k = 0; (1 << k) <= N_; ++k) {
                int h = 1 << k;
                for (int i = 0; i + h <= N_; ++i) f(i, i + h, s++);
            }
        }
    }

private:
    PairSet(Kind kind, int N) : kind_(kind), N_(N) {
        if (N < 1) throw std::invalid_argument("PairSet: N must be >= 1");
        if (kind_ == Kind::dense) {
            count_ = static_cast<std::int64_t>(N) * (N + 1) / 2;
        } else {
            count_ = 0;
            for (int k = 0; (1 << k) <= N_; ++k) {
                offsets_.push_back(count_);
                count_ += N_ - (1 << k) + 1;
            }
        }
    }

    Kind kind_;
    int N_;
    std::int64_t count_ = 0;
    std::vector<std::int64_t> offsets_;  // per dyadic level
};

// Tensor-valued function on grid pairs of the simplex. Values on the diagonal
// are identically zero and not stored; evaluation outside s <= t is an error.
class TwoParamField {
public:
    TwoParamField() = default;
    TwoParamField(GridPtr grid, Shape shape, PairSet pairs)
        : grid_(std::move(grid)),
          shape_(shape),
          width_(shape.size()),
          pairs_(pairs),
          v_(static_cast<size_t>(pairs_->count()) * width_, 0.0) {}
    TwoParamField(GridPtr grid, Shape shape, std::int64_t pair_budget = PairSet::kDefaultBudget)
        : TwoParamField(grid, shape, PairSet::choose(grid->N, pair_budget)) {}

    const TimeGrid& grid() const { return *grid_; }
    GridPtr grid_ptr() const { return grid_; }
    const Shape& shape() const { return shape_; }
    int width() const { return width_; }
    const PairSet& pairs() const { return *pairs_; }

    double* slot(int i, int j) {
        std::int64_t s = pairs_->slot(i, j);
        if (s < 0) throw std::out_of_range("TwoParamField: pair not stored");
        return v_.data() + static_cast<size_t>(s) * width_;
    }
    const double* slot(int i, int j) const {
        std::int64_t s = pairs_->slot(i, j);
        if (s < 0) throw std::out_of_range("TwoParamField: pair not stored");
        return v_.data() + static_cast<size_t>(s) * width_;
    }
    std::span<double> span_at(int i, int j) { return {slot(i, j), static_cast<size_t>(width_)}; }
    std::span<const double> span_at(int i, int j) const {
        return {slot(i, j), static_cast<size_t>(width_)};
    }

    // evaluation with simplex semantics: diagonal is zero, s > t is an error
    void eval(int i, int j, std::span<double> out) const {
        if (i > j) throw std::invalid_argument("TwoParamField: evaluation requires s <= t");
        if (i == j) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        const double* p = slot(i, j);
        std::copy(p, p + width_, out.begin());
    }

    Tensor at(int i, int j) const {
        Tensor t(shape_);
        eval(i, j, t.values());
        return t;
    }

    std::vector<double>& raw() { return v_; }
    const std::vector<double>& raw() const { return v_; }

    TwoParamField& operator+=(const TwoParamField& o) {
        check_compatible(o);
        for (size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
        return *this;
    }
    TwoParamField& operator-=(const TwoParamField& o) {
        check_compatible(o);
        for (size_t k = 0; k < v_.size(); ++k) v_[k] -= o.v_[k];
        return *this;
    }
    TwoParamField& operator*=(double c) {
        for (double& x : v_) x *= c;
        return *this;
    }
    friend TwoParamField operator+(TwoParamField a, const TwoParamField& b) { return a += b; }
    friend TwoParamField operator-(TwoParamField a, const TwoParamField& b) { return a -= b; }
    friend TwoParamField operator*(double c, TwoParamField a) { return a *= c; }

private:
    void check_compatible(const TwoParamField& o) const {
        if (grid_->N != o.grid_->N || !(shape_ == o.shape_) || pairs_->kind() != o.pairs_->kind())
            throw std::invalid_argument("TwoParamField: incompatible operands");
    }

    GridPtr grid_;
    Shape shape_;
    int width_ = 1;
    std::optional<PairSet> pairs_;
    std::vector<double> v_;
};

// increment field of a one-parameter path: (delta Y)_{s,t} = Y_t - Y_s
inline TwoParamField delta(GridPtr grid, std::span<const double> path, Shape shape,
                           std::int64_t pair_budget = PairSet::kDefaultBudget) {
    int w = shape.size();
    if (path.size() != static_cast<size_t>(grid->points()) * w)
        throw std::invalid_argument("delta: path must be sampled on the full grid");
    TwoParamField f(grid, shape, pair_budget);
    f.pairs().for_each([&](int i, int j, std::int64_t s) {
        double* out = f.raw().data() + static_cast<size_t>(s) * w;
        const double* yi = path.data() + static_cast<size_t>(i) * w;
        const double* yj = path.data() + static_cast<size_t>(j) * w;
        for (int k = 0; k < w; ++k) out[k] = yj[k] - yi[k];
    });
    return f;
}

// Discrete generalized alpha-Hoelder seminorm: sup over stored pairs s < t of
// |A_{s,t}| / (t-s)^alpha. Degenerate pairs s = t never enter. The discrete
// supremum is a lower bound for the continuum one; no extrapolation is done.
inline double holder_seminorm(const TwoParamField& A, double alpha,
                              std::optional<std::pair<double, double>> window = std::nullopt) {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("holder_seminorm: alpha must be in (0, 1]");
    const auto& t = A.grid().t;
    double c = window ? window->first : t.front();
    double d = window ? window->second : t.back();
    int w = A.width();
    double best = -1.0;
    A.pairs().for_each([&](int i, int j, std::int64_t s) {
        double ts = t[static_cast<size_t>(i)], tt = t[static_cast<size_t>(j)];
        if (ts < c - 1e-14 || tt > d + 1e-14) return;
        const double* p = A.raw().data() + static_cast<size_t>(s) * w;
        double nrm = frobenius({p, static_cast<size_t>(w)});
        double r = nrm / std::pow(tt - ts, alpha);
        if (r > best) best = r;
    });
    if (best < 0.0) throw std::invalid_argument("holder_seminorm: window contains no grid pair");
    return best;
}

// Lazy second increment (delta A)_{s,u,t} = A_{s,t} - A_{s,u} - A_{u,t}.
// Vanishes identically iff A is the increment field of a path.
class ThreeParamEval {
public:
    explicit ThreeParamEval(const TwoParamField& A) : A_(&A) {}

    void eval(int s, int u, int t, std::span<double> out) const {
        if (!(s <= u && u <= t)) throw std::invalid_argument("ThreeParamEval: need s <= u <= t");
        int w = A_->width();
        std::vector<double> tmp(static_cast<size_t>(w));
        A_->eval(s, t, out);
        A_->eval(s, u, tmp);
        for (int k = 0; k < w; ++k) out[static_cast<size_t>(k)] -= tmp[static_cast<size_t>(k)];
        A_->eval(u, t, tmp);
        for (int k = 0; k < w; ++k) out[static_cast<size_t>(k)] -= tmp[static_cast<size_t>(k)];
    }

    Tensor at(int s, int u, int t) const {
        Tensor out(A_->shape());
        eval(s, u, t, out.values());
        return out;
    }

    // max Frobenius norm over dyadic midpoint triples (i, i+h, i+2h)
    double max_defect() const {
        int N = A_->grid().N;
        int w = A_->width();
        std::vector<double> buf(static_cast<size_t>(w));
        double best = 0.0;
        for (int h = 1; 2 * h <= N; h *= 2) {
            for (int i = 0; i + 2 * h <= N; ++i) {
                if (!A_->pairs().contains(i, i + 2 * h)) continue;
                eval(i, i + h, i + 2 * h, buf);
                best = std::max(best, frobenius(buf));
            }
        }
        return best;
    }

private:
    const TwoParamField* A_;
};

inline ThreeParamEval second_delta(const TwoParamField& A) { return ThreeParamEval(A); }

}  // namespace rsc
