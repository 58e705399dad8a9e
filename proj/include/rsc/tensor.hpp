#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rsc {

// Shape of a dense tensor value, rank <= 3. All norms in this library are
// Frobenius, uniformly across ranks.
struct Shape {
    int rank = 0;
    std::array<int, 3> extent{1, 1, 1};

    static Shape scalar() { return Shape{0, {1, 1, 1}}; }
    static Shape vec(int p) { return Shape{1, {p, 1, 1}}; }
    static Shape mat(int r, int c) { return Shape{2, {r, c, 1}}; }
    static Shape ten3(int a, int b, int c) { return Shape{3, {a, b, c}}; }

    int size() const { return extent[0] * extent[1] * extent[2]; }
    bool operator==(const Shape&) const = default;

    std::string str() const {
        if (rank == 0) return "scalar";
        std::string s = std::to_string(extent[0]);
        for (int k = 1; k < rank; ++k) s += "x" + std::to_string(extent[k]);
        return s;
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s) : shape_(s), v_(static_cast<size_t>(s.size()), 0.0) {}
    Tensor(Shape s, std::vector<double> v) : shape_(s), v_(std::move(v)) {
        if (v_.size() != static_cast<size_t>(s.size()))
            throw std::invalid_argument("Tensor: data size does not match shape " + s.str());
    }

    static Tensor scalar(double x) {
        Tensor t(Shape::scalar());
        t.v_[0] = x;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int size() const { return static_cast<int>(v_.size()); }
    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }
    std::span<double> values() { return v_; }
    std::span<const double> values() const { return v_; }

    double& operator[](int i) { return v_[static_cast<size_t>(i)]; }
    double operator[](int i) const { return v_[static_cast<size_t>(i)]; }
    double& operator()(int i, int j) { return v_[static_cast<size_t>(i * shape_.extent[1] + j)]; }
    double operator()(int i, int j) const { return v_[static_cast<size_t>(i * shape_.extent[1] + j)]; }
    double& operator()(int i, int j, int k) {
        return v_[static_cast<size_t>((i * shape_.extent[1] + j) * shape_.extent[2] + k)];
    }
    double operator()(int i, int j, int k) const {
        return v_[static_cast<size_t>((i * shape_.extent[1] + j) * shape_.extent[2] + k)];
    }

    Tensor& operator+=(const Tensor& o) {
        check_same(o);
        for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        check_same(o);
        for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Tensor& operator*=(double c) {
        for (double& x : v_) x *= c;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(double c, Tensor a) { return a *= c; }

    double norm() const { return frobenius_norm(v_); }

private:
    void check_same(const Tensor& o) const {
        if (!(shape_ == o.shape_))
            throw std::invalid_argument("Tensor: shape mismatch " + shape_.str() + " vs " + o.shape_.str());
    }

    Shape shape_{};
    std::vector<double> v_;

public:
    static double frobenius_norm(std::span<const double> v) {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }
};

inline double frobenius(std::span<const double> v) { return Tensor::frobenius_norm(v); }

// outer product of two vectors, a (x) b, row index from a
inline void outer(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    size_t n = a.size(), m = b.size();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] = a[i] * b[j];
}

inline void outer_add(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    size_t n = a.size(), m = b.size();
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) out[i * m + j] += a[i] * b[j];
}

// y += M v with M stored row-major (rows x cols)
inline void mat_vec_add(std::span<const double> M, std::span<const double> v, std::span<double> y) {
    size_t rows = y.size(), cols = v.size();
    for (size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) s += M[i * cols + j] * v[j];
        y[i] += s;
    }
}

// y += G : W, with G rank-3 (p x d x d) and W a d x d matrix; contraction over
// the two trailing indices.
inline void ten3_mat_add(std::span<const double> G, std::span<const double> W, int p, int d,
                         std::span<double> y) {
    for (int w = 0; w < p; ++w) {
        double s = 0.0;
        const double* g = G.data() + static_cast<size_t>(w) * d * d;
        for (int k = 0; k < d * d; ++k) s += g[k] * W[static_cast<size_t>(k)];
        y[static_cast<size_t>(w)] += s;
    }
}

// symmetric part of a square matrix
inline Tensor sym(const Tensor& m) {
    if (m.shape().rank != 2 || m.shape().extent[0] != m.shape().extent[1])
        throw std::invalid_argument("sym: square matrix required");
    int d = m.shape().extent[0];
    Tensor out(m.shape());
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = 0.5 * (m(i, j) + m(j, i));
    return out;
}

inline Tensor antisym(const Tensor& m) {
    if (m.shape().rank != 2 || m.shape().extent[0] != m.shape().extent[1])
        throw std::invalid_argument("antisym: square matrix required");
    int d = m.shape().extent[0];
    Tensor out(m.shape());
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) out(i, j) = 0.5 * (m(i, j) - m(j, i));
    return out;
}

inline Tensor identity(int d) {
    Tensor out(Shape::mat(d, d));
    for (int i = 0; i < d; ++i) out(i, i) = 1.0;
    return out;
}

}  // namespace rsc
