#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "rsc/rough_path.hpp"

using namespace rsc;

namespace {

SampledPath parabola_path(int n_fine) {
    SampledPath p;
    p.grid = make_grid_ptr(1.0, n_fine, GridKind::dyadic);
    p.dim = 2;
    p.v.resize((size_t)(n_fine + 1) * 2);
    for (int i = 0; i <= n_fine; ++i) {
        double t = p.grid->t[(size_t)i];
        p.v[(size_t)i * 2] = t;
        p.v[(size_t)i * 2 + 1] = t * t;
    }
    return p;
}

double mean(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

double stderr_of(const std::vector<double>& v) {
    double m = mean(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / ((double)v.size() - 1) / (double)v.size());
}

}  // namespace

TEST_CASE("lift_smooth: iterated integrals of (t, t^2)", "[roughpath]") {
    auto rp = lift_smooth(parabola_path(4 * 256), 256);
    REQUIRE(rp.grid->N == 4);
    auto xx = rp.xx_at(0, 4);
    // closed-form oracle: [[1/2, 2/3], [1/3, 1/2]]
    CHECK(xx(0, 0) == Catch::Approx(0.5).margin(1e-6));
    CHECK(xx(0, 1) == Catch::Approx(2.0 / 3.0).margin(1e-6));
    CHECK(xx(1, 0) == Catch::Approx(1.0 / 3.0).margin(1e-6));
    CHECK(xx(1, 1) == Catch::Approx(0.5).margin(1e-6));

    CHECK(chen_defect(rp) <= 1e-10);
    CHECK(symmetry_defect(rp) <= 1e-10);
    CHECK_THROWS_AS(lift_smooth(parabola_path(16), 0), std::invalid_argument);
}

TEST_CASE("lift_smooth: constant path lifts to zero", "[roughpath]") {
    SampledPath p;
    p.grid = make_grid_ptr(1.0, 64, GridKind::dyadic);
    p.dim = 1;
    p.v.assign(65, 2.5);
    auto rp = lift_smooth(p, 8);
    for (double x : rp.XX.raw()) CHECK(x == 0.0);
}

TEST_CASE("chen_defect detects a constant shift", "[roughpath]") {
    auto rp = lift_smooth(parabola_path(64 * 4), 4);
    double c = 0.37;
    for (size_t k = 0; k < rp.XX.raw().size(); k += 4) rp.XX.raw()[k] += c;
    CHECK(chen_defect(rp) == Catch::Approx(c).epsilon(1e-9));
}

TEST_CASE("lift_brownian: exact diagonal and ensemble means", "[roughpath]") {
    auto grid = make_grid_ptr(1.0, 8, GridKind::dyadic);
    int M = 4000;

    auto ito = lift_brownian(1, grid, M, 42, Calculus::ito, 16);
    CHECK(chen_defect(ito) <= 1e-12);
    std::vector<double> xx01(static_cast<size_t>(M));
    for (int k = 0; k < M; ++k) {
        const auto& s = ito.sample[(size_t)k];
        // exact Ito diagonal on every unit cell
        for (int i = 0; i < 8; ++i) {
            double db = s.X[(size_t)i + 1] - s.X[(size_t)i];
            CHECK(s.xx_at(i, i + 1)(0, 0) ==
                  Catch::Approx(0.5 * (db * db - grid->dt(i))).margin(1e-14));
        }
        xx01[(size_t)k] = s.xx_at(0, 8)(0, 0);
    }
    CHECK(std::abs(mean(xx01)) <= 3.0 * stderr_of(xx01));

    auto strat = lift_brownian(1, grid, M, 43, Calculus::stratonovich, 16);
    CHECK(strat.flavor == Flavor::geometric);
    CHECK(symmetry_defect(strat) <= 1e-12);
    for (int k = 0; k < M; ++k) xx01[(size_t)k] = strat.sample[(size_t)k].xx_at(0, 8)(0, 0);
    CHECK(mean(xx01) == Catch::Approx(0.5).margin(3.0 * stderr_of(xx01)));

    CHECK_THROWS_AS(lift_brownian(0, grid, 1, 1), std::invalid_argument);
    CHECK_THROWS_AS(lift_brownian(1, grid, 1, 1, Calculus::ito, 0), std::invalid_argument);
}

TEST_CASE("lift_brownian: Levy area mean is zero", "[roughpath]") {
    auto grid = make_grid_ptr(1.0, 4, GridKind::dyadic);
    int M = 4000;
    auto rrp = lift_brownian(2, grid, M, 7, Calculus::ito, 32);
    std::vector<double> area(static_cast<size_t>(M));
    for (int k = 0; k < M; ++k) {
        auto xx = rrp.sample[(size_t)k].xx_at(0, 4);
        area[(size_t)k] = 0.5 * (xx(0, 1) - xx(1, 0));
    }
    CHECK(std::abs(mean(area)) <= 3.0 * stderr_of(area));
}

TEST_CASE("ito lift symmetric-part identity holds in mean", "[roughpath]") {
    auto grid = make_grid_ptr(1.0, 4, GridKind::dyadic);
    int M = 2000;
    auto rrp = lift_brownian(2, grid, M, 99, Calculus::ito, 16);
    // mean of Sym(XX_{0,N}) + (1/2) T Id - (1/2) mean(dB (x) dB) -> 0
    Tensor acc(Shape::mat(2, 2));
    for (int k = 0; k < M; ++k) {
        const auto& s = rrp.sample[(size_t)k];
        auto xx = s.xx_at(0, 4);
        auto dx = s.delta_x(0, 4);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                acc(a, b) += 0.5 * (xx(a, b) + xx(b, a)) - 0.5 * dx[a] * dx[b];
        acc(0, 0) += 0.5;
        acc(1, 1) += 0.5;
    }
    acc *= 1.0 / M;
    CHECK(acc.norm() <= 5e-2);
}

TEST_CASE("lift_fbm: law checks and regularity", "[roughpath]") {
    CHECK_THROWS_AS(lift_fbm(0.3, 1, make_grid_ptr(1.0, 8, GridKind::dyadic), 1, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS(lift_fbm(1.0, 1, make_grid_ptr(1.0, 8, GridKind::dyadic), 1, 1),
                    std::invalid_argument);

    auto grid = make_grid_ptr(1.0, 32, GridKind::dyadic);
    int M = 1500;
    auto half = lift_fbm(0.5, 1, grid, M, 5, 4, 0.4);
    CHECK(chen_defect(half) <= 1e-12);
    std::vector<double> x1(static_cast<size_t>(M));
    for (int k = 0; k < M; ++k) x1[(size_t)k] = half.sample[(size_t)k].X[32];
    // var X_1 = 1 for H = 1/2 (fBm(1/2) = BM)
    double m = mean(x1), v = 0;
    for (double x : x1) v += (x - m) * (x - m);
    v /= (double)M - 1;
    std::vector<double> sq(static_cast<size_t>(M));
    for (int k = 0; k < M; ++k) sq[(size_t)k] = x1[(size_t)k] * x1[(size_t)k];
    CHECK(v == Catch::Approx(1.0).margin(3.0 * stderr_of(sq)));

    // H = 0.4: |dX|_{0.35} finite and refinement-stable in law
    auto a = lift_fbm(0.4, 1, make_grid_ptr(1.0, 128, GridKind::dyadic), 24, 11, 2, 0.35);
    auto b = lift_fbm(0.4, 1, make_grid_ptr(1.0, 256, GridKind::dyadic), 24, 11, 2, 0.35);
    double na = 0, nb = 0;
    for (int k = 0; k < 24; ++k) {
        na += holder_seminorm(a.sample[(size_t)k].delta_field(), 0.35) / 24.0;
        nb += holder_seminorm(b.sample[(size_t)k].delta_field(), 0.35) / 24.0;
    }
    CHECK(na / nb >= 0.8);
    CHECK(na / nb <= 1.25);
}

TEST_CASE("rough_distance: identity, scaling, triangle", "[roughpath]") {
    auto rp = lift_smooth(parabola_path(64 * 4), 4, 0.5);
    CHECK(rough_distance(rp, rp, 0.5, 0.5) == 0.0);

    double eps = 0.01;
    RoughPath scaled = rp;
    for (auto& x : scaled.X) x *= 1.0 + eps;
    for (auto& x : scaled.XX.raw()) x *= (1.0 + eps) * (1.0 + eps);
    double dx_norm = holder_seminorm(rp.delta_field(), 0.5);
    double xx_norm = holder_seminorm(rp.XX, 1.0);
    CHECK(rough_distance(rp, scaled, 0.5, 0.5) ==
          Catch::Approx(eps * dx_norm + (2 * eps + eps * eps) * xx_norm).epsilon(1e-10));

    auto grid = make_grid_ptr(1.0, 16, GridKind::dyadic);
    auto e = lift_brownian(1, grid, 3, 21, Calculus::ito, 8);
    const auto &A = e.sample[0], &B = e.sample[1], &C = e.sample[2];
    CHECK(rough_distance(A, C, 0.45, 0.45) <=
          rough_distance(A, B, 0.45, 0.45) + rough_distance(B, C, 0.45, 0.45) + 1e-12);

    auto other = lift_brownian(1, make_grid_ptr(1.0, 8, GridKind::dyadic), 1, 2);
    CHECK_THROWS_AS(rough_distance(A, other.sample[0], 0.45, 0.45), std::invalid_argument);
}

TEST_CASE("stop_rough_path: endpoints, monotonicity, idempotence", "[roughpath]") {
    auto grid = make_grid_ptr(1.0, 64, GridKind::dyadic);
    int M = 16;
    auto rrp = lift_brownian(1, grid, M, 31, Calculus::ito, 4, 0.45, /*budget*/ 1 << 21);
    REQUIRE(rrp.sample[0].XX.pairs().kind() == PairSet::Kind::dense);

    std::vector<int> tau_full(static_cast<size_t>(M), 64), tau_zero(static_cast<size_t>(M), 0);
    auto full = stop_rough_path(rrp, tau_full);
    for (int k = 0; k < M; ++k) {
        CHECK(full.sample[(size_t)k].X == rrp.sample[(size_t)k].X);
        CHECK(full.sample[(size_t)k].XX.raw() == rrp.sample[(size_t)k].XX.raw());
    }
    auto zero = stop_rough_path(rrp, tau_zero);
    for (int k = 0; k < M; ++k) {
        for (double x : zero.sample[(size_t)k].X) CHECK(x == 0.0);
        for (double x : zero.sample[(size_t)k].XX.raw()) CHECK(x == 0.0);
    }

    RngStream rng(5);
    std::vector<int> tau(static_cast<size_t>(M));
    for (auto& t : tau) t = (int)(rng.uniform() * 64);
    auto stopped = stop_rough_path(rrp, tau);
    // direct recomputation oracle: seminorms never increase
    for (int k = 0; k < M; ++k) {
        double before = holder_seminorm(rrp.sample[(size_t)k].XX, 0.9);
        double after = holder_seminorm(stopped.sample[(size_t)k].XX, 0.9);
        CHECK(after <= before + 1e-12);
    }
    // idempotence, exact
    auto twice = stop_rough_path(stopped, tau);
    for (int k = 0; k < M; ++k) {
        CHECK(twice.sample[(size_t)k].X == stopped.sample[(size_t)k].X);
        CHECK(twice.sample[(size_t)k].XX.raw() == stopped.sample[(size_t)k].XX.raw());
    }
    std::vector<int> bad(static_cast<size_t>(M), 65);
    CHECK_THROWS_AS(stop_rough_path(rrp, bad), std::invalid_argument);
}

TEST_CASE("restrict_rough_path agrees with direct coarse lift", "[roughpath]") {
    auto fine = lift_smooth(parabola_path(512), 2, 0.5);  // N = 256
    auto coarse = restrict_rough_path(fine, 4);           // N = 64
    auto direct = lift_smooth(parabola_path(512), 8, 0.5);
    REQUIRE(coarse.grid->N == direct.grid->N);
    CHECK(rough_distance(coarse, direct, 0.4, 0.4) <= 1e-12);
}
