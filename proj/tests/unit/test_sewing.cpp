#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rsc/sewing.hpp"

using namespace rsc;

namespace {

RoughPath smooth_line(int N, int refine = 16) {
    SampledPath p;
    p.grid = make_grid_ptr(1.0, N * refine, GridKind::dyadic);
    p.dim = 1;
    p.v.resize((size_t)(N * refine) + 1);
    for (int i = 0; i <= N * refine; ++i) p.v[(size_t)i] = p.grid->t[(size_t)i];
    return lift_smooth(p, refine, 1.0);
}

ControlledPath cp_of_driver(const RoughPath& rp, int M) {
    std::vector<double> x = rp.X;
    PointwiseRule rule = [x](std::span<const double>, int t, double* z, double* zp) {
        z[0] = x[(size_t)t];
        zp[0] = 1.0;
    };
    return make_controlled_path(rp.grid, M, Shape::vec(1), 1, rule, nullptr);
}

}  // namespace

TEST_CASE("sew: increment germ telescopes exactly at every level", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 64, GridKind::dyadic);
    int M = 4;
    RngStream rng(17);
    std::vector<double> paths((size_t)M * 65);
    for (int k = 0; k < M; ++k) {
        paths[(size_t)k * 65] = 0.0;
        for (int i = 1; i <= 64; ++i)
            paths[(size_t)k * 65 + i] = paths[(size_t)k * 65 + i - 1] + 0.1 * rng.gaussian();
    }
    auto g = increment_germ(paths, M, 65, 1);
    auto rep = sew(g, *grid, 2);
    REQUIRE(rep.stride == 1);
    for (int k = 0; k < M; ++k) {
        CHECK(rep.value(k, 0)[0] == 0.0);
        for (int b = 0; b <= 64; ++b)
            CHECK(rep.value(k, b)[0] ==
                  Catch::Approx(paths[(size_t)k * 65 + b] - paths[(size_t)k * 65]).margin(1e-13));
    }
    // telescoping is exact per boundary value; the level table only sees
    // summation-order rounding
    for (double dd : rep.level_diff) CHECK(dd <= 1e-14);
    auto d = delta(grid, std::vector<double>(rep.sewn.begin(), rep.sewn.begin() + 65),
                   Shape::scalar());
    CHECK(second_delta(d).max_defect() <= 1e-13);
}

TEST_CASE("sew: left-point germ of t dt converges to 1/2", "[sewing]") {
    auto rp = smooth_line(256);
    const auto x = rp.X;
    const auto t = rp.grid->t;
    Germ g;
    g.width = 1;
    g.samples = 1;
    g.eval = [x, t](int, int i, int j, double* out) {
        out[0] = x[(size_t)i] * (t[(size_t)j] - t[(size_t)i]);
    };
    auto rep = sew(g, *rp.grid, 2);
    CHECK(rep.value(0, 256)[0] == Catch::Approx(0.5).margin(2.5 / 256.0));
    CHECK(rep.cauchy_rate.slope > 0.5);
    CHECK(rep.cauchy_rate.r2 > 0.9);
}

TEST_CASE("sew: errors and contract checks", "[sewing]") {
    auto uni = make_grid(1.0, 6, GridKind::uniform);
    Germ g;
    g.width = 1;
    g.samples = 1;
    g.eval = [](int, int, int, double* out) { out[0] = 1.0; };  // violates A_{s,s}=0
    CHECK_THROWS_AS(sew(g, uni, 2), std::invalid_argument);
    auto dy = make_grid(1.0, 8, GridKind::dyadic);
    CHECK_THROWS_AS(sew(g, dy, 2), std::invalid_argument);
    CHECK_THROWS_AS(
        [&] {
            Germ ok;
            ok.width = 1;
            ok.samples = 1;
            ok.eval = [](int, int i, int j, double* out) { out[0] = j - i == 0 ? 0.0 : 1.0; };
            return sew(ok, dy, 2, /*k_max=*/5);
        }(),
        std::invalid_argument);
}

TEST_CASE("sew: linearity at every level", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 32, GridKind::dyadic);
    const auto t = grid->t;
    Germ a, b, comb;
    a.width = b.width = comb.width = 1;
    a.samples = b.samples = comb.samples = 1;
    a.eval = [t](int, int i, int j, double* out) {
        double dt = t[(size_t)j] - t[(size_t)i];
        out[0] = dt * dt;
    };
    b.eval = [t](int, int i, int j, double* out) {
        out[0] = std::sin(t[(size_t)j]) - std::sin(t[(size_t)i]);
    };
    comb.eval = [t](int, int i, int j, double* out) {
        double dt = t[(size_t)j] - t[(size_t)i];
        out[0] = 3.0 * dt * dt - 2.0 * (std::sin(t[(size_t)j]) - std::sin(t[(size_t)i]));
    };
    auto ra = sew(a, *grid, 2), rb = sew(b, *grid, 2), rc = sew(comb, *grid, 2);
    for (int bnd = 0; bnd <= 32; ++bnd)
        CHECK(rc.value(0, bnd)[0] ==
              Catch::Approx(3.0 * ra.value(0, bnd)[0] - 2.0 * rb.value(0, bnd)[0]).margin(1e-12));
}

TEST_CASE("sew: Ito germ B dB converges to (B^2 - t)/2 in L2", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 1 << 10, GridKind::dyadic);
    int M = 128;
    auto noise = BrownianEnsemble::generate(grid, 1, M, 2024);
    const BrownianEnsemble* pn = &noise;
    Germ g;
    g.width = 1;
    g.samples = M;
    g.eval = [pn](int k, int i, int j, double* out) {
        out[0] = pn->at(k, i)[0] * (pn->at(k, j)[0] - pn->at(k, i)[0]);
    };
    auto rep = sew(g, *grid, 2);
    double acc = 0.0;
    for (int k = 0; k < M; ++k) {
        double b1 = noise.at(k, grid->N)[0];
        double err = rep.value(k, grid->N)[0] - 0.5 * (b1 * b1 - 1.0);
        acc += err * err;
    }
    double l2 = std::sqrt(acc / M);
    CHECK(l2 <= 3.0 * std::sqrt(0.5 / (1 << 10)));
    CHECK(rep.cauchy_rate.slope == Catch::Approx(0.5).margin(0.12));
    CHECK(rep.cauchy_rate.r2 > 0.9);
}

TEST_CASE("sew: conditional coherence exponents for the Ito germ", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 256, GridKind::dyadic);
    int M = 64;
    auto be = BranchedEnsemble(grid, 1, M, 32, {0, 64, 128}, 909);
    const BranchedEnsemble* pbe = &be;
    Germ g;
    g.width = 1;
    g.samples = M;
    const BrownianEnsemble* pn = &be.outer();
    g.eval = [pn](int k, int i, int j, double* out) {
        out[0] = pn->at(k, i)[0] * (pn->at(k, j)[0] - pn->at(k, i)[0]);
    };
    g.branch_eval = [pbe](int k, int jn, int s0, int i, int j, double* out) {
        std::vector<double> path((size_t)j + 1);
        pbe->future_path(k, jn, s0, j, path);
        out[0] = path[(size_t)i] * (path[(size_t)j] - path[(size_t)i]);
    };
    auto rep = sew(g, *grid, 2, 8, &be);
    // dA_{s,u,t} = -dB_{s,u} dB_{u,t}: E_s dA = 0, so the fitted eps1 sits on
    // the inner-MC noise floor (linear in the span, small Gamma_1), while
    // || ||dA|F_s||_2 ||_2 ~ (t-s) gives eps2 ~ 1/2
    CHECK(std::abs(rep.eps1) <= 0.3);
    CHECK(rep.gamma1 <= 3.0 / std::sqrt(32.0));
    CHECK(rep.eps2 == Catch::Approx(0.5).margin(0.1));
    CHECK(rep.gamma2 > 0.0);
}

TEST_CASE("sew_uniqueness_check verdicts", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 256, GridKind::dyadic);
    Germ zero;
    zero.width = 1;
    zero.samples = 2;
    zero.eval = [](int, int, int, double* out) { out[0] = 0.0; };
    auto v0 = sew_uniqueness_check(zero, *grid);
    CHECK(v0.pass);
    CHECK(std::isinf(v0.eps));

    const auto t = grid->t;
    Germ lin;
    lin.width = 1;
    lin.samples = 2;
    lin.eval = [t](int, int i, int j, double* out) { out[0] = 0.7 * (t[(size_t)j] - t[(size_t)i]); };
    auto v1 = sew_uniqueness_check(lin, *grid);
    CHECK(v1.inconclusive);

    auto rp = smooth_line(256);
    auto cp = cp_of_driver(rp, 1);
    auto lo = rsi_forward(cp, rp, 2, 4);
    auto hi = rsi_forward(cp, rp, 2, 8);
    Germ diff;
    diff.width = 1;
    diff.samples = 1;
    int s_lo = lo.report.stride, s_hi = hi.report.stride;
    const auto vlo = lo.report.sewn, vhi = hi.report.sewn;
    diff.eval = [vlo, vhi, s_lo, s_hi](int, int i, int j, double* out) {
        if (i % s_lo != 0 || j % s_lo != 0) {
            out[0] = 0.0;
            return;
        }
        double dlo = vlo[(size_t)(j / s_lo)] - vlo[(size_t)(i / s_lo)];
        double dhi = vhi[(size_t)(j / s_hi)] - vhi[(size_t)(i / s_hi)];
        out[0] = dhi - dlo;
    };
    auto v2 = sew_uniqueness_check(diff, *grid);
    CHECK(v2.pass);
    CHECK(v2.eps > 0.05);
}

TEST_CASE("rsi_forward: exact and calculus cases", "[sewing]") {
    auto rp = smooth_line(128);

    PointwiseRule one = [](std::span<const double>, int, double* z, double* zp) {
        z[0] = 1.0;
        zp[0] = 0.0;
    };
    auto cp1 = make_controlled_path(rp.grid, 1, Shape::vec(1), 1, one, nullptr);
    for (int k_max : {3, 5, 7}) {
        auto res = rsi_forward(cp1, rp, 2, k_max);
        int stride = res.report.stride;
        for (int b = 0; b < res.report.boundary_points; ++b)
            CHECK(res.report.value(0, b)[0] ==
                  Catch::Approx(rp.X[(size_t)(b * stride)] - rp.X[0]).margin(1e-12));
    }

    auto cpx = cp_of_driver(rp, 1);
    auto res = rsi_forward(cpx, rp, 2);
    double exact = 0.5 * (rp.X[128] * rp.X[128] - rp.X[0] * rp.X[0]);
    CHECK(res.report.value(0, 128)[0] == Catch::Approx(exact).margin(1e-9));

    auto rp2 = lift_brownian(2, rp.grid, 1, 5);
    CHECK_THROWS_AS(rsi_forward(cpx, rp2.sample[0], 2), std::invalid_argument);
}

TEST_CASE("rsi_forward: Ito integral of B dB via the Ito lift", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 512, GridKind::dyadic);
    int M = 256;
    auto rrp = lift_brownian(1, grid, M, 77, Calculus::ito, 8);
    Germ g;
    g.width = 1;
    g.samples = M;
    const RandomRoughPath* pr = &rrp;
    g.eval = [pr](int k, int i, int j, double* out) {
        const RoughPath& s = pr->sample[(size_t)k];
        std::vector<double> dx(1), xx(1);
        s.delta_x(i, j, dx);
        s.xx_eval(i, j, xx);
        out[0] = s.X[(size_t)i] * dx[0] + xx[0];
    };
    auto rep = sew(g, *grid, 2);
    double acc = 0.0, mean = 0.0;
    for (int k = 0; k < M; ++k) {
        double b1 = rrp.sample[(size_t)k].X[512];
        double err = rep.value(k, 512)[0] - 0.5 * (b1 * b1 - 1.0);
        acc += err * err;
        mean += rep.value(k, 512)[0] / M;
    }
    // germ with the Ito second level telescopes exactly onto the Ito integral
    CHECK(std::sqrt(acc / M) <= 1e-12);
    double sd = std::sqrt(0.5 / M);
    CHECK(std::abs(mean) <= 3.0 * sd);
}

TEST_CASE("rsi_backward: representation and stopped integrators", "[sewing]") {
    auto rp = smooth_line(128);

    PointwiseRule one = [](std::span<const double>, int, double* z, double* zp) {
        z[0] = 1.0;
        zp[0] = 0.0;
    };
    auto cp1 = make_controlled_path(rp.grid, 1, Shape::vec(1), 1, one, nullptr);
    auto bw1 = rsi_backward(cp1, &rp, nullptr, 2);
    for (int b = 0; b <= 128; ++b)
        CHECK(bw1.report.value(0, b)[0] == Catch::Approx(rp.X[(size_t)b] - rp.X[0]).margin(1e-12));

    auto cpx = cp_of_driver(rp, 1);
    auto fw = rsi_forward(cpx, rp, 2);
    auto bw = rsi_backward(cpx, &rp, nullptr, 2);
    for (int b = 0; b <= 128; ++b)
        CHECK(std::abs(fw.report.value(0, b)[0] - bw.report.value(0, b)[0]) <= 1e-8);

    auto grid = make_grid_ptr(1.0, 256, GridKind::dyadic);
    int M = 128;
    auto rrp = lift_brownian(1, grid, M, 2001, Calculus::ito, 8);
    ControlledPath cps;
    cps.grid = grid;
    cps.zshape = Shape::vec(1);
    cps.d = 1;
    cps.M = M;
    cps.Z.resize((size_t)M * 257);
    cps.Zp.resize((size_t)M * 257);
    for (int k = 0; k < M; ++k)
        for (int i = 0; i <= 256; ++i) {
            double x = rrp.sample[(size_t)k].X[(size_t)i];
            cps.Z[(size_t)k * 257 + i] = std::sin(x);
            cps.Zp[(size_t)k * 257 + i] = std::cos(x);
        }
    Germ gfw;
    gfw.width = 1;
    gfw.samples = M;
    const RandomRoughPath* pr = &rrp;
    const ControlledPath* pc = &cps;
    gfw.eval = [pr, pc](int k, int i, int j, double* out) {
        const RoughPath& s = pr->sample[(size_t)k];
        std::vector<double> dx(1), xx(1);
        s.delta_x(i, j, dx);
        s.xx_eval(i, j, xx);
        out[0] = pc->z(k, i)[0] * dx[0] + pc->zp(k, i)[0] * xx[0];
    };
    auto fwd = sew(gfw, *grid, 2);
    auto bwd = rsi_backward(cps, nullptr, &rrp, 2);
    double acc = 0.0;
    for (int k = 0; k < M; ++k) {
        double diff = fwd.value(k, 256)[0] - bwd.report.value(k, 256)[0];
        acc += diff * diff;
    }
    double tol = 0.0;
    for (size_t q = fwd.level_diff.size() - 2; q < fwd.level_diff.size(); ++q)
        tol += fwd.level_diff[q] + bwd.report.level_diff[q];
    CHECK(std::sqrt(acc / M) <= 3.0 * tol + 1e-6);

    std::vector<int> tau((size_t)M);
    RngStream rng(4);
    for (auto& tv : tau) tv = 64 + (int)(rng.uniform() * 128);
    auto stopped = stop_rough_path(rrp, tau);
    auto bws = rsi_backward(cps, nullptr, &stopped, 2, 6);
    for (int k = 0; k < M; ++k)
        for (int b = 0; b < bws.report.boundary_points; ++b)
            CHECK(std::isfinite(bws.report.value(k, b)[0]));
}

TEST_CASE("dyadic_defect_decomposition: identities", "[sewing]") {
    auto grid = make_grid_ptr(1.0, 64, GridKind::dyadic);
    RngStream rng(23);
    int M = 3;
    std::vector<TwoParamField> fields;
    for (int k = 0; k < M; ++k) {
        TwoParamField f(grid, Shape::vec(2), PairSet::dense(64));
        for (auto& x : f.raw()) x = rng.gaussian();
        fields.push_back(std::move(f));
    }
    Germ J;
    J.width = 2;
    J.samples = M;
    J.eval = [&fields](int k, int i, int j, double* out) {
        if (i == j) {
            out[0] = out[1] = 0.0;
            return;
        }
        auto v = fields[(size_t)k].span_at(i, j);
        out[0] = v[0];
        out[1] = v[1];
    };
    CHECK(dyadic_defect_decomposition(J, 0, 64, 1) <= 1e-12);
    CHECK(dyadic_defect_decomposition(J, 0, 64, 4) <= 1e-12);
    CHECK(dyadic_defect_decomposition(J, 0, 64, 6) <= 1e-12);
    std::vector<double> y((size_t)M * 65);
    for (auto& x : y) x = rng.gaussian();
    auto inc = increment_germ(y, M, 65, 1);
    CHECK(dyadic_defect_decomposition(inc, 0, 64, 5) <= 1e-12);
    CHECK_THROWS_AS(dyadic_defect_decomposition(J, 0, 48, 5), std::invalid_argument);
}
