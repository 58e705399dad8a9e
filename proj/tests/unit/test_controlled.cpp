#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rsc/controlled.hpp"
#include "rsc/regression.hpp"

using namespace rsc;

namespace {

RoughPath smooth_driver(int N, int refine = 8) {
    SampledPath p;
    p.grid = make_grid_ptr(1.0, N * refine, GridKind::dyadic);
    p.dim = 1;
    p.v.resize((size_t)(N * refine) + 1);
    for (int i = 0; i <= N * refine; ++i) {
        double t = p.grid->t[(size_t)i];
        p.v[(size_t)i] = t + 0.25 * std::sin(3.0 * t);
    }
    return lift_smooth(p, refine, 0.5);
}

// (X, 1) over a deterministic driver
ControlledPath cp_of_driver(const RoughPath& rp, int M) {
    std::vector<double> x = rp.X;
    PointwiseRule rule = [x](std::span<const double>, int t, double* z, double* zp) {
        z[0] = x[(size_t)t];
        zp[0] = 1.0;
    };
    return make_controlled_path(rp.grid, M, Shape::vec(1), 1, rule, nullptr);
}

}  // namespace

TEST_CASE("remainder: exact cases", "[controlled]") {
    auto rp = smooth_driver(32);
    // Z = X, Z' = 1  =>  R = 0
    auto cp = cp_of_driver(rp, 2);
    auto R = remainder(cp, rp);
    for (int i = 0; i < 32; ++i)
        for (int j = i; j <= 32; ++j) CHECK(std::abs(R.at(0, i, j)[0]) <= 1e-15);

    // Z = X^2, Z' = 2X  =>  R_{s,t} = (dX_{s,t})^2
    std::vector<double> x = rp.X;
    PointwiseRule sq = [x](std::span<const double>, int t, double* z, double* zp) {
        z[0] = x[(size_t)t] * x[(size_t)t];
        zp[0] = 2.0 * x[(size_t)t];
    };
    auto cp2 = make_controlled_path(rp.grid, 1, Shape::vec(1), 1, sq, nullptr);
    auto R2 = remainder(cp2, rp);
    for (int i = 0; i < 32; i += 3)
        for (int j = i + 1; j <= 32; j += 5) {
            double dx = rp.X[(size_t)j] - rp.X[(size_t)i];
            CHECK(R2.at(0, i, j)[0] == Catch::Approx(dx * dx).margin(1e-14));
        }

    // linearity: R^{aZ1 + bZ2} = a R^{Z1} + b R^{Z2} for shared driver
    auto cp3 = cp2;
    for (size_t k = 0; k < cp3.Z.size(); ++k) cp3.Z[k] = 2.0 * cp2.Z[k];
    for (size_t k = 0; k < cp3.Zp.size(); ++k) cp3.Zp[k] = 2.0 * cp2.Zp[k];
    auto R3 = remainder(cp3, rp);
    for (int i = 0; i < 32; i += 5)
        for (int j = i + 1; j <= 32; j += 7)
            CHECK(R3.at(0, i, j)[0] == Catch::Approx(2.0 * R2.at(0, i, j)[0]).margin(1e-13));
}

TEST_CASE("remainder: (B, 0) has conditional 2-norm sqrt(t-s)", "[controlled]") {
    auto grid = make_grid_ptr(1.0, 16, GridKind::dyadic);
    auto be = BranchedEnsemble(grid, 1, 64, 64, {0, 4, 8}, 1234);
    BranchFunctional db = [](std::span<const double> path, int, int s, int t, double* out) {
        out[0] = path[(size_t)t] - path[(size_t)s];
    };
    for (int span : {4, 8}) {
        double est = cond_norm(be, db, 4, 4 + span, 2.0, 4.0, 1);
        double h = grid->t[(size_t)(4 + span)] - grid->t[4];
        CHECK(est == Catch::Approx(std::sqrt(h)).epsilon(0.1));
    }
    auto noise = BrownianEnsemble::generate(grid, 1, 8, 77);
    PointwiseRule brule = [](std::span<const double> b, int t, double* z, double* zp) {
        z[0] = b[(size_t)t];
        zp[0] = 0.0;
    };
    auto cpB = make_controlled_path(grid, 8, Shape::vec(1), 1, brule, &noise);
    auto rp2 = lift_brownian(2, grid, 8, 3);
    CHECK_THROWS_AS(remainder(cpB, rp2), std::invalid_argument);
}

TEST_CASE("cond_norm: moment chain and constants", "[controlled]") {
    auto grid = make_grid_ptr(1.0, 8, GridKind::dyadic);
    auto be = BranchedEnsemble(grid, 1, 128, 128, {0, 2, 4}, 99);
    BranchFunctional c = [](std::span<const double>, int, int, int, double* out) { out[0] = 1.7; };
    CHECK(cond_norm(be, c, 2, 6, 2.0, 4.0, 1) == Catch::Approx(1.7));
    CHECK(cond_norm(be, c, 2, 6, 2.0, std::numeric_limits<double>::infinity(), 1) ==
          Catch::Approx(1.7));
    CHECK_THROWS_AS(cond_norm(be, c, 2, 6, 4.0, 2.0, 1), std::invalid_argument);  // m > n
    CHECK_THROWS_AS(cond_norm(be, c, 3, 6, 2.0, 4.0, 1), std::invalid_argument);  // not a branch pt

    // dB chain: sqrt(h) <= || ||dB|F_s||_2 ||_4 <= 3^{1/4} sqrt(h)
    BranchFunctional db = [](std::span<const double> path, int, int s, int t, double* out) {
        out[0] = path[(size_t)t] - path[(size_t)s];
    };
    double h = 0.5;
    double est = cond_norm(be, db, 2, 6, 2.0, 4.0, 1);
    CHECK(est >= std::sqrt(h) * 0.93);
    CHECK(est <= std::pow(3.0, 0.25) * std::sqrt(h) * 1.07);
}

TEST_CASE("compose: identity and chain rule", "[controlled]") {
    auto rp = smooth_driver(16);
    auto cp = cp_of_driver(rp, 3);

    auto ident = make_vector_field("identity");
    auto same = compose(ident, cp);
    CHECK(same.Z == cp.Z);
    CHECK(same.Zp == cp.Zp);

    ControlledVectorField sqf;
    sqf.q = sqf.p = sqf.d = 1;
    sqf.gamma = 3.0;
    sqf.f = [](double, std::span<const double> y, double* out) { out[0] = y[0] * y[0]; };
    sqf.df = [](double, std::span<const double> y, double* out) { out[0] = 2.0 * y[0]; };
    auto comp = compose(sqf, cp);
    for (int i = 0; i <= 16; ++i) {
        CHECK(comp.z(0, i)[0] == Catch::Approx(rp.X[(size_t)i] * rp.X[(size_t)i]).margin(1e-14));
        CHECK(comp.zp(0, i)[0] == Catch::Approx(2.0 * rp.X[(size_t)i]).margin(1e-14));
    }

    ControlledVectorField no_df = sqf;
    no_df.df = nullptr;
    CHECK_THROWS_AS(compose(no_df, cp), std::invalid_argument);
    ControlledVectorField bad_gamma = sqf;
    bad_gamma.gamma = 1.5;
    CHECK_THROWS_AS(compose(bad_gamma, cp), std::invalid_argument);
}

TEST_CASE("compose: polynomial matches symbolic derivative", "[controlled]") {
    auto rp = smooth_driver(32);
    auto cp = cp_of_driver(rp, 1);
    ControlledVectorField poly;
    poly.q = poly.p = poly.d = 1;
    poly.f = [](double, std::span<const double> y, double* out) {
        out[0] = y[0] * y[0] * y[0] - 2.0 * y[0];
    };
    poly.df = [](double, std::span<const double> y, double* out) { out[0] = 3.0 * y[0] * y[0] - 2.0; };
    auto comp = compose(poly, cp);
    for (int i = 0; i <= 32; ++i) {
        double x = rp.X[(size_t)i];
        CHECK(comp.z(0, i)[0] == Catch::Approx(x * x * x - 2 * x).margin(1e-10));
        CHECK(comp.zp(0, i)[0] == Catch::Approx(3 * x * x - 2).margin(1e-10));
    }
}

TEST_CASE("compose: sin field on Brownian path, remainder mean scaling", "[controlled]") {
    // f(y) = sin y on (B, 0): slope regression of log ||E_s R^Z|| vs log dt
    auto grid = make_grid_ptr(1.0, 64, GridKind::dyadic);
    auto be = BranchedEnsemble(grid, 1, 96, 64, {0, 16, 32}, 5150);
    auto rp = smooth_driver(64);
    PointwiseRule rule = [](std::span<const double> b, int t, double* z, double* zp) {
        z[0] = std::sin(b[(size_t)t]);
        zp[0] = 0.0;
    };
    auto noise = BrownianEnsemble::generate(grid, 1, 96, 4242);
    auto cpz = make_controlled_path(grid, 96, Shape::vec(1), 1, rule, &noise);
    auto rep = scrp_norm(cpz, rp, 2.0, 2.0, 0.45, 0.45, be, {4, 8, 16, 32});
    std::vector<double> lx, ly;
    for (const auto& ps : rep.er_table)
        if (ps.value > 1e-14) {
            lx.push_back(std::log(ps.dt));
            ly.push_back(std::log(ps.value));
        }
    REQUIRE(lx.size() >= 4);
    auto fit = fit_line(lx, ly);
    CHECK(fit.slope >= 0.75);
}

TEST_CASE("scrp_norm: deterministic and martingale cases", "[controlled]") {
    auto rp = smooth_driver(32);
    auto grid = rp.grid;
    auto be = BranchedEnsemble(grid, 1, 32, 32, {0, 8, 16}, 31);

    auto cp = cp_of_driver(rp, 32);
    auto rep = scrp_norm(cp, rp, 2.0, std::numeric_limits<double>::infinity(), 0.45, 0.45, be);
    CHECK(rep.dzp <= 1e-13);
    CHECK(rep.er <= 1e-12);
    CHECK(rep.dz > 0.0);

    PointwiseRule brule = [](std::span<const double> b, int t, double* z, double* zp) {
        z[0] = b.empty() ? 0.0 : b[(size_t)t];
        zp[0] = 0.0;
    };
    auto noise = BrownianEnsemble::generate(grid, 1, 32, 8);
    auto cpb = make_controlled_path(grid, 32, Shape::vec(1), 1, brule, &noise);
    auto repb = scrp_norm(cpb, rp, 2.0, 2.0, 0.45, 0.45, be);
    CHECK(repb.er <= 1e-12);  // E_s dB = 0, exactly killed by antithetic futures
    CHECK(repb.r_mn > 0.1);
}

TEST_CASE("scrp_norm: (X^2, 2X) remainder level", "[controlled]") {
    auto rp = smooth_driver(64);
    auto be = BranchedEnsemble(rp.grid, 1, 8, 8, {0, 16, 32}, 7);
    std::vector<double> x = rp.X;
    PointwiseRule sq = [x](std::span<const double>, int t, double* z, double* zp) {
        z[0] = x[(size_t)t] * x[(size_t)t];
        zp[0] = 2.0 * x[(size_t)t];
    };
    auto cp = make_controlled_path(rp.grid, 8, Shape::vec(1), 1, sq, nullptr);
    double inf = std::numeric_limits<double>::infinity();
    auto rep = scrp_norm(cp, rp, 2.0, inf, 0.45, 0.45, be);
    double oracle = 0.0;
    for (const auto& ps : rep.er_table) {
        double dx = x[(size_t)ps.t] - x[(size_t)ps.s];
        oracle = std::max(oracle, dx * dx / std::pow(ps.dt, 0.9));
    }
    CHECK(rep.er >= 0.5 * oracle);
    CHECK(rep.er <= 2.0 * oracle);
}

TEST_CASE("scrp_distance: identity, shift, scaling", "[controlled]") {
    auto rp = smooth_driver(32);
    auto cp = cp_of_driver(rp, 16);
    auto rep0 = scrp_distance(cp, rp, cp, rp, 2.0, 0.45, 0.45);
    CHECK(rep0.total() == 0.0);

    double c = 0.4;
    auto shifted = cp;
    for (auto& z : shifted.Z) z += c;
    auto rep1 = scrp_distance(cp, rp, shifted, rp, 2.0, 0.45, 0.45);
    CHECK(rep1.initial == Catch::Approx(c));
    CHECK(rep1.dz <= 1e-14);
    CHECK(rep1.zp <= 1e-14);
    CHECK(rep1.er <= 1e-14);

    double eps = 0.125;
    RoughPath scaled = rp;
    for (auto& v : scaled.X) v *= 1.0 + eps;
    for (auto& v : scaled.XX.raw()) v *= (1.0 + eps) * (1.0 + eps);
    auto cps = cp_of_driver(scaled, 16);
    auto rep2 = scrp_distance(cp, rp, cps, scaled, 2.0, 0.45, 0.45);
    double dxn = 0.0;
    PairSet::choose(32).for_each([&](int i, int j, std::int64_t) {
        double dt = rp.grid->t[(size_t)j] - rp.grid->t[(size_t)i];
        dxn = std::max(dxn, std::abs(rp.X[(size_t)j] - rp.X[(size_t)i]) / std::pow(dt, 0.45));
    });
    CHECK(rep2.dz == Catch::Approx(eps * dxn).epsilon(1e-10));
    CHECK(rep2.zp <= 1e-14);
    auto rep2r = scrp_distance(cps, scaled, cp, rp, 2.0, 0.45, 0.45);
    CHECK(rep2.total() == Catch::Approx(rep2r.total()));

    auto small = cp_of_driver(rp, 8);
    CHECK_THROWS_AS(scrp_distance(cp, rp, small, rp, 2.0, 0.45, 0.45), std::invalid_argument);
}

TEST_CASE("cvf_distance: zero, constant shift, separable modulation", "[controlled]") {
    auto rp = smooth_driver(16);
    auto probes = probe_lattice(1, -2.0, 2.0, 9);
    auto f = make_vector_field("sin", {{"a", 1.0}, {"b", 1.0}});

    auto rep0 = cvf_distance(f, rp, f, rp, 2.0, 0.45, 0.45, probes);
    CHECK(rep0.brackets() == 0.0);
    CHECK(rep0.sup_f == 0.0);

    ControlledVectorField g = f;
    auto base = f.f;
    g.f = [base](double t, std::span<const double> y, double* out) {
        base(t, y, out);
        out[0] += 0.3;
    };
    auto rep1 = cvf_distance(f, rp, g, rp, 2.0, 0.45, 0.45, probes);
    CHECK(rep1.bk_df <= 1e-14);
    CHECK(rep1.bk_ddf <= 1e-14);
    CHECK(rep1.sup_f == Catch::Approx(0.3));

    auto fg = with_time_modulation(f, 0.2, 3.0);
    auto fgb = with_time_modulation(f, 0.25, 3.0);
    auto rep2 = cvf_distance(fg, rp, fgb, rp, 2.0, 0.45, 0.45, probes);
    double ginc = 0.0;
    PairSet::choose(16).for_each([&](int i, int j, std::int64_t) {
        double ts = rp.grid->t[(size_t)i], tt = rp.grid->t[(size_t)j];
        double d = std::abs((0.2 - 0.25) * (std::sin(3 * tt) - std::sin(3 * ts)));
        ginc = std::max(ginc, d / std::pow(tt - ts, 0.45));
    });
    double sup_sin = 0.0;
    for (auto& y : probes) sup_sin = std::max(sup_sin, std::abs(std::sin(y[0])));
    CHECK(rep2.bk_df == Catch::Approx(ginc * sup_sin).epsilon(1e-9));

    CHECK_THROWS_AS(cvf_distance(f, rp, f, rp, 2.0, 0.45, 0.45, {}), std::invalid_argument);
}

TEST_CASE("clamped fields: identity inside radius, saturation outside", "[controlled]") {
    auto f = make_vector_field("linear", {{"lambda", 2.0}});
    auto fc = clamp_vector_field(f, 5.0);
    std::vector<double> out(1), out2(1);
    for (double y : {-4.9, -1.0, 0.0, 3.0, 5.0}) {
        std::vector<double> yy = {y};
        f.eval_f(0, yy, out);
        fc.eval_f(0, yy, out2);
        CHECK(out[0] == out2[0]);
        f.eval_df(0, yy, out);
        fc.eval_df(0, yy, out2);
        CHECK(out[0] == out2[0]);
    }
    std::vector<double> big = {50.0};
    fc.eval_f(0, big, out2);
    CHECK(std::abs(out2[0]) <= 2.0 * 5.5 + 1e-12);  // |c(y)| <= K + K/10
    fc.eval_df(0, big, out2);
    CHECK(std::abs(out2[0]) <= 1e-8);

    auto b = make_coeff("quadratic", {{"a", 1.0}});
    auto bc = clamp_coeff(b, 5.0);
    std::vector<double> yv = {3.0};
    b.eval(0, 0.0, yv, out.data());
    bc.eval(0, 0.0, yv, out2.data());
    CHECK(out[0] == out2[0]);
}

TEST_CASE("probe lattices and declared bounds", "[controlled]") {
    auto probes = probe_lattice(1, -1.0, 1.0, 5);
    CHECK(probes.size() == 5);
    auto f = make_vector_field("sin", {{"a", 2.0}, {"b", 1.0}});
    auto [sup, lip] = probe_bounds(f, 0.0, probes);
    CHECK(sup <= f.sup_bound + 1e-12);
    CHECK(lip <= f.lip_bound + 1e-12);
    CHECK_THROWS_AS(probe_bounds(f, 0.0, {}), std::invalid_argument);
    CHECK_THROWS_AS(probe_lattice(1, 0.0, 1.0, 1), std::invalid_argument);
}
