#include <cmath>
#include <numbers>

#include "doctest.h"
#include "kcrit/quadrature.hpp"

using namespace kcrit;

namespace {
const SpectralPair& pair7() {
    static const SpectralPair p = solve_eigen_shooting(7);
    return p;
}
}  // namespace

TEST_CASE("gauss-legendre exactness") {
    const auto g = gauss_legendre(8);
    double s = 0, s14 = 0;
    for (std::size_t i = 0; i < g.x.size(); ++i) {
        s += g.w[i];
        s14 += g.w[i] * std::pow(g.x[i], 14);
    }
    CHECK(s == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(s14 == doctest::Approx(2.0 / 15.0).epsilon(1e-14));
}

TEST_CASE("total Gaussian measure") {
    for (int n : {7, 10}) {
        const auto grid = QuadratureGrid::whole(n);
        const auto v = integrate_axial(grid, {}, {}, [](double s, double t) { return std::exp(-(s * s + t * t)); });
        CHECK(v.value == doctest::Approx(std::pow(std::numbers::pi, 0.5 * n)).epsilon(1e-12));
        CHECK(v.converged);
    }
}

TEST_CASE("harmonic orthogonality is exact") {
    const auto grid = QuadratureGrid::whole(7);
    int calls = 0;
    const auto v = integrate_axial(grid, {0, 0}, {1, 2}, [&](double, double) {
        ++calls;
        return 1.0;
    });
    CHECK(v.value == 0.0);
    CHECK(calls == 0);
    CHECK_THROWS(angular_weight(7, {2, 0}, {0, 0}));
}

TEST_CASE("serial and parallel quadrature agree bitwise") {
    const auto grid = QuadratureGrid::whole(8);
    BubbleProfile b(8);
    auto f = [&](double s, double t, double* o) {
        o[0] = std::pow(b.value_r2(s * s + t * t), b.p + 1.0);
        o[1] = std::exp(-s) * t * t / (1 + s * s + t * t);
    };
    const auto a = integrate_axial(grid, 2, f, ExecPolicy::serial);
    const auto c = integrate_axial(grid, 2, f, ExecPolicy::parallel);
    CHECK(a.value[0] == c.value[0]);
    CHECK(a.value[1] == c.value[1]);
}

TEST_CASE("error estimate shrinks at least 4x under halving") {
    QuadratureGrid g = QuadratureGrid::whole(7);
    g.gl_order = 3;
    auto f = [](double s, double t, double* o) { o[0] = std::exp(-(s * s + t * t)) * (1 + t * t); };
    const auto r0 = integrate_axial(g, 1, f);
    g.refine = 1;
    const auto r1 = integrate_axial(g, 1, f);
    MESSAGE("errors ", r0.error[0], " ", r1.error[0]);
    CHECK(r0.error[0] / r1.error[0] >= 4.0);
}

TEST_CASE("closed forms reproduce independently computed values") {
    CHECK(closed_A1(7) == doctest::Approx(93628.59).epsilon(1e-6));
    CHECK(closed_A2(7) == doctest::Approx(57449.78).epsilon(1e-6));
    CHECK(closed_C0(7) == doctest::Approx(9191.97).epsilon(1e-6));
    CHECK(closed_A1(8) == doctest::Approx(1.00994e6).epsilon(1e-5));
    CHECK(closed_A2(8) == doctest::Approx(692528.5).epsilon(1e-6));
    CHECK(closed_C0(8) == doctest::Approx(76947.6).epsilon(1e-6));
    CHECK(closed_A1(10) == doctest::Approx(1.30568e8).epsilon(1e-5));
    // the dilation and normal constants coincide once the exponent is p+1
    for (int n : {7, 8, 9, 10}) CHECK(closed_A3(n) == doctest::Approx(closed_A1(n)).epsilon(1e-13));
}

TEST_CASE("constants table N=7") {
    const auto c = compute_constants(7, pair7(), -0.5, 3.0, 12.5);
    CHECK(c.A1 == doctest::Approx(c.A1_closed).epsilon(1e-10));
    CHECK(c.A2 == doctest::Approx(c.A2_closed).epsilon(1e-10));
    CHECK(c.A3 == doctest::Approx(c.A3_closed).epsilon(1e-10));
    CHECK(c.C0 == doctest::Approx(c.C0_closed).epsilon(1e-10));
    CHECK(c.J == doctest::Approx(closed_J(7)).epsilon(1e-10));
    CHECK(c.D1 == doctest::Approx(1.0).epsilon(1e-8));
    for (double a : {c.A1, c.A2, c.A3, c.A4, c.A5, c.A6, c.A7}) CHECK(a > 0);
    // ∫ ∂_jj U Z0 = -(1/N) ∫ U^p Z0 by isotropy and ΔU = -U^p
    CHECK(c.djj_z0 == doctest::Approx(-c.A7 / (2.5 * 7)).epsilon(1e-9));
    MESSAGE("A4 ", c.A4, " A5 ", c.A5, " A7 ", c.A7, " c1 ", c.c1, " A3 printed rel ", c.A3_printed_rel);
    CHECK(c.A3_printed / c.A3 > 1000.0);
    ConstantsOptions strict;
    strict.strict_printed_a3 = true;
    CHECK_THROWS(compute_constants(7, pair7(), -0.5, 3.0, 12.5, strict));
}

TEST_CASE("A7 is stable under spectral grid refinement") {
    ShootingOptions fine;
    fine.h = 0.005;
    const auto a = compute_constants(7, pair7(), -0.5, 3.0, 12.5);
    const auto b = compute_constants(7, solve_eigen_shooting(7, fine), -0.5, 3.0, 12.5);
    CHECK(a.A7 == doctest::Approx(b.A7).epsilon(1e-6));
    CHECK(a.A4 == doctest::Approx(b.A4).epsilon(1e-6));
}

TEST_CASE("appendix identities") {
    for (int n : {7, 8, 9, 10}) {
        std::vector<double> h(n - 1, 1.0);
        for (const auto& id : verify_appendix_identities(n, h)) {
            INFO(n, " ", id.name, " residual ", id.residual);
            CHECK(id.pass);
        }
    }
}

TEST_CASE("Monte Carlo cross-check of a Gaussian-weighted integral") {
    BubbleProfile b(7);
    const auto q = integrate_axial(QuadratureGrid::whole(7), {}, {}, [&](double s, double t) {
        const double u = b.value_r2(s * s + t * t);
        return u * u * std::exp(-(s * s + t * t));
    });
    const auto mc = monte_carlo_gaussian(
        7,
        [&](const std::vector<double>& x) {
            double r2 = 0;
            for (double v : x) r2 += v * v;
            const double u = b.value_r2(r2);
            return u * u;
        },
        10000000, 20240917);
    MESSAGE("quad ", q.value, " mc ", mc.mean, " +- ", mc.std_error);
    CHECK(std::abs(q.value - mc.mean) < 3.0 * mc.std_error);
}
