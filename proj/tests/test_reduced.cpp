#include "kcrit/reduced.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kcrit/params.hpp"

using namespace kcrit;
using Eigen::VectorXd;

namespace {

ReducedSystem toy_system(int points = 64) {
    ReducedSystem s;
    s.dim = 7;
    s.eps = 0.05;
    s.points = points;
    s.A = -3.0;
    s.B = 1.0;
    s.C = -2.0;
    s.c1 = 2.0;
    s.c2 = 1.5;
    s.mu0 = 1.0;
    s.D1 = 1.0;
    s.lambda1 = 7.0;
    return s;
}

const ReducedSystem& system7() {
    static const ReducedSystem s = [] {
        const SpectralPair sp = solve_eigen_shooting(7);
        const Traces tr{-0.5, 6.0};
        const auto t = compute_constants(7, sp, tr.h_aa_sum, tr.h_jj_sum, 1.0);
        const auto root = closed_form_root(t, tr);
        const auto t2 = compute_constants(7, sp, tr.h_aa_sum, tr.h_jj_sum, root.dn0);
        return ReducedSystem::from_constants(t2, root.mu0, root.dn0, 0.01);
    }();
    return s;
}

double rel_diff(const VectorXd& a, const VectorXd& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("constant rhs reduces to the algebraic 2x2 solve") {
    const ReducedSystem s = toy_system();
    const int n = s.points;
    const auto sol = solve_delta_dn(s, VectorXd::Constant(n, 1.0), VectorXd::Constant(n, 2.0));
    // (-3 δ + d = 1, δ - 2 d = 2) by hand: δ = -0.8, d = -1.4
    CHECK(sol.delta.maxCoeff() == doctest::Approx(-0.8).epsilon(1e-13));
    CHECK(sol.delta.minCoeff() == doctest::Approx(-0.8).epsilon(1e-13));
    CHECK(sol.dn.maxCoeff() == doctest::Approx(-1.4).epsilon(1e-13));
    CHECK(sol.residual < 1e-13);
}

TEST_CASE("single Fourier mode: closed-form modal solve matches the assembled solve") {
    ReducedSystem s = system7();
    s.points = 128;
    s.check_coercive();
    const auto y = s.nodes();
    for (int m : {1, 5, 17}) {
        VectorXd h1(s.points), h2 = VectorXd::Zero(s.points);
        for (int j = 0; j < s.points; ++j) h1[j] = std::cos(2 * std::numbers::pi * m * y[j] / s.period);
        const Eigen::Matrix2d inv = s.modal_block(m).inverse();
        const VectorXd delta_exact = inv(0, 0) * h1, dn_exact = inv(1, 0) * h1;
        const auto modal = solve_delta_dn(s, h1, h2);
        const auto dense = solve_delta_dn_dense(s, h1, h2);
        CHECK(rel_diff(modal.delta, delta_exact) < 1e-12);
        CHECK(rel_diff(modal.dn, dn_exact) < 1e-12);
        CHECK(rel_diff(dense.delta, delta_exact) < 1e-12);
        CHECK(rel_diff(dense.dn, dn_exact) < 1e-12);
    }
}

TEST_CASE("modal and dense solves agree for generic rhs") {
    ReducedSystem s = system7();
    s.points = 96;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    VectorXd h1(s.points), h2(s.points);
    for (int j = 0; j < s.points; ++j) {
        h1[j] = u(rng);
        h2[j] = u(rng);
    }
    for (double eps : {1e-3, 1e-2, 1e-1}) {
        s.eps = eps;
        const auto a = solve_delta_dn(s, h1, h2), b = solve_delta_dn_dense(s, h1, h2);
        CHECK(rel_diff(a.delta, b.delta) < 1e-12);
        CHECK(rel_diff(a.dn, b.dn) < 1e-12);
        CHECK(a.residual < 1e-12);
    }
}

TEST_CASE("computed N=7 corner entries are coercive and every modal block is definite") {
    const ReducedSystem& s = system7();
    CHECK(s.A < 0);
    CHECK(s.C < 0);
    CHECK(s.A * s.C - s.B * s.B > 0);
    CHECK_NOTHROW(s.check_coercive());
    for (int m = 0; m <= 512; ++m) CHECK(s.energy_eigenvalue(m) > 0);
}

TEST_CASE("coercivity violations are refused with a diagnostic") {
    ReducedSystem s = toy_system();
    s.B = 3.0;  // AC - B^2 = -3
    CHECK_THROWS_AS(s.check_coercive(), CoercivityViolation);
    try {
        solve_delta_dn(s, VectorXd::Ones(s.points), VectorXd::Ones(s.points));
    } catch (const CoercivityViolation& e) {
        CHECK(std::string(e.what()).find("AC - B^2") != std::string::npos);
    }
    s = toy_system();
    s.A = 1.0;
    CHECK_THROWS_AS(s.check_coercive(), CoercivityViolation);
}

TEST_CASE("a-priori constant for (delta, d_N) is stable in eps") {
    ReducedSystem s = system7();
    s.points = 4096;
    std::vector<double> eps;
    for (double e = 1e-3; e <= 0.1 + 1e-12; e *= 2) eps.push_back(e);
    const auto sweep = sweep_delta_dn_bound(s, eps);
    MESSAGE("bound variation " << sweep.variation << " C(eps_min) " << sweep.constant.front() << " C(eps_max) "
                               << sweep.constant.back());
    CHECK(sweep.variation < 0.2);
}

TEST_CASE("solve_dbar delegates to the Jacobi solve") {
    const auto model = HypersurfaceModel::torus(3, 2.0, 1.0);
    const auto op = assemble_jacobi(model, 32);
    const int n = op.grid_size() * op.ncomp;
    VectorXd f(n);
    for (int j = 0; j < n; ++j) f[j] = std::sin(0.3 * j) + 0.2;
    const auto a = solve_dbar(op, f);
    const auto b = solve_jacobi(op, -f);
    CHECK((a.d - b.d).cwiseAbs().maxCoeff() == 0.0);
    // dense oracle: -op d = f
    CHECK((-(op.matrix * a.d) - f).cwiseAbs().maxCoeff() < 1e-10 * f.cwiseAbs().maxCoeff());
    CHECK(a.bound_constant > 0);
    const auto z = solve_dbar(op, VectorXd::Zero(n));
    CHECK(z.d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decoupled L0 singular values are |D1 lambda1 - m^2 rho^2|") {
    ReducedSystem s = toy_system();
    s.D2 = 0;
    const double target = s.D1 * s.lambda1;
    const std::vector<double> grid = resonance_grid(7, target, 0.3, 0.9, 8);
    ResonanceOptions opt;
    opt.points = 64;
    const auto scan = scan_resonance(s, grid, opt);
    for (std::size_t i = 0; i < grid.size(); i += grid.size() / 7) {
        const auto& p = scan.samples[i];
        double exact = std::abs(target);
        for (int m = 1; m <= 32; ++m) exact = std::min(exact, std::abs(target - m * m * p.rho * p.rho));
        CHECK(p.sigma_min == doctest::Approx(exact).epsilon(1e-14));
        CHECK(resonance_sigma_dense(s, p.eps, 64) == doctest::Approx(exact).epsilon(1e-9));
    }
}

TEST_CASE("detected minima sit on the analytic resonances and gaps are certified") {
    const ReducedSystem& s = system7();
    const double target = s.D1 * s.lambda1;
    const auto grid = resonance_grid(7, target, std::pow(2.0, -5), 0.5, 16);
    const auto scan = scan_resonance(s, grid);
    CHECK(scan.predicted.size() > 10);
    CHECK(scan.unmatched == 0);
    CHECK(scan.max_match_error <= 1.0001 * scan.log_spacing);
    CHECK(!scan.gaps.empty());
    CHECK(scan.max_scaled_inverse_in_gaps <= scan.gap_bound);
    for (std::size_t i = 1; i < scan.gaps.size(); ++i) CHECK(scan.gaps[i - 1].eps_hi < scan.gaps[i].eps_lo);
    // more minima per octave as eps decreases
    const auto& oct = scan.minima_per_octave;
    REQUIRE(oct.size() >= 3);
    CHECK(oct[oct.size() - 2].second > oct[1].second);
    for (const auto& p : scan.samples) CHECK(p.sigma_min >= 0);
}

TEST_CASE("resonance scan: serial and parallel agree, coupling and resolution errors") {
    const ReducedSystem& s = system7();
    const double target = s.D1 * s.lambda1;
    const auto grid = resonance_grid(7, target, 0.1, 0.5, 8);
    ResonanceOptions ser;
    ser.policy = ExecPolicy::serial;
    const auto a = scan_resonance(s, grid, ser), b = scan_resonance(s, grid);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(a.samples[i].sigma_min == b.samples[i].sigma_min);

    ResonanceOptions cpl;
    cpl.coupled = true;
    const auto c = scan_resonance(s, grid, cpl);
    CHECK(c.unmatched == 0);

    ResonanceOptions few;
    few.points = 8;
    CHECK_THROWS_AS(scan_resonance(s, grid, few), std::invalid_argument);
    const std::vector<double> coarse{0.1, 0.2, 0.3, 0.4, 0.5};
    CHECK_THROWS_AS(scan_resonance(s, coarse), std::invalid_argument);
}
