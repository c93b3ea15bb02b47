#include "kcrit/params.hpp"

#include <doctest.h>

#include <cmath>

using namespace kcrit;

namespace {

ConstantsTable ones_table(int dim = 7) {
    ConstantsTable t;
    t.dim = dim;
    t.A1 = t.A2 = t.A3 = t.A4 = t.A5 = t.A6 = t.A7 = 1.0;
    t.lambda1 = 1.0;
    t.djj_z0 = 0.25;
    return t;
}

const ConstantsTable& table7() {
    static const ConstantsTable t = [] {
        const SpectralPair sp = solve_eigen_shooting(7);
        return compute_constants(7, sp, -0.5, 6.0, 1.0);
    }();
    return t;
}

const Traces torus_traces{-0.5, 6.0};

}  // namespace

TEST_CASE("all-ones constants give mu0 = dn0 = 1") {
    const Traces tr{-1.0, 3.0};
    const auto s = solve_leading_order(ones_table(), tr, 0.0);
    CHECK(s.mu0 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.dn0 == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(s.e0 == doctest::Approx(-2 * 3.0 * 0.25 + 2.0).epsilon(1e-14));
}

TEST_CASE("Newton root matches the closed forms for computed N=7 constants") {
    const auto& t = table7();
    const auto cf = closed_form_root(t, torus_traces);
    CHECK(cf.mu0 > 0);
    CHECK(cf.dn0 > 0);
    NewtonConfig cfg;
    cfg.guess = NewtonConfig::Guess::user;
    cfg.mu = 1.3 * cf.mu0;
    cfg.dn = 0.8 * cf.dn0;
    cfg.e = cf.e0 + 1.0;
    const auto s = solve_leading_order(t, torus_traces, 0.0, cfg);
    CHECK(s.iterations > 1);
    CHECK(std::abs(s.mu0 / cf.mu0 - 1) < 1e-12);
    CHECK(std::abs(s.dn0 / cf.dn0 - 1) < 1e-12);
    CHECK(std::abs(s.e0 - cf.e0) < 1e-12 * std::max(1.0, std::abs(cf.e0)));
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s.residual[i]) <= cfg.abs_tol * s.row_scale[i]);
}

TEST_CASE("positive tangential mean curvature is rejected") {
    CHECK_THROWS_AS(solve_leading_order(table7(), Traces{0.5, 6.0}, 0.0), HypothesisViolation);
    CHECK_THROWS_AS(closed_form_root(ones_table(), Traces{0.0, 1.0}), HypothesisViolation);
}

TEST_CASE("Jacobian sign report") {
    const auto s = solve_leading_order(table7(), torus_traces, 0.0);
    const auto rep = check_jacobian_signs(s, table7().lambda1);
    CHECK(rep.fd_mismatch < 1e-6);
    CHECK(rep.AC_minus_B2 > 0);
    CHECK(std::abs(rep.det_M / rep.det_M_formula - 1) < 1e-10);
    CHECK(std::abs(rep.det_F0 / rep.det_F0_root_formula - 1) < 1e-8);
    // the printed entry a32 carries an extra d_N factor; every other entry agrees with FD at the root
    Eigen::Matrix3d diff = rep.F0_printed - rep.F0_fd;
    diff(2, 1) = 0;
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-6 * rep.F0_fd.cwiseAbs().maxCoeff());

    ParameterState flipped = s;
    flipped.traces.h_aa_sum = -s.traces.h_aa_sum;
    const auto rf = check_jacobian_signs(flipped, table7().lambda1);
    CHECK(rf.det_F0_printed_formula * rep.det_F0_printed_formula < 0);
    CHECK(rf.det_F0_root_formula * rep.det_F0_root_formula < 0);
}

TEST_CASE("correction step") {
    const Traces tr{-1.0, 3.0};
    auto s = solve_leading_order(ones_table(), tr, 0.0);
    s.eps = 0.1;

    const auto zero = solve_correction_step(s, 1, Eigen::Vector3d::Zero());
    CHECK(zero.corrections.at(0).mu == 0.0);
    CHECK(zero.corrections.at(0).dn == 0.0);
    CHECK(zero.corrections.at(0).e == 0.0);

    // M = [[1,-1],[-7,6]], rhs 0.1 * (0.2, 2) by hand
    const auto one = solve_correction_step(s, 1, Eigen::Vector3d(1.0, 2.0, 0.0));
    CHECK(one.corrections[0].mu == doctest::Approx(-0.32).epsilon(1e-13));
    CHECK(one.corrections[0].dn == doctest::Approx(-0.34).epsilon(1e-13));

    auto s2 = s;
    s2.eps = 0.2;
    const auto two = solve_correction_step(s2, 1, Eigen::Vector3d(1.0, 2.0, 0.5));
    const auto ref = solve_correction_step(s, 1, Eigen::Vector3d(1.0, 2.0, 0.5));
    CHECK(two.corrections[0].mu == doctest::Approx(2 * ref.corrections[0].mu).epsilon(1e-13));
    CHECK(two.corrections[0].e == doctest::Approx(2 * ref.corrections[0].e).epsilon(1e-13));
    CHECK(ref.corrections[0].bound_constant > 0);

    const auto lin = solve_correction_step(s, 1, Eigen::Vector3d(1.0, 2.0, 0.0), CorrectionMatrix::linearized);
    CHECK(correction_matrix(s, CorrectionMatrix::linearized).determinant() ==
          doctest::Approx(correction_matrix(s).determinant()));
    CHECK(lin.corrections[0].mu != doctest::Approx(one.corrections[0].mu));
}

TEST_CASE("eps > 0 with a synthetic perturbation keeps the eps^(1/(N-2)) structure") {
    const Traces tr{-1.0, 3.0};
    const auto t = ones_table();
    // g_i ≡ 1 in every row
    Perturbation g = [](double mu, double dn, double, double eps) {
        const double x = std::pow(eps, 0.2), r = mu / dn;
        return Eigen::Vector3d(x * std::pow(r, 6), x * std::pow(r, 7), x * std::pow(r, 6));
    };
    std::vector<double> ladder;
    for (int m = 8; m <= 16; ++m) ladder.push_back(std::ldexp(1.0, -4 * m));
    const auto fit = fit_eps_structure(t, tr, ladder, g);
    CHECK(fit.r2_mu > 0.999);
    CHECK(std::abs(fit.intercept_mu) < 1e-3);
    CHECK(fit.mu.back() > 0);
}
