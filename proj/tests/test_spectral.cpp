#include "doctest.h"
#include "kcrit/spectral.hpp"

using namespace kcrit;

TEST_CASE("shooting eigenvalue N=7") {
    const auto p = solve_eigen_shooting(7);
    MESSAGE("lambda1 = ", doctest::toString(p.lambda1 - 7.786934367), " residual ", p.ode_residual, " jump ", p.match_jump);
    CHECK(p.lambda1 == doctest::Approx(7.786934367).epsilon(1e-7));
    CHECK(p.ode_residual < 1e-3);
    CHECK(p.match_jump < 1e-8);
    CHECK(p.l2_norm_sq() == doctest::Approx(1.0).epsilon(1e-12));
    for (double v : p.z0) CHECK_MESSAGE(v > 0, "node sign");
    const auto fit = fit_decay(p);
    MESSAGE("slope ", fit.slope, " rel ", fit.rel_error, " spread ", fit.tail_spread);
    CHECK(fit.rel_error < 0.02);
}

TEST_CASE("fd eigenvalue N=7") {
    const auto r = fd_richardson(7, {0.01, 40.0});
    MESSAGE("fd ", r.lambda_h, " ", r.lambda_h2, " ", r.lambda_h4, " ratio ", r.ratio, " extr ", r.extrapolated,
            " second ", r.second_eigenvalue);
    CHECK(r.positive_count == 1);
    CHECK(r.ratio == doctest::Approx(4.0).epsilon(0.05));
    CHECK(r.extrapolated == doctest::Approx(7.786934367).epsilon(1e-8));
}
