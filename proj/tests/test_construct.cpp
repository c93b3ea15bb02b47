#include "kcrit/construct.hpp"

#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "kcrit/quadrature.hpp"
#include "kcrit/spectral.hpp"

using namespace kcrit;

namespace {

const SpectralPair& spectral7() {
    static const SpectralPair sp = solve_eigen_shooting(7);
    return sp;
}

const FrozenGeometry& torus_sample() {
    static const FrozenGeometry g = FrozenGeometry::from_model(HypersurfaceModel::torus(8, 3.0, 1.0), 0.0);
    return g;
}

double sup(const AxiField& f) {
    double m = 0;
    for (double x : f.values) m = std::max(m, std::abs(x));
    return m;
}

// Ladder on the default configuration, shared by the order tests.
const ResidualReport& ladder() {
    static const ResidualReport rep = [] {
        ConstructConfig cfg;
        cfg.max_order = 1;
        std::vector<double> eps;
        for (int k = 14; k <= 20; k += 2) eps.push_back(std::ldexp(1.0, -k));
        return residual_ladder(eps, torus_sample(), spectral7(), cfg);
    }();
    return rep;
}

}  // namespace

TEST_CASE("frozen torus sample: isotropic normal block and the s-coefficient") {
    const FrozenGeometry& g = torus_sample();
    CHECK(g.dim == 7);
    CHECK(g.kappa == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.h_aa == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(g.tr_h == doctest::Approx(5.5).epsilon(1e-12));
    CHECK(g.tr_h2 == doctest::Approx(6.25).epsilon(1e-12));
    CHECK(g.c_s() == doctest::Approx(-5.0 / 3.0 + 0.5).epsilon(1e-12));
    CHECK_THROWS_AS(FrozenGeometry::from_model(HypersurfaceModel::ellipsoid({1.0, 1.3, 1.7, 2.1, 2.6, 3.0, 3.4, 3.9}), 0.3),
                    std::invalid_argument);
}

TEST_CASE("eps = 0, flat: v = U solves the limit problem") {
    ConstructConfig cfg;
    const ApproxSolution v = initial_approximation(0.0, FrozenGeometry::flat(7), {1.0, 1.0, 0.0}, cfg);
    CHECK(v.limit);
    const AxiField s = apply_error_operator(v, spectral7());
    CHECK(sup(s) < 1e-11);
    // stencil residual decays like h^2 under refinement
    double prev = 0;
    for (int f : {1, 2, 4}) {
        ConstructConfig c = cfg;
        c.grid = cfg.grid.refined(f);
        const double r = sup(apply_error_operator_fd(initial_approximation(0.0, FrozenGeometry::flat(7), {1, 1, 0}, c),
                                                     spectral7()));
        if (prev > 0) {
            MESSAGE("FD residual ratio " << prev / r);
            CHECK(prev / r > 3.5);
        }
        prev = r;
    }
}

TEST_CASE("eps = 0, flat: no residual, no layer") {
    ConstructConfig cfg;
    ApproxSolution v = initial_approximation(0.0, FrozenGeometry::flat(7), {1.0, 1.0, 0.0}, cfg);
    const AxiField h = apply_error_operator(v, spectral7());
    const LayerReport rep = build_next_layer(v, h, spectral7(), cfg);
    REQUIRE(v.order() == 1);
    CHECK(sup(v.layers[0]) < 1e-10);
    CHECK(rep.layer_norm < 1e-10);
}

TEST_CASE("analytic split and stencil residual agree to O(h^2)") {
    const double eps = std::ldexp(1.0, -16);
    const ConstructParams guess = leading_guess(torus_sample(), spectral7());
    std::vector<double> gaps;
    for (int f : {1, 2}) {
        ConstructConfig cfg;
        cfg.grid = cfg.grid.refined(f);
        const ApproxSolution v = initial_approximation(eps, torus_sample(), guess, cfg);
        const AxiField a = apply_error_operator(v, spectral7());
        const AxiField b = apply_error_operator_fd(v, spectral7());
        AxiField d = a;
        for (std::size_t k = 0; k < d.values.size(); ++k) d.values[k] -= b.values[k];
        gaps.push_back(sup(d));
    }
    MESSAGE("split vs stencil: " << gaps[0] << " -> " << gaps[1]);
    CHECK(gaps[0] / gaps[1] > 3.0);
}

TEST_CASE("Dirichlet plane and positivity along the ladder") {
    for (const auto& run : ladder().runs)
        for (const auto& o : run.orders) {
            CHECK(o.plane_max == 0.0);
            CHECK(o.min_interior > 0.0);
        }
}

TEST_CASE("order ladder: S(v0) = O(eps), one step gives O(eps^2)") {
    const ResidualReport& rep = ladder();
    REQUIRE(rep.slopes.size() == 2);
    MESSAGE("slopes " << rep.slopes[0] << " " << rep.slopes[1]);
    CHECK(std::abs(rep.slopes[0] - 1.0) <= 0.15);
    CHECK(std::abs(rep.slopes[1] - 2.0) <= 0.2);
    // the parameter fit leaves no kernel content in S(v0)
    for (const auto& run : rep.runs) {
        CHECK(run.orders[0].fit.converged);
        for (double m : run.orders[0].fit.multipliers) CHECK(m < 1e-8);
    }
}

TEST_CASE("first layer: |w1|_{eps,2} / eps stays bounded") {
    double lo = 1e300, hi = 0;
    for (const auto& run : ladder().runs) {
        const double q = run.orders[1].layer.layer_norm / run.eps;
        lo = std::min(lo, q);
        hi = std::max(hi, q);
    }
    MESSAGE("|w1|/eps in [" << lo << ", " << hi << "]");
    CHECK(hi / lo < 1.5);
}

TEST_CASE("projection of S(v0) on Z_{N+1} matches the quadrature projection of h1") {
    const FrozenGeometry& g = torus_sample();
    ConstructParams p = leading_guess(g, spectral7());
    p.mu *= 1.2;  // off the root, so the O(eps) term does not vanish
    const Traces tr = g.traces();
    const ConstantsTable table = compute_constants(7, spectral7(), tr.h_aa_sum, tr.h_jj_sum, p.dn);
    ConstructConfig cfg;
    double prev = 1;
    for (int k : {16, 20}) {
        const double eps = std::ldexp(1.0, -k);
        const ApproxSolution v = initial_approximation(eps, g, p, cfg);
        const auto proj = kernel_projections(apply_error_operator(v, spectral7()), spectral7(), v.shift());
        ProjectionInput in;
        in.eps = eps;
        in.mu = p.mu;
        in.dn = p.dn;
        in.e = p.e;
        in.h_aa = tr.h_aa_sum;
        in.h_jj = tr.h_jj_sum;
        const Projections q = project_h1(7, in, table, spectral7());
        const double rel = std::abs(proj[0] - q.p_dilation) / std::abs(q.p_dilation);
        MESSAGE("eps 2^-" << k << " relative gap " << rel);
        CHECK(rel < prev);
        prev = rel;
    }
    CHECK(prev < 0.02);
}

TEST_CASE("projected rhs failing orthogonality names the offending Z_j") {
    const double eps = std::ldexp(1.0, -16);
    ConstructConfig cfg;
    cfg.orth_threshold = -1.0;  // every index fails; the first one checked is reported
    ApproxSolution v = initial_approximation(eps, torus_sample(), leading_guess(torus_sample(), spectral7()), cfg);
    const AxiField h = apply_error_operator(v, spectral7());
    try {
        build_next_layer(v, h, spectral7(), cfg);
        FAIL("expected OrthogonalityFailure");
    } catch (const OrthogonalityFailure& e) {
        CHECK(e.index == 0);
        CHECK(std::string(e.what()).find("Z_0") != std::string::npos);
    }
    CHECK(v.order() == 0);
}

TEST_CASE("ladder report: CSV header, JSON round trip, slope helper") {
    const ResidualReport& rep = ladder();
    const std::string csv = rep.csv();
    CHECK(csv.rfind("eps,order,norm,slope\n", 0) == 0);
    const auto j = nlohmann::json::parse(rep.json());
    CHECK(j["slopes"].size() == 2);
    CHECK(j["runs"].size() == rep.runs.size());
    const std::vector<double> x{1, 2, 4, 8}, y{3, 12, 48, 192};
    CHECK(loglog_slope(x, y) == doctest::Approx(2.0).epsilon(1e-13));
    CHECK_THROWS_AS(loglog_slope({1.0}, {1.0}), std::invalid_argument);
}

TEST_CASE("invalid inputs") {
    ConstructConfig cfg;
    CHECK_THROWS_AS(initial_approximation(-1e-3, torus_sample(), {1, 1, 0}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(initial_approximation(1e-3, torus_sample(), {-1, 1, 0}, cfg), std::invalid_argument);
    // eps too large for the Fermi chart to hold twice the plane distance
    CHECK_THROWS_AS(initial_approximation(0.5, torus_sample(), leading_guess(torus_sample(), spectral7()), cfg),
                    std::invalid_argument);
}
