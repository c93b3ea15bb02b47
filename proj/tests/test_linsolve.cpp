#include "kcrit/linsolve.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace kcrit;

namespace {

const SpectralPair& pair7() {
    static const SpectralPair p = solve_eigen_shooting(7);
    return p;
}

AxialGridSpec small_spec() {
    AxialGridSpec s;
    s.ns = 41;
    s.nt = 81;
    s.core_spacing = 0.1;
    return s;
}

}  // namespace

TEST_CASE("smooth cutoff") {
    CHECK(smooth_cutoff(0.5, 1.0, 2.0) == 1.0);
    CHECK(smooth_cutoff(2.5, 1.0, 2.0) == 0.0);
    CHECK(smooth_cutoff(1.5, 1.0, 2.0) == doctest::Approx(0.5));
    CHECK(smooth_cutoff(1.2, 1.0, 2.0) > smooth_cutoff(1.7, 1.0, 2.0));
}

TEST_CASE("grid honours the core spacing and boundaries") {
    const auto g = make_axial_grid(7, small_spec());
    CHECK(g->s.front() == 0.0);
    CHECK(g->s.back() == 40.0);
    CHECK(g->t.front() == -10.0);
    CHECK(g->t.back() == 40.0);
    CHECK(g->s[1] == doctest::Approx(0.1).epsilon(1e-3));
    AxiField f(g, 1);
    CHECK(f.dirichlet(0, 5));
    CHECK(!AxiField(g, 0).dirichlet(0, 5));
}

TEST_CASE("operator applied to the bubble is (1-p) U^p to second order") {
    auto err_at = [](int factor) {
        AxialGridSpec s = small_spec().refined(factor);
        s.radius = 12;
        s.plane = 6;
        const auto g = make_axial_grid(7, s);
        const BubbleProfile b(7);
        const AxiField u = sample_field(g, 0, [&](double x, double y) { return b.value_r2(x * x + y * y); });
        const AxiField lu = apply_operator(u, {});
        double e = 0;
        for (int i = 0; i < g->ns(); ++i)
            for (int j = 0; j < g->nt(); ++j) {
                if (u.dirichlet(i, j)) continue;
                const double exact = (1 - b.p) * std::pow(b.value_r2(g->s[i] * g->s[i] + g->t[j] * g->t[j]), b.p);
                e = std::max(e, std::abs(lu.at(i, j) - exact));
            }
        return e;
    };
    const double e1 = err_at(1), e2 = err_at(2), e4 = err_at(4);
    CHECK(std::log2(e1 / e2) > 1.7);
    CHECK(std::log2(e2 / e4) > 1.85);
}

TEST_CASE("orthogonalize_rhs") {
    const auto g = make_axial_grid(7, small_spec());
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> uni(-1, 1);
    AxiField h(g, 0);
    for (auto& v : h.values) v = uni(rng);
    h.apply_dirichlet();
    const auto once = orthogonalize_rhs(h, pair7());
    for (double r : once.residuals) CHECK(r < 1e-10);
    const auto twice = orthogonalize_rhs(once.field, pair7());
    for (double c : twice.coefficients) CHECK(std::abs(c) < 1e-10);

    AxiField z = sample_field(g, 0, [&](double s, double t) { return kernel_axial(BubbleProfile(7), 8, s, t); });
    z.apply_dirichlet();
    const auto pz = orthogonalize_rhs(z, pair7());
    CHECK(pz.coefficients[2] == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(pz.residuals[8] < 1e-10);
}

TEST_CASE("projected solve: zero, kernel and manufactured right-hand sides") {
    const auto g = make_axial_grid(7, small_spec());
    ProjectedProblem pb;
    pb.h = AxiField(g, 0);
    auto zero = solve_projected(pb, pair7());
    CHECK(zero.phi.weighted_norm(0) == 0.0);
    for (double l : zero.multipliers) CHECK(l == 0.0);

    pb.h = constraint_field(g, pair7(), 8);
    auto k = solve_projected(pb, pair7());
    CHECK(k.multipliers[2] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(k.phi.weighted_norm(0) < 1e-9);

    AxiField phi = sample_field(g, 0, [](double s, double t) { return t * std::pow(1 + s * s + t * t, -2.0); });
    phi.apply_dirichlet();
    phi = orthogonalize_rhs(phi, pair7()).field;
    pb.h = apply_operator(phi, {});
    auto m = solve_projected(pb, pair7());
    double err = 0;
    for (std::size_t i = 0; i < phi.values.size(); ++i) err = std::max(err, std::abs(m.phi.values[i] - phi.values[i]));
    CHECK(err < 1e-10);
}

TEST_CASE("projected solve: orthogonality, residual, multipliers, linearity") {
    const auto g = make_axial_grid(7, small_spec());
    ProjectedProblem pb;
    pb.h = orthogonalize_rhs(make_rhs(g, RhsKind::bubble_power, 3), pair7()).field;
    const auto a = solve_projected(pb, pair7());
    CHECK(a.residual < 1e-9);
    for (double o : a.orthogonality) CHECK(o < 1e-9);
    CHECK(a.ratio > 0);

    // multipliers from the Gram system of Z_j χ
    const AxiField lphi = apply_operator(a.phi, {});
    AxiField defect(g, 0);
    for (std::size_t i = 0; i < defect.values.size(); ++i) defect.values[i] = lphi.values[i] - pb.h.values[i];
    defect.apply_dirichlet();
    std::vector<AxiField> z;
    for (int j : a.indices) z.push_back(constraint_field(g, pair7(), j));
    Eigen::Matrix3d gram;
    Eigen::Vector3d rhs;
    for (int p = 0; p < 3; ++p) {
        rhs[p] = defect.inner(z[p]);
        for (int q = 0; q < 3; ++q) gram(p, q) = z[p].inner(z[q]);
    }
    const Eigen::Vector3d lam = gram.ldlt().solve(rhs);
    for (int p = 0; p < 3; ++p) CHECK(lam[p] == doctest::Approx(a.multipliers[p]).epsilon(1e-8));

    ProjectedProblem pb2 = pb;
    pb2.h = orthogonalize_rhs(make_rhs(g, RhsKind::odd_algebraic, 3), pair7()).field;
    const auto b = solve_projected(pb2, pair7());
    ProjectedProblem mix = pb;
    for (std::size_t i = 0; i < mix.h.values.size(); ++i) mix.h.values[i] = 10 * pb.h.values[i] - 3 * pb2.h.values[i];
    const auto c = solve_projected(mix, pair7());
    double err = 0, scale = 0;
    for (std::size_t i = 0; i < c.phi.values.size(); ++i) {
        err = std::max(err, std::abs(c.phi.values[i] - (10 * a.phi.values[i] - 3 * b.phi.values[i])));
        scale = std::max(scale, std::abs(c.phi.values[i]));
    }
    CHECK(err < 1e-10 * scale);
}

TEST_CASE("mode-one solve leaves the mode-zero constraints untouched") {
    const auto g = make_axial_grid(7, small_spec());
    ProjectedProblem pb;
    pb.h = orthogonalize_rhs(make_rhs(g, RhsKind::mode_one, 3), pair7()).field;
    const auto s = solve_projected(pb, pair7());
    CHECK(s.indices == std::vector<int>{1});
    CHECK(s.orthogonality[0] == 0.0);
    CHECK(s.orthogonality[7] == 0.0);
    CHECK(s.orthogonality[8] == 0.0);
    CHECK(s.orthogonality[1] < 1e-9);
    CHECK(s.phi.mode == 1);
}

TEST_CASE("decay index outside the window is rejected") {
    const auto g = make_axial_grid(7, small_spec());
    ProjectedProblem pb;
    pb.r = 6;
    pb.h = AxiField(g, 0);
    CHECK_THROWS_AS(solve_projected(pb, pair7()), std::invalid_argument);
    CHECK_NOTHROW(solve_projected(pb, pair7(), true));
}

TEST_CASE("discrete maximum principle for the Laplacian block") {
    const auto g = make_axial_grid(7, small_spec());
    auto data = [](double s, double t) { return 1.0 + 0.5 * std::sin(0.1 * s) + 0.2 * t / 40.0; };
    const AxiField u = solve_laplace_dirichlet(g, data);
    double bmin = 1e300, bmax = -1e300, imin = 1e300, imax = -1e300;
    for (int i = 0; i < g->ns(); ++i)
        for (int j = 0; j < g->nt(); ++j) {
            const double v = u.at(i, j);
            if (u.dirichlet(i, j)) {
                bmin = std::min(bmin, v);
                bmax = std::max(bmax, v);
            } else {
                imin = std::min(imin, v);
                imax = std::max(imax, v);
            }
        }
    CHECK(imax <= bmax + 1e-12);
    CHECK(imin >= bmin - 1e-12);
}

TEST_CASE("a-priori constant: linearity in the rhs scale and a perturbation") {
    const auto g = make_axial_grid(7, small_spec());
    ProjectedProblem pb;
    pb.h = orthogonalize_rhs(make_rhs(g, RhsKind::algebraic, 3), pair7()).field;
    const auto a = solve_projected(pb, pair7());
    for (auto& v : pb.h.values) v *= 10;
    const auto b = solve_projected(pb, pair7());
    CHECK(b.ratio == doctest::Approx(a.ratio).epsilon(1e-12));

    const auto rep = measure_apriori_constant(7, 3.0, {small_spec()}, {RhsKind::bubble_power}, pair7(), 0.1);
    CHECK(rep.b_size == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(rep.perturbation_change < 2 * rep.constant * rep.delta);
}
