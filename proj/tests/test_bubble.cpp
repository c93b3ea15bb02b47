#include <random>

#include "doctest.h"
#include "kcrit/bubble.hpp"
#include "kcrit/fd.hpp"

using namespace kcrit;

namespace {

std::vector<double> random_point(std::mt19937_64& rng, int n, double radius) {
    std::normal_distribution<double> g;
    std::vector<double> x(n);
    double r2 = 0;
    for (auto& v : x) {
        v = g(rng);
        r2 += v * v;
    }
    for (auto& v : x) v *= radius / std::sqrt(r2);
    return x;
}

}  // namespace

TEST_CASE("bubble normalization and centre value") {
    for (int n : {3, 7, 8, 9, 10}) {
        BubbleProfile b(n);
        CHECK(b.alpha == doctest::Approx(std::pow(n * (n - 2.0), (n - 2) / 4.0)).epsilon(1e-15));
        std::vector<double> zero(n, 0.0);
        CHECK(eval_bubble(b, zero) == b.alpha);
    }
    CHECK(BubbleProfile(7).alpha == doctest::Approx(85.13048).epsilon(1e-6));
    CHECK(BubbleProfile(10).alpha == doctest::Approx(6400.0).epsilon(1e-13));
    CHECK_THROWS(BubbleProfile(2));
}

TEST_CASE("bubble far-field ratio") {
    BubbleProfile b(8);
    std::vector<double> x(8, 0.0);
    x[3] = 1e4;
    const double ratio = eval_bubble(b, x) / std::pow(1e4, 2.0 - 8);
    CHECK(ratio == doctest::Approx(b.alpha).epsilon(1e-7));
}

TEST_CASE("bubble solves the critical equation at second order") {
    std::mt19937_64 rng(7);
    for (int n : {7, 8, 9, 10}) {
        BubbleProfile b(n);
        auto u = [&](const std::vector<double>& x) { return eval_bubble(b, x); };
        for (int k = 0; k < 5; ++k) {
            const auto x = random_point(rng, n, 0.3 + 0.5 * k);
            const double up = std::pow(u(x), b.p);
            const double e1 = std::abs(fd_laplacian(u, x, 0.04) + up);
            const double e2 = std::abs(fd_laplacian(u, x, 0.02) + up);
            CHECK(observed_order(e1, e2) == doctest::Approx(2.0).epsilon(0.05));
        }
    }
}

TEST_CASE("kernel closed forms") {
    BubbleProfile b(7);
    std::vector<double> zero(7, 0.0), e1(7, 0.0);
    e1[0] = 1.0;
    CHECK(eval_kernel(b, 8, zero) == doctest::Approx(2.5 * b.alpha));
    for (int j = 1; j <= 7; ++j) CHECK(eval_kernel(b, j, zero) == 0.0);
    CHECK(eval_kernel(b, 1, e1) == doctest::Approx(-5.0 * b.alpha * std::pow(2.0, -3.5)).epsilon(1e-14));
    CHECK_THROWS_AS(eval_kernel(b, 0, zero), std::out_of_range);
    CHECK_THROWS_AS(eval_kernel(b, 9, zero), std::out_of_range);
}

TEST_CASE("kernels match derivatives and annihilate the linearized operator") {
    std::mt19937_64 rng(11);
    BubbleProfile b(7);
    const double h = 1e-5;
    for (int k = 0; k < 10; ++k) {
        auto x = random_point(rng, 7, 0.2 + 0.3 * k);
        for (int j = 1; j <= 7; ++j) {
            auto xp = x, xm = x;
            xp[j - 1] += h;
            xm[j - 1] -= h;
            const double fd = (eval_bubble(b, xp) - eval_bubble(b, xm)) / (2 * h);
            CHECK(eval_kernel(b, j, x) == doctest::Approx(fd).epsilon(1e-7).scale(1e-6));
        }
        std::vector<double> g(7);
        bubble_gradient(b, x, g);
        double xg = 0;
        for (int i = 0; i < 7; ++i) xg += x[i] * g[i];
        CHECK(eval_kernel(b, 8, x) == doctest::Approx(xg + 2.5 * eval_bubble(b, x)).epsilon(1e-13));
    }
    for (int j = 1; j <= 8; ++j) {
        auto x = random_point(rng, 7, 1.3);
        auto z = [&](const std::vector<double>& y) { return eval_kernel(b, j, y); };
        const double pot = b.p * std::pow(eval_bubble(b, x), b.p - 1);
        const double e1 = std::abs(fd_laplacian(z, x, 0.04) + pot * z(x));
        const double e2 = std::abs(fd_laplacian(z, x, 0.02) + pot * z(x));
        CHECK(observed_order(e1, e2) == doctest::Approx(2.0).epsilon(0.1));
    }
}

TEST_CASE("hessian and axial jet agree with the Cartesian closed forms") {
    BubbleProfile b(9);
    std::mt19937_64 rng(3);
    auto x = random_point(rng, 9, 1.7);
    std::vector<double> xs = x, xm = x;
    const double h = 1e-5;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 9; ++j) {
            auto a = x, c = x;
            a[j] += h;
            c[j] -= h;
            const double fd = (eval_kernel(b, i + 1, a) - eval_kernel(b, i + 1, c)) / (2 * h);
            CHECK(bubble_hessian(b, x, i, j) == doctest::Approx(fd).epsilon(1e-6).scale(1e-5));
        }
    double s = 0;
    for (int i = 0; i < 8; ++i) s += x[i] * x[i];
    s = std::sqrt(s);
    const AxialJet jet = bubble_jet(b, s, x[8]);
    CHECK(jet.f == doctest::Approx(eval_bubble(b, x)).epsilon(1e-14));
    CHECK(jet.ft == doctest::Approx(eval_kernel(b, 9, x)).epsilon(1e-13));
    CHECK(jet.ftt == doctest::Approx(bubble_hessian(b, x, 8, 8)).epsilon(1e-13));
    CHECK(kernel_axial(b, 10, s, x[8]) == doctest::Approx(eval_kernel(b, 10, x)).epsilon(1e-13));
}

TEST_CASE("radial symmetry under rotations") {
    BubbleProfile b(8);
    std::mt19937_64 rng(5);
    auto x = random_point(rng, 8, 2.2);
    // Givens rotation in the (2,5) plane
    const double c = std::cos(0.7), s = std::sin(0.7);
    auto y = x;
    y[2] = c * x[2] - s * x[5];
    y[5] = s * x[2] + c * x[5];
    CHECK(eval_bubble(b, y) == doctest::Approx(eval_bubble(b, x)).epsilon(1e-15));
}

TEST_CASE("reflected bubble") {
    BubbleProfile b(7);
    TransformParams tp;
    tp.dim = 7;
    tp.eps = 0.01;
    tp.mu = 1.0;
    tp.d_n = tp.rho() / tp.eps;  // plane distance 1
    CHECK(tp.plane_distance() == doctest::Approx(1.0));
    std::vector<double> zero(7, 0.0);
    CHECK(eval_bubble_bar(b, tp, zero) == doctest::Approx(b.alpha * std::pow(5.0, -2.5)).epsilon(1e-14));

    const double l = tp.plane_distance();
    for (double t : {0.0, 0.3, 1.7, 5.0}) {
        std::vector<double> a(7, 0.2), c(7, 0.2);
        a[6] = -l + t;
        c[6] = -l - t;
        CHECK(eval_bubble_bar(b, tp, a) == doctest::Approx(eval_bubble(b, c)).epsilon(1e-15));
    }
    tp.d_n = 1e-14;
    std::vector<double> p(7, 0.4);
    CHECK(eval_bubble_bar(b, tp, p) == doctest::Approx(eval_bubble(b, p)).epsilon(1e-9));
    tp.d_n = 0.0;
    CHECK_THROWS_AS(eval_bubble_bar(b, tp, p), std::invalid_argument);
}

TEST_CASE("transform parameters") {
    TransformParams tp;
    tp.dim = 7;
    double prev = 1.0;
    for (double e : {0.1, 0.01, 0.001, 1e-4}) {
        tp.eps = e;
        CHECK(tp.rho() == doctest::Approx(std::pow(e, 1.2)));
        const double a = tp.alpha_eps();
        CHECK(std::isfinite(a));
        CHECK(std::abs(a) < prev);
        prev = std::abs(a);
    }
}

TEST_CASE("scaling family") {
    BubbleProfile b(7);
    std::mt19937_64 rng(9);
    for (int k = 0; k < 10; ++k) {
        auto x = random_point(rng, 7, 0.3 * (k + 1));
        CHECK(scaling_family(b, 1.0, x) == doctest::Approx(eval_bubble(b, x)).epsilon(1e-15));
        const double e1 = std::abs((scaling_family(b, 1.01, x) - scaling_family(b, 0.99, x)) / 0.02 +
                                   eval_kernel(b, 8, x));
        const double e2 = std::abs((scaling_family(b, 1.005, x) - scaling_family(b, 0.995, x)) / 0.01 +
                                   eval_kernel(b, 8, x));
        CHECK(observed_order(e1, e2) == doctest::Approx(2.0).epsilon(0.05));
    }
    std::vector<double> x(7, 0.1);
    CHECK_THROWS(scaling_family(b, 0.0, x));
}
