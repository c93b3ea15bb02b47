// Acceptance gate: one PASS/FAIL line per criterion. Tolerances are fixed here.
//   acceptance              run all criteria
//   acceptance --criterion k
// Exit code 0 iff every selected criterion passes.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kcrit/bubble.hpp"
#include "kcrit/construct.hpp"
#include "kcrit/fd.hpp"
#include "kcrit/geometry.hpp"
#include "kcrit/linsolve.hpp"
#include "kcrit/params.hpp"
#include "kcrit/quadrature.hpp"
#include "kcrit/reduced.hpp"
#include "kcrit/spectral.hpp"

using namespace kcrit;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

const SpectralPair& spectral(int n) {
    static std::vector<SpectralPair> cache(16);
    if (cache[n].z0.empty()) cache[n] = solve_eigen_shooting(n);
    return cache[n];
}

// Traces of the torus(8, 3, 1) at its inner equator and the constants evaluated there.
Traces torus_traces() {
    const ShapeData sd = shape_at(HypersurfaceModel::torus(8, 3.0, 1.0), std::vector<double>{0.0});
    return {sd.sum_aa, sd.sum_jj};
}

const ConstantsTable& torus_table() {
    static const ConstantsTable t = [] {
        const Traces tr = torus_traces();
        const ConstantsTable t1 = compute_constants(7, spectral(7), tr.h_aa_sum, tr.h_jj_sum, 1.0);
        const ClosedForm cf = closed_form_root(t1, tr);
        return compute_constants(7, spectral(7), tr.h_aa_sum, tr.h_jj_sum, cf.dn0);
    }();
    return t;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. FD residual of ΔU + U^p, sup over |ξ| ≤ 10, observed order 2 ± 0.1 for N = 7..10.
Outcome criterion1() {
    constexpr double kTarget = 2.0, kTol = 0.1;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double lo = 1e9, hi = -1e9;
    for (int n : {7, 8, 9, 10}) {
        const BubbleProfile b(n);
        std::vector<std::vector<double>> pts;
        for (int k = 0; k <= 10; ++k) {  // axis, including the origin
            std::vector<double> x(n, 0.0);
            x[n - 1] = k;
            pts.push_back(x);
        }
        while (pts.size() < 400) {
            std::vector<double> x(n);
            double r2 = 0;
            for (auto& v : x) r2 += (v = 10.0 * u(rng)) * v;
            if (r2 <= 100.0) pts.push_back(x);
        }
        auto f = [&](const std::vector<double>& x) { return eval_bubble(b, x); };
        std::vector<double> sup;
        for (double h : {0.08, 0.04, 0.02}) {
            double s = 0;
            for (const auto& x : pts) s = std::max(s, std::abs(fd_laplacian(f, x, h) + std::pow(f(x), b.p)));
            sup.push_back(s);
        }
        for (int i = 0; i + 1 < 3; ++i) {
            const double q = observed_order(sup[i], sup[i + 1]);
            lo = std::min(lo, q);
            hi = std::max(hi, q);
        }
    }
    return {lo >= kTarget - kTol && hi <= kTarget + kTol,
            fmt("bubble FD residual order in [%.4f, %.4f], required 2.0 +- 0.1 (N = 7..10)", lo, hi)};
}

// 2. Integral identity suite, relative residual < 1e-8, N = 7..10.
Outcome criterion2() {
    constexpr double kTol = 1e-8;
    bool ok = true;
    double worst = 0, energy = 0;
    std::string worst_name;
    for (int n : {7, 8, 9, 10}) {
        std::vector<double> h(n - 1);
        for (int i = 0; i < n - 1; ++i) h[i] = 0.3 + 0.1 * i;
        for (const auto& id : verify_appendix_identities(n, h, kTol)) {
            ok = ok && id.pass && id.residual < kTol;
            if (id.residual > worst) {
                worst = id.residual;
                worst_name = "N=" + std::to_string(n) + " " + id.name;
            }
            if (id.name.rfind("(iv)", 0) == 0) energy = std::max(energy, std::abs(id.lhs / id.rhs - 1.0));
        }
    }
    return {ok && energy < kTol,
            fmt("identities: worst residual %.2e (%s), |int U^{p+1}/(N int|dNU|^2) - 1| <= %.2e, required < 1e-8",
                worst, worst_name.c_str(), energy)};
}

// 3. Shooting vs Richardson-extrapolated FD, decay rate, single positive eigenvalue.
Outcome criterion3() {
    constexpr double kLambdaTol = 1e-6, kDecayTol = 0.02;
    bool ok = true;
    std::string d;
    for (int n : {7, 8, 9, 10}) {
        const SpectralPair& sp = spectral(n);
        const RichardsonReport r = fd_richardson(n, {0.01, 40.0});
        const DecayFit fit = fit_decay(sp);
        const double e = rel(sp.lambda1, r.extrapolated);
        ok = ok && e < kLambdaTol && fit.rel_error < kDecayTol && r.positive_count == 1;
        d += fmt("N=%d lambda1 %.9f rel %.1e decay %.1e count %d; ", n, sp.lambda1, e, fit.rel_error, r.positive_count);
    }
    return {ok, d + "required rel < 1e-6, decay < 2%, one positive eigenvalue"};
}

// 4. A3 against the printed closed form, N = 7.
Outcome criterion4() {
    constexpr double kTol = 1e-8;
    const ConstantsTable& t = torus_table();
    const double e = rel(t.A3, printed_A3(7));
    return {e < kTol, fmt("A3 quadrature %.10g vs printed form %.10g: rel %.3e (required < 1e-8); "
                          "alpha^{p+1} form %.10g rel %.1e",
                          t.A3, printed_A3(7), e, closed_A3(7), rel(t.A3, closed_A3(7)))};
}

// 5. ε = 0 root vs closed forms, det F0 > 0, AC - B² > 0, sphere traces rejected.
Outcome criterion5() {
    constexpr double kRootTol = 1e-12;
    const ConstantsTable& t = torus_table();
    const Traces tr = torus_traces();
    // start away from the closed form so Newton has to find the root
    const ClosedForm cf = closed_form_root(t, tr);
    NewtonConfig nc;
    nc.guess = NewtonConfig::Guess::user;
    nc.mu = 0.7 * cf.mu0;
    nc.dn = 1.3 * cf.dn0;
    nc.e = 0.5 * cf.e0;
    const ParameterState st = solve_leading_order(t, tr, 0.0, nc);
    const double e = std::max({rel(st.mu0, st.mu_closed), rel(st.dn0, st.dn_closed), rel(st.e0, st.e_closed)});
    const SignReport sr = check_jacobian_signs(st, t.lambda1);
    bool rejected = false;
    const ShapeData sph = shape_at(HypersurfaceModel::sphere(8, 1.0), std::vector<double>{0.0});
    try {
        const Traces trs{sph.sum_aa, sph.sum_jj};
        solve_leading_order(compute_constants(7, spectral(7), trs.h_aa_sum, trs.h_jj_sum, 1.0), trs, 0.0);
    } catch (const HypothesisViolation&) {
        rejected = true;
    }
    const bool ok = e < kRootTol && sr.det_F0 > 0 && sr.AC_minus_B2 > 0 && rejected;
    return {ok, fmt("root rel %.1e after %d Newton steps (< 1e-12); det F0 = %.4g (> 0 required); AC-B^2 = %.4g; sphere H_aa = %.2f %s",
                    e, st.iterations, sr.det_F0, sr.AC_minus_B2, sph.sum_aa, rejected ? "rejected" : "NOT rejected")};
}

// 6. Projections of h1 over ε = 2^-4..2^-10, extrapolated in x = ε^{1/(N-2)}.
Outcome criterion6() {
    constexpr double kTol = 0.01;
    const int n = 7;
    const SpectralPair& sp = spectral(n);
    ProjectionInput in;
    in.mu = 1.0;
    in.dn = 2.0;
    in.e = 0.3;
    in.h_aa = -0.5;
    in.h_jj = 6.0;
    in.delta = 1.0;
    const ConstantsTable t = compute_constants(n, sp, in.h_aa, in.h_jj, in.dn);
    std::vector<double> x, yd, yn;
    double pd = 0, pn = 0;
    for (int m = 4; m <= 10; ++m) {
        in.eps = std::ldexp(1.0, -m);
        const Projections p = project_h1(n, in, t, sp);
        const double sn = std::pow(in.eps, 1.0 + 1.0 / (n - 2));
        x.push_back(std::pow(in.eps, 1.0 / (n - 2)));
        yd.push_back(p.p_dilation / in.eps);
        yn.push_back(p.p_normal / sn);
        pd = p.pred_dilation / in.eps;
        pn = p.pred_normal / sn;
    }
    // the leading correction is O(x²) at fixed μ/d
    Eigen::MatrixXd a(x.size(), 3);
    Eigen::VectorXd bd(x.size()), bn(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        a(i, 0) = 1;
        a(i, 1) = x[i] * x[i];
        a(i, 2) = std::pow(x[i], 4);
        bd[i] = yd[i];
        bn[i] = yn[i];
    }
    const Eigen::VectorXd cd = a.colPivHouseholderQr().solve(bd), cn = a.colPivHouseholderQr().solve(bn);
    const double ed = rel(cd[0], pd), en = rel(cn[0], pn);
    return {ed < kTol && en < kTol,
            fmt("Z_{N+1}: extrapolated %.6g vs %.6g (%.2e); Z_N: %.6g vs %.6g (%.2e); required < 1%%", cd[0], pd, ed,
                cn[0], pn, en)};
}

// 7. A-priori ratio stable under refinement (r = 3), growth under enlargement for r = N - 1.
Outcome criterion7() {
    constexpr double kVariation = 0.10, kGrowth = 1.5;
    const SpectralPair& sp = spectral(7);
    AxialGridSpec base;
    base.ns = 121;
    base.nt = 241;
    base.core_spacing = 0.04;
    const AprioriReport a = measure_apriori_constant(7, 3.0, {base.refined(1), base.refined(2), base.refined(4)},
                                                     {RhsKind::bubble_power, RhsKind::algebraic}, sp);
    AxialGridSpec e;
    e.ns = 81;
    e.nt = 161;
    e.core_spacing = 0.06;
    e = e.refined(2);
    std::vector<AxialGridSpec> grow;
    for (double r : {20.0, 40.0, 80.0}) {
        e.radius = r;
        grow.push_back(e);
    }
    const std::vector<RhsKind> fam{RhsKind::bubble_power, RhsKind::algebraic, RhsKind::odd_algebraic, RhsKind::mode_one};
    const AprioriReport b = measure_apriori_constant(7, 6.0, grow, fam, sp, 0.0, true);
    const AprioriReport c = measure_apriori_constant(7, 3.0, grow, fam, sp);
    return {a.variation < kVariation && b.growth >= kGrowth,
            fmt("r=3 refinement variation %.2f%% (< 10%%); r=N-1 growth R=20->80 %.3f (>= 1.5 required); "
                "r=3 growth R=20->80 %.3f",
                100 * a.variation, b.growth, c.growth)};
}

// 8. Residual ladder slopes on the torus sample.
Outcome criterion8() {
    const double thresholds[] = {0.85, 1.8, 2.6};
    const FrozenGeometry g = FrozenGeometry::from_model(HypersurfaceModel::torus(8, 3.0, 1.0), 0.0);
    ConstructConfig cfg;
    cfg.max_order = 2;
    std::vector<double> eps;
    for (int k = 14; k <= 22; k += 2) eps.push_back(std::ldexp(1.0, -k));
    const ResidualReport rep = residual_ladder(eps, g, spectral(7), cfg);
    bool ok = rep.slopes.size() == 3;
    for (std::size_t i = 0; i < rep.slopes.size() && i < 3; ++i) ok = ok && rep.slopes[i] >= thresholds[i];
    std::string d = "slopes";
    for (double s : rep.slopes) d += fmt(" %.3f", s);
    return {ok, d + " (required >= 0.85, 1.8, 2.6) over eps = 2^-14..2^-22"};
}

// 9. Resonance minima on the analytic positions; bounded scaled inverse in the gaps.
Outcome criterion9() {
    const ConstantsTable& t = torus_table();
    const ParameterState st = solve_leading_order(t, torus_traces(), 0.0);
    const ReducedSystem sys = ReducedSystem::from_constants(t, st.mu0, st.dn0, 0.5);
    const auto grid = resonance_grid(7, sys.D1 * sys.lambda1, std::ldexp(1.0, -8), 0.5, 16);
    const ResonanceScan s = scan_resonance(sys, grid);
    const bool ok = s.unmatched == 0 && s.max_match_error <= s.log_spacing && !s.gaps.empty() &&
                    s.max_scaled_inverse_in_gaps <= s.gap_bound && s.detected.size() >= 3;
    return {ok, fmt("%zu minima vs %zu predicted, unmatched %d, match error %.2e (grid %.2e); gaps %zu, "
                    "max rho/sigma %.4f <= %.4f",
                    s.detected.size(), s.predicted.size(), s.unmatched, s.max_match_error, s.log_spacing, s.gaps.size(),
                    s.max_scaled_inverse_in_gaps, s.gap_bound)};
}

// 10. Fermi metric: O(|x|³) remainder in the g_ij block, g_aN = 0, g_NN = 1.
Outcome criterion10() {
    constexpr double kSlope = 2.9, kZero = 1e-9;
    bool ok = true;
    std::string d;
    for (const auto& m : {HypersurfaceModel::sphere(8, 1.0), HypersurfaceModel::torus(8, 3.0, 1.0)}) {
        const Eigen::VectorXd dir = Eigen::VectorXd::LinSpaced(m.N(), 0.3, 1.1);
        const ExpansionReport r = fermi_metric_expansion_check(m, 0.4, dir);
        ok = ok && r.slope_ij >= kSlope && r.max_g_aN < kZero && r.max_g_iN < kZero && r.max_g_NN_dev < kZero;
        d += fmt("%s: slope_ij %.3f slope_ab %.3f |g_aN| %.1e |g_iN| %.1e |g_NN-1| %.1e; ", m.name().c_str(),
                 r.slope_ij, r.slope_ab, r.max_g_aN, r.max_g_iN, r.max_g_NN_dev);
    }
    return {ok, d + "required slope >= 2.9, zeros < 1e-9"};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                         criterion6, criterion7, criterion8, criterion9, criterion10};
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            selected.push_back(std::atoi(argv[++i]));
        } else {
            std::fprintf(stderr, "usage: %s [--criterion k]...\n", argv[0]);
            return 2;
        }
    }
    if (selected.empty())
        for (int k = 1; k <= 10; ++k) selected.push_back(k);
    bool all = true;
    for (int k : selected) {
        if (k < 1 || k > 10) {
            std::fprintf(stderr, "no criterion %d\n", k);
            return 2;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k - 1]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d %s  %s  [%.1f s]\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str(), sec);
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
