// Serial reference vs OpenMP kernels: axial panel quadrature and the resonance scan.

#include <cmath>
#include <vector>

#include "kcrit/bubble.hpp"
#include "kcrit/quadrature.hpp"
#include "kcrit/reduced.hpp"

namespace {

using namespace kcrit;

double quadrature_kernel(ExecPolicy policy) {
    const BubbleProfile b(7);
    QuadratureGrid g = QuadratureGrid::whole(7);
    g.refine = 1;
    const auto r = integrate_axial(
        g, 3,
        [&](double s, double t, double* o) {
            const double r2 = s * s + t * t;
            const double u = b.value_r2(r2);
            o[0] = std::pow(u, b.p + 1.0);
            o[1] = z_dilation_r2(b, r2) * z_dilation_r2(b, r2);
            o[2] = t * t * std::pow(1.0 + r2, -0.5 * (7 + 4));
        },
        policy);
    return r.value[0];
}

ReducedSystem resonance_system() {
    ReducedSystem s;
    s.dim = 7;
    s.A = -3.0;
    s.B = 1.0;
    s.C = -2.0;
    s.c1 = s.c2 = s.mu0 = 1.0;
    s.D1 = 1.0;
    s.lambda1 = 7.786934;
    return s;
}

double resonance_kernel(ExecPolicy policy) {
    static const ReducedSystem s = resonance_system();
    static const std::vector<double> grid = resonance_grid(7, s.D1 * s.lambda1, 1e-2, 1e-1, 8);
    ResonanceOptions opt;
    opt.policy = policy;
    return scan_resonance(s, grid, opt).max_match_error;
}

}  // namespace

#ifdef KCRIT_HAVE_BENCHMARK

#include <benchmark/benchmark.h>

static void BM_quadrature(benchmark::State& st) {
    const auto p = st.range(0) ? ExecPolicy::parallel : ExecPolicy::serial;
    for (auto _ : st) benchmark::DoNotOptimize(quadrature_kernel(p));
}
BENCHMARK(BM_quadrature)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

static void BM_resonance(benchmark::State& st) {
    const auto p = st.range(0) ? ExecPolicy::parallel : ExecPolicy::serial;
    for (auto _ : st) benchmark::DoNotOptimize(resonance_kernel(p));
}
BENCHMARK(BM_resonance)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#else

#include <chrono>
#include <cstdio>

int main() {
    auto time = [](auto&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        volatile double sink = f();
        (void)sink;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };
    for (auto [name, kernel] : {std::pair{"quadrature", &quadrature_kernel}, std::pair{"resonance", &resonance_kernel}}) {
        const double s = time([&] { return kernel(ExecPolicy::serial); });
        const double p = time([&] { return kernel(ExecPolicy::parallel); });
        std::printf("%-12s serial %9.2f ms  parallel %9.2f ms  speedup %.2f\n", name, s, p, s / p);
    }
}

#endif
