#include "kcrit/reduced.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <unsupported/Eigen/FFT>

#include "json.hpp"

namespace kcrit {

using Eigen::Matrix2d;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

namespace {

int mode_index(int j, int n) { return j <= n / 2 ? j : j - n; }

std::vector<cplx> forward(const VectorXd& v) {
    Eigen::FFT<double> fft;
    std::vector<cplx> in(v.data(), v.data() + v.size()), out;
    fft.fwd(out, in);
    return out;
}

VectorXd inverse(const std::vector<cplx>& spec) {
    Eigen::FFT<double> fft;
    std::vector<cplx> out;
    fft.inv(out, spec);
    VectorXd v(static_cast<Eigen::Index>(out.size()));
    for (std::size_t j = 0; j < out.size(); ++j) v[static_cast<Eigen::Index>(j)] = out[j].real();
    return v;
}

// Spectral first derivative; the Nyquist coefficient is dropped.
VectorXd derivative(const ReducedSystem& sys, const VectorXd& v) {
    auto spec = forward(v);
    const int n = static_cast<int>(spec.size());
    for (int j = 0; j < n; ++j) {
        if (n % 2 == 0 && j == n / 2) {
            spec[j] = 0;
            continue;
        }
        spec[j] *= cplx(0.0, sys.wavenumber(mode_index(j, n)));
    }
    return inverse(spec);
}

double sup(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

void check_sizes(const ReducedSystem& sys, const VectorXd& h1, const VectorXd& h2) {
    if (h1.size() != sys.points || h2.size() != sys.points)
        throw std::invalid_argument("reduced: rhs length must equal the number of K nodes");
}

void finish(const ReducedSystem& sys, const VectorXd& h1, const VectorXd& h2, DeltaNormalSolution& s) {
    const int n = sys.points;
    const double w1 = std::pow(sys.eps, 0.5 + 1.0 / (sys.dim - 2)), w2 = std::sqrt(sys.eps);
    s.lhs_norm = sup(s.delta) + sup(s.dn) + w1 * sup(derivative(sys, s.delta)) + w2 * sup(derivative(sys, s.dn));
    s.rhs_norm = sup(h1) + sup(h2);
    // residual through the modal symbol (exact for the Fourier discretization)
    auto sd = forward(s.delta), sn = forward(s.dn);
    std::vector<cplx> r1(n), r2(n);
    for (int j = 0; j < n; ++j) {
        const Matrix2d blk = sys.modal_block(mode_index(j, n));
        r1[j] = blk(0, 0) * sd[j] + blk(0, 1) * sn[j];
        r2[j] = blk(1, 0) * sd[j] + blk(1, 1) * sn[j];
    }
    const double res = std::max(sup(inverse(r1) - h1), sup(inverse(r2) - h2));
    s.residual = s.rhs_norm > 0 ? res / s.rhs_norm : res;
}

}  // namespace

ReducedSystem ReducedSystem::from_constants(const ConstantsTable& t, double mu0, double dn0, double eps, int points,
                                            double period) {
    ReducedSystem s;
    const int n = t.dim;
    s.dim = n;
    s.eps = eps;
    s.points = points;
    s.period = period;
    s.A = -(n - 2) * t.A1 * std::pow(mu0, n - 3) / std::pow(dn0, n - 2);
    s.B = (n - 2) * t.A1 * std::pow(mu0, n - 2) / std::pow(dn0, n - 1);
    s.C = -(n - 1) * t.A3 * std::pow(mu0, n - 1) / std::pow(dn0, n);
    s.c1 = t.c1;
    s.c2 = t.C0;
    s.mu0 = mu0;
    s.D1 = t.D1;
    s.D2 = t.D2;
    s.lambda1 = t.lambda1;
    return s;
}

double ReducedSystem::stiffness_delta() const { return c1 * std::pow(eps, 1.0 + 2.0 / (dim - 2)) * mu0; }
double ReducedSystem::stiffness_normal() const { return c2 * eps * mu0; }

Matrix2d ReducedSystem::modal_block(int mode) const {
    const double k2 = std::pow(wavenumber(mode), 2);
    Matrix2d m;
    m << A - stiffness_delta() * k2, B, B, C - stiffness_normal() * k2;
    return m;
}

double ReducedSystem::energy_eigenvalue(int mode) const {
    const Matrix2d e = -modal_block(mode);
    return Eigen::SelfAdjointEigenSolver<Matrix2d>(e, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

void ReducedSystem::check_coercive() const {
    const double det = A * C - B * B;
    if (!(A < 0) || !(C < 0) || !(det > 0)) {
        std::ostringstream os;
        os << "reduced system is not coercive: A = " << A << ", C = " << C << ", AC - B^2 = " << det
           << " (need A < 0, C < 0, AC - B^2 > 0)";
        throw CoercivityViolation(os.str());
    }
    if (c1 < 0 || c2 < 0 || mu0 <= 0) throw CoercivityViolation("reduced system: c1, c2 and mu0 must be positive");
}

std::vector<double> ReducedSystem::nodes() const {
    std::vector<double> y(points);
    for (int j = 0; j < points; ++j) y[j] = period * j / points;
    return y;
}

DeltaNormalSolution solve_delta_dn(const ReducedSystem& sys, const VectorXd& h1, const VectorXd& h2) {
    sys.check_coercive();
    check_sizes(sys, h1, h2);
    const int n = sys.points;
    auto f1 = forward(h1), f2 = forward(h2);
    std::vector<cplx> d(n), e(n);
    for (int j = 0; j < n; ++j) {
        const Matrix2d blk = sys.modal_block(mode_index(j, n));
        const double det = blk.determinant();
        d[j] = (blk(1, 1) * f1[j] - blk(0, 1) * f2[j]) / det;
        e[j] = (-blk(1, 0) * f1[j] + blk(0, 0) * f2[j]) / det;
    }
    DeltaNormalSolution s;
    s.delta = inverse(d);
    s.dn = inverse(e);
    finish(sys, h1, h2, s);
    return s;
}

MatrixXd assemble_delta_dn(const ReducedSystem& sys) {
    const int n = sys.points;
    const MatrixXd lap = make_jacobi({sys.period}, n, MatrixXd::Zero(1, 1)).matrix;
    MatrixXd m = MatrixXd::Zero(2 * n, 2 * n);
    m.topLeftCorner(n, n) = sys.stiffness_delta() * lap + sys.A * MatrixXd::Identity(n, n);
    m.bottomRightCorner(n, n) = sys.stiffness_normal() * lap + sys.C * MatrixXd::Identity(n, n);
    m.topRightCorner(n, n) = sys.B * MatrixXd::Identity(n, n);
    m.bottomLeftCorner(n, n) = sys.B * MatrixXd::Identity(n, n);
    return m;
}

DeltaNormalSolution solve_delta_dn_dense(const ReducedSystem& sys, const VectorXd& h1, const VectorXd& h2) {
    sys.check_coercive();
    check_sizes(sys, h1, h2);
    const int n = sys.points;
    VectorXd rhs(2 * n);
    rhs << h1, h2;
    const VectorXd x = assemble_delta_dn(sys).partialPivLu().solve(rhs);
    DeltaNormalSolution s;
    s.delta = x.head(n);
    s.dn = x.tail(n);
    finish(sys, h1, h2, s);
    return s;
}

std::vector<std::pair<std::string, std::pair<VectorXd, VectorXd>>> delta_dn_rhs_family(const ReducedSystem& sys) {
    const int n = sys.points;
    const auto y = sys.nodes();
    const double tau = 2.0 * std::numbers::pi;
    std::vector<std::pair<std::string, std::pair<VectorXd, VectorXd>>> fam;
    const VectorXd one = VectorXd::Ones(n), zero = VectorXd::Zero(n);
    fam.push_back({"const_h1", {one, zero}});
    fam.push_back({"const_h2", {zero, one}});
    fam.push_back({"const_both", {one, -one}});
    const std::vector<std::pair<std::string, double>> lengths{
        {"delta_scale", std::sqrt(sys.stiffness_delta() / std::abs(sys.A))},
        {"normal_scale", std::sqrt(sys.stiffness_normal() / std::abs(sys.C))}};
    for (const auto& [name, len] : lengths) {
        const int mode = std::max(1, static_cast<int>(std::lround(sys.period / (tau * len))));
        if (mode >= n / 2) throw std::invalid_argument("reduced: K grid does not resolve the natural length " + name);
        VectorXd wave(n), bump(n);
        for (int j = 0; j < n; ++j) {
            wave[j] = std::cos(tau * mode * y[j] / sys.period);
            const double ang = tau * y[j] / sys.period;
            // width len in arclength on the circle of length period
            const double w = len * tau / sys.period;
            bump[j] = std::exp((std::cos(ang) - 1.0) / (w * w));
        }
        fam.push_back({"wave_h1_" + name, {wave, zero}});
        fam.push_back({"wave_h2_" + name, {zero, wave}});
        fam.push_back({"bump_h1_" + name, {bump, zero}});
        fam.push_back({"bump_h2_" + name, {zero, bump}});
    }
    return fam;
}

BoundSweep sweep_delta_dn_bound(const ReducedSystem& base, const std::vector<double>& eps_values) {
    BoundSweep out;
    for (double eps : eps_values) {
        ReducedSystem sys = base;
        sys.eps = eps;
        double best = 0;
        std::string worst;
        for (const auto& [name, rhs] : delta_dn_rhs_family(sys)) {
            const auto sol = solve_delta_dn(sys, rhs.first, rhs.second);
            if (sol.ratio() > best) {
                best = sol.ratio();
                worst = name;
            }
        }
        out.eps.push_back(eps);
        out.constant.push_back(best);
        out.worst_rhs.push_back(worst);
    }
    if (!out.constant.empty()) {
        const auto [lo, hi] = std::minmax_element(out.constant.begin(), out.constant.end());
        out.variation = (*hi - *lo) / *lo;
    }
    return out;
}

JacobiSolution solve_dbar(const JacobiOperator& op, const VectorXd& f) { return solve_jacobi(op, -f); }

// ---------------------------------------------------------------- resonance scan

double resonance_eps(int dim, double target, int mode) {
    return std::pow(std::sqrt(target) / mode, (dim - 2.0) / (dim - 1.0));
}

std::vector<double> resonance_grid(int dim, double target, double eps_lo, double eps_hi, int samples_per_spacing) {
    if (!(eps_lo > 0) || !(eps_hi > eps_lo)) throw std::invalid_argument("resonance_grid: need 0 < eps_lo < eps_hi");
    // near ε_m the spacing in log ε is about (N-2)/((N-1) m) with m = sqrt(target)/ρ(eps_lo)
    const double rho_lo = std::pow(eps_lo, (dim - 1.0) / (dim - 2.0));
    const double m = std::max(1.0, std::sqrt(target) / rho_lo);
    const double step = (dim - 2.0) / ((dim - 1.0) * m) / samples_per_spacing;
    const double span = std::log(eps_hi / eps_lo);
    const int count = static_cast<int>(std::ceil(span / step)) + 1;
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) g[i] = eps_lo * std::exp(span * i / (count - 1));
    return g;
}

namespace {

double sigma_uncoupled(double target, double rho, int half) {
    // eigenvalues of the discrete Δ on the circle of radius 1/ρ are -(qρ)², q = 0..n/2
    double best = std::abs(target);
    for (int q = 1; q <= half; ++q) best = std::min(best, std::abs(target - q * q * rho * rho));
    return best;
}

double sigma_coupled(const ReducedSystem& sys, double rho, int half) {
    const double s1 = sys.stiffness_delta(), s2 = sys.stiffness_normal(), target = sys.D1 * sys.lambda1;
    double best = std::numeric_limits<double>::infinity();
    for (int q = 0; q <= half; ++q) {
        const double k2 = q * q * rho * rho;
        Eigen::Matrix3d m;
        m << sys.A - s1 * k2, sys.B, 0.0, sys.B, sys.C - s2 * k2, 0.0, 0.0, sys.D2, target - k2;
        const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(m).singularValues();
        best = std::min(best, sv(2));
    }
    return best;
}

}  // namespace

double resonance_sigma_dense(const ReducedSystem& sys, double eps, int points) {
    const double rho = std::pow(eps, (sys.dim - 1.0) / (sys.dim - 2.0));
    const double target = sys.D1 * sys.lambda1;
    const MatrixXd lap = make_jacobi({2.0 * std::numbers::pi / rho}, points, MatrixXd::Zero(1, 1)).matrix;
    const MatrixXd op = lap + target * MatrixXd::Identity(points, points);
    return Eigen::JacobiSVD<MatrixXd>(op).singularValues().minCoeff();
}

ResonanceScan scan_resonance(const ReducedSystem& sys, const std::vector<double>& eps_grid, const ResonanceOptions& opt) {
    if (eps_grid.size() < 3) throw std::invalid_argument("scan_resonance: need at least three ε values");
    if (!std::is_sorted(eps_grid.begin(), eps_grid.end()))
        throw std::invalid_argument("scan_resonance: ε grid must be increasing");
    if (!(sys.D1 > 0) || !(sys.lambda1 > 0)) throw std::invalid_argument("scan_resonance: need D1 > 0, lambda1 > 0");
    if (opt.coupled) sys.check_coercive();

    ResonanceScan scan;
    scan.dim = sys.dim;
    scan.target = sys.D1 * sys.lambda1;
    const double a = std::sqrt(scan.target);
    const double expo = (sys.dim - 1.0) / (sys.dim - 2.0);
    const double rho_min = std::pow(eps_grid.front(), expo);
    const int needed = static_cast<int>(std::ceil(a / rho_min)) + 2;
    scan.points = opt.points > 0 ? opt.points : 2 * (needed + 2);
    if (scan.points / 2 < needed) {
        std::ostringstream os;
        os << "scan_resonance: " << scan.points << " nodes resolve modes up to " << scan.points / 2 << " but mode "
           << needed << " is needed at eps = " << eps_grid.front();
        throw std::invalid_argument(os.str());
    }
    for (std::size_t i = 1; i < eps_grid.size(); ++i)
        scan.log_spacing = std::max(scan.log_spacing, std::log(eps_grid[i] / eps_grid[i - 1]));
    // grid must separate neighbouring resonances at the small end
    const double min_sep = (sys.dim - 2.0) / ((sys.dim - 1.0) * (a / rho_min + 1.0));
    if (scan.log_spacing > 0.5 * min_sep)
        throw std::invalid_argument("scan_resonance: ε grid is too coarse to separate resonances at the small end");

    const int half = scan.points / 2;
    const int count = static_cast<int>(eps_grid.size());
    scan.samples.resize(count);
    auto eval = [&](int i) {
        ResonancePoint& p = scan.samples[i];
        p.eps = eps_grid[i];
        p.rho = std::pow(p.eps, expo);
        if (opt.coupled) {
            ReducedSystem s = sys;
            s.eps = p.eps;
            p.sigma_min = sigma_coupled(s, p.rho, half);
        } else {
            p.sigma_min = sigma_uncoupled(scan.target, p.rho, half);
        }
        p.nearest_mode = static_cast<int>(std::lround(a / p.rho));
        p.scaled_inverse = p.rho / p.sigma_min;  // k = 1 on the circle
    };
    if (opt.policy == ExecPolicy::parallel) {
#pragma omp parallel for schedule(dynamic, 64)
        for (int i = 0; i < count; ++i) eval(i);
    } else {
        for (int i = 0; i < count; ++i) eval(i);
    }

    for (int i = 1; i + 1 < count; ++i) {
        const double s = scan.samples[i].sigma_min;
        if (s < scan.samples[i - 1].sigma_min && s <= scan.samples[i + 1].sigma_min) scan.detected.push_back(scan.samples[i].eps);
    }
    const double lo = eps_grid[1], hi = eps_grid[count - 2];
    const int m_first = static_cast<int>(std::ceil(a / std::pow(hi, expo)));
    const int m_last = static_cast<int>(std::floor(a / std::pow(lo, expo)));
    for (int m = std::max(1, m_first); m <= m_last; ++m) {
        const double e = resonance_eps(sys.dim, scan.target, m);
        if (e >= lo && e <= hi) {
            scan.predicted.push_back(e);
            scan.predicted_modes.push_back(m);
        }
    }
    std::sort(scan.predicted.begin(), scan.predicted.end());
    std::sort(scan.predicted_modes.begin(), scan.predicted_modes.end(), std::greater<>());

    auto nearest = [](const std::vector<double>& set, double x) {
        double best = std::numeric_limits<double>::infinity();
        auto it = std::lower_bound(set.begin(), set.end(), x);
        if (it != set.end()) best = std::min(best, std::abs(std::log(*it / x)));
        if (it != set.begin()) best = std::min(best, std::abs(std::log(*std::prev(it) / x)));
        return best;
    };
    const double tol = 1.0001 * scan.log_spacing;
    for (double e : scan.predicted) {
        const double err = nearest(scan.detected, e);
        scan.max_match_error = std::max(scan.max_match_error, err);
        if (err > tol) ++scan.unmatched;
    }
    for (double e : scan.detected) {
        const double err = nearest(scan.predicted, e);
        scan.max_match_error = std::max(scan.max_match_error, err);
        if (err > tol) ++scan.unmatched;
    }

    // certified gaps: central fraction (in ρ) between consecutive resonances
    const double margin = 0.5 * (1.0 - opt.gap_fraction);
    scan.gap_bound = 2.0 / ((1.0 - opt.gap_fraction) * a);
    const double inv_expo = 1.0 / expo;
    for (int m = std::max(1, m_first); m < m_last; ++m) {
        const double rho_hi = a / m, rho_lo = a / (m + 1);
        const double r0 = rho_lo + margin * (rho_hi - rho_lo), r1 = rho_hi - margin * (rho_hi - rho_lo);
        GapInterval g;
        g.mode = m;
        g.eps_lo = std::pow(r0, inv_expo);
        g.eps_hi = std::pow(r1, inv_expo);
        if (g.eps_lo < eps_grid.front() || g.eps_hi > eps_grid.back()) continue;
        auto first = std::lower_bound(eps_grid.begin(), eps_grid.end(), g.eps_lo);
        auto last = std::upper_bound(eps_grid.begin(), eps_grid.end(), g.eps_hi);
        if (first == last) continue;
        for (auto it = first; it != last; ++it) {
            ResonancePoint& p = scan.samples[it - eps_grid.begin()];
            p.in_gap = true;
            g.max_scaled_inverse = std::max(g.max_scaled_inverse, p.scaled_inverse);
        }
        scan.max_scaled_inverse_in_gaps = std::max(scan.max_scaled_inverse_in_gaps, g.max_scaled_inverse);
        scan.gaps.push_back(g);
    }
    std::sort(scan.gaps.begin(), scan.gaps.end(), [](const GapInterval& x, const GapInterval& y) { return x.eps_lo < y.eps_lo; });

    // minima counted per octave of ε, from the top of the range down
    double top = eps_grid.back();
    while (top > eps_grid.front()) {
        const double bottom = top / 2;
        const int c = static_cast<int>(std::count_if(scan.detected.begin(), scan.detected.end(),
                                                     [&](double e) { return e > bottom && e <= top; }));
        scan.minima_per_octave.push_back({top, c});
        top = bottom;
    }
    return scan;
}

std::string resonance_csv(const ResonanceScan& scan) {
    std::ostringstream os;
    os.precision(12);
    os << "eps,rho,smallest_singular_value,scaled_inverse,in_gap\n";
    for (const auto& p : scan.samples)
        os << p.eps << ',' << p.rho << ',' << p.sigma_min << ',' << p.scaled_inverse << ',' << (p.in_gap ? 1 : 0) << '\n';
    return os.str();
}

std::string resonance_gaps_json(const ResonanceScan& scan) {
    nlohmann::json j;
    j["target"] = scan.target;
    j["points"] = scan.points;
    j["gap_bound"] = scan.gap_bound;
    j["max_scaled_inverse_in_gaps"] = scan.max_scaled_inverse_in_gaps;
    j["predicted"] = scan.predicted;
    j["detected"] = scan.detected;
    j["max_match_error"] = scan.max_match_error;
    j["log_spacing"] = scan.log_spacing;
    j["gaps"] = nlohmann::json::array();
    for (const auto& g : scan.gaps)
        j["gaps"].push_back({{"eps_lo", g.eps_lo}, {"eps_hi", g.eps_hi}, {"mode", g.mode},
                             {"max_scaled_inverse", g.max_scaled_inverse}});
    return j.dump(2);
}

}  // namespace kcrit
