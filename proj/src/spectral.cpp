#include "kcrit/spectral.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace kcrit {

double sphere_area(int n) {
    return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

double radial_potential(int n, double r) {
    const double q = 1.0 + r * r;
    return static_cast<double>(n) * (n + 2) / (q * q);
}

namespace {

using State = std::array<double, 2>;

State rhs(int n, double lambda, double r, const State& y) {
    return {y[1], -(n - 1.0) / r * y[1] - (radial_potential(n, r) - lambda) * y[0]};
}

State rk4_step(int n, double lambda, double r, const State& y, double h) {
    auto add = [](const State& a, const State& b, double c) { return State{a[0] + c * b[0], a[1] + c * b[1]}; };
    const State k1 = rhs(n, lambda, r, y);
    const State k2 = rhs(n, lambda, r + 0.5 * h, add(y, k1, 0.5 * h));
    const State k3 = rhs(n, lambda, r + 0.5 * h, add(y, k2, 0.5 * h));
    const State k4 = rhs(n, lambda, r + h, add(y, k3, h));
    return {y[0] + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])};
}

// Regular solution near the origin, phi(0) = 1, from the power series in r^2 (valid for r < 1).
State origin_series(int n, double lambda, double r) {
    constexpr int terms = 40;
    const double v0 = static_cast<double>(n) * (n + 2);
    std::array<double, terms> c{};
    c[0] = 1.0;
    for (int k = 1; k < terms; ++k) {
        double acc = lambda * c[k - 1];
        for (int j = 0; j < k; ++j) acc -= v0 * (j + 1) * (j % 2 ? -1.0 : 1.0) * c[k - 1 - j];
        c[k] = acc / (2.0 * k * (2.0 * k + n - 2.0));
    }
    const double r2 = r * r;
    double f = 0.0, df = 0.0, pw = 1.0;
    for (int k = 0; k < terms; ++k) {
        f += c[k] * pw;
        if (k > 0) df += 2.0 * k * c[k] * pw / r;
        pw *= r2;
    }
    return {f, df};
}

constexpr double kSeriesRadius = 0.25;

// True when the trial solution changes sign before r_end (lambda below the eigenvalue).
bool undershoots(int n, double lambda, double h, double r_end) {
    const int start = std::max(1, static_cast<int>(kSeriesRadius / h));
    State y = origin_series(n, lambda, start * h);
    const int steps = static_cast<int>(std::lround(r_end / h));
    for (int i = start; i < steps; ++i) {
        y = rk4_step(n, lambda, i * h, y, h);
        if (y[0] < 0.0) return true;
        if (y[0] > 1e200) return false;
    }
    return y[0] < 0.0;
}

double hermite(double t, double h, double f0, double d0, double f1, double d1) {
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * f0 + (t3 - 2 * t2 + t) * h * d0 + (-2 * t3 + 3 * t2) * f1 + (t3 - t2) * h * d1;
}

double hermite_d(double t, double h, double f0, double d0, double f1, double d1) {
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * f0 + (-6 * t2 + 6 * t) * f1) / h + (3 * t2 - 4 * t + 1) * d0 + (3 * t2 - 2 * t) * d1;
}

double ode_residual_sup(const SpectralPair& p, double lambda) {
    double res = 0.0;
    const std::size_t m = p.z0.size();
    for (std::size_t i = 2; i + 2 < m; ++i) {
        const double r = p.r_at(i);
        const double d2 = (-p.dz0[i + 2] + 8 * p.dz0[i + 1] - 8 * p.dz0[i - 1] + p.dz0[i - 2]) / (12 * p.h);
        const double val = d2 + (p.dim - 1.0) / r * p.dz0[i] + (radial_potential(p.dim, r) - lambda) * p.z0[i];
        res = std::max(res, std::abs(val));
    }
    return res;
}

void normalize(SpectralPair& p) {
    const double s = 1.0 / std::sqrt(p.l2_norm_sq());
    for (auto& v : p.z0) v *= s;
    for (auto& v : p.dz0) v *= s;
}

// Number of eigenvalues of the symmetric tridiagonal (d, e) strictly below x.
int sturm_below(const std::vector<double>& d, const std::vector<double>& e, double x) {
    int count = 0;
    double q = d[0] - x;
    if (q < 0) ++count;
    for (std::size_t i = 1; i < d.size(); ++i) {
        if (q == 0.0) q = 1e-300;
        q = d[i] - x - e[i - 1] * e[i - 1] / q;
        if (q < 0) ++count;
    }
    return count;
}

struct Tridiag {
    std::vector<double> d, e, w;
};

Tridiag assemble_fd(int n, double h, int cells, double robin_rate) {
    Tridiag t;
    t.d.resize(cells);
    t.e.resize(cells - 1);
    t.w.resize(cells);
    auto flux = [&](int face) { return std::pow(face * h, n - 1.0); };  // r^{N-1} at face r = face*h
    for (int i = 0; i < cells; ++i) {
        const double r = (i + 0.5) * h;
        t.w[i] = std::pow(r, n - 1.0) * h;
    }
    for (int i = 0; i < cells; ++i) {
        const double r = (i + 0.5) * h;
        double k = radial_potential(n, r) * t.w[i];
        if (i > 0) k -= flux(i) / h;
        if (i + 1 < cells) k -= flux(i + 1) / h;
        else k -= robin_rate * flux(cells);
        t.d[i] = k / t.w[i];
        if (i + 1 < cells) t.e[i] = flux(i + 1) / h / std::sqrt(t.w[i] * t.w[i + 1]);
    }
    return t;
}

// Largest x with at least `rank` eigenvalues above it, on [lo, hi].
double bisect_eigen(const Tridiag& t, int rank, double lo, double hi) {
    const int m = static_cast<int>(t.d.size());
    for (int it = 0; it < 200 && hi - lo > 4e-16 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (m - sturm_below(t.d, t.e, mid) >= rank) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> inverse_iteration(const Tridiag& t, double shift) {
    const std::size_t m = t.d.size();
    std::vector<double> v(m, 1.0), c(m), z(m);
    for (int pass = 0; pass < 4; ++pass) {
        // Thomas on (S - shift I) z = v
        double b0 = t.d[0] - shift;
        c[0] = (m > 1 ? t.e[0] : 0.0) / b0;
        z[0] = v[0] / b0;
        for (std::size_t i = 1; i < m; ++i) {
            const double b = t.d[i] - shift - t.e[i - 1] * c[i - 1];
            if (i + 1 < m) c[i] = t.e[i] / b;
            z[i] = (v[i] - t.e[i - 1] * z[i - 1]) / b;
        }
        for (std::size_t i = m - 1; i-- > 0;) z[i] -= c[i] * z[i + 1];
        double nrm = 0.0;
        for (double x : z) nrm += x * x;
        nrm = std::sqrt(nrm);
        for (std::size_t i = 0; i < m; ++i) v[i] = z[i] / nrm;
    }
    return v;
}

FdEigenResult fd_pass(int n, const RadialGrid& grid, double robin_rate) {
    const int cells = static_cast<int>(std::lround(grid.r_max / grid.h));
    const Tridiag t = assemble_fd(n, grid.h, cells, robin_rate);
    const double v0 = static_cast<double>(n) * (n + 2);
    FdEigenResult out;
    out.robin_rate = robin_rate;
    out.positive_count = cells - sturm_below(t.d, t.e, 0.0);
    if (out.positive_count < 1) throw std::runtime_error("solve_eigen_fd: no positive eigenvalue found");
    const double l1 = bisect_eigen(t, 1, 0.0, v0);
    out.second_eigenvalue = bisect_eigen(t, 2, -v0, l1);
    const auto v = inverse_iteration(t, l1 + 1e-9 * l1);

    SpectralPair& p = out.pair;
    p.dim = n;
    p.lambda1 = l1;
    p.h = grid.h;
    p.r0 = 0.5 * grid.h;
    p.method = "fd";
    p.z0.resize(cells);
    p.dz0.resize(cells);
    const double sign = v[0] >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < cells; ++i) p.z0[i] = sign * v[i] / std::sqrt(t.w[i]);
    for (int i = 0; i < cells; ++i) {
        const double lo = i == 0 ? p.z0[0] : p.z0[i - 1];
        const double hi = i + 1 < cells ? p.z0[i + 1] : p.z0[i] * std::exp(-robin_rate * grid.h);
        p.dz0[i] = (hi - lo) / (2 * grid.h);
    }
    // discrete norm: sum of w_i z_i^2 = 1 after scaling by |S^{N-1}|
    double nrm = 0.0;
    for (int i = 0; i < cells; ++i) nrm += t.w[i] * p.z0[i] * p.z0[i];
    const double s = 1.0 / std::sqrt(nrm * sphere_area(n));
    for (int i = 0; i < cells; ++i) {
        p.z0[i] *= s;
        p.dz0[i] *= s;
    }
    return out;
}

}  // namespace

double SpectralPair::value(double r) const {
    r = std::abs(r);
    const double rm = r_max();
    if (r >= rm) {
        const double rate = std::sqrt(lambda1);
        return z0.back() * std::pow(rm / r, 0.5 * (dim - 1.0)) * std::exp(-rate * (r - rm));
    }
    if (r < r0) return hermite((r + r0) / (2 * r0), 2 * r0, z0[0], -dz0[0], z0[0], dz0[0]);
    const std::size_t i = std::min(static_cast<std::size_t>((r - r0) / h), z0.size() - 2);
    const double t = (r - r_at(i)) / h;
    return hermite(t, h, z0[i], dz0[i], z0[i + 1], dz0[i + 1]);
}

double SpectralPair::derivative(double r) const {
    const double sgn = r < 0 ? -1.0 : 1.0;
    r = std::abs(r);
    const double rm = r_max();
    if (r >= rm) {
        const double rate = std::sqrt(lambda1);
        return sgn * value(r) * (-rate - 0.5 * (dim - 1.0) / r);
    }
    if (r < r0) return sgn * hermite_d((r + r0) / (2 * r0), 2 * r0, z0[0], -dz0[0], z0[0], dz0[0]);
    const std::size_t i = std::min(static_cast<std::size_t>((r - r0) / h), z0.size() - 2);
    const double t = (r - r_at(i)) / h;
    return sgn * hermite_d(t, h, z0[i], dz0[i], z0[i + 1], dz0[i + 1]);
}

double SpectralPair::l2_norm_sq() const {
    const std::size_t m = z0.size();
    auto f = [&](std::size_t i) {
        const double r = r_at(i);
        return std::pow(r, dim - 1.0) * z0[i] * z0[i];
    };
    double sum = 0.0;
    if (r0 == 0.0 && (m - 1) % 2 == 0) {
        sum = f(0) + f(m - 1);
        for (std::size_t i = 1; i + 1 < m; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(i);
        sum *= h / 3.0;
    } else {
        for (std::size_t i = 0; i < m; ++i) sum += f(i);
        sum *= h;
    }
    return sphere_area(dim) * sum;
}

SpectralPair solve_eigen_shooting(int n, const ShootingOptions& opt) {
    if (n < 5) throw std::invalid_argument("solve_eigen_shooting: N must be >= 5");
    if (!(opt.tol > 0)) throw std::invalid_argument("solve_eigen_shooting: tol must be positive");
    const double v0 = static_cast<double>(n) * (n + 2);
    double lo = 1e-8, hi = v0;
    if (!undershoots(n, lo, opt.h, opt.r_shoot) || undershoots(n, hi, opt.h, opt.r_shoot)) {
        std::ostringstream msg;
        msg << "solve_eigen_shooting: bracketing failed on [" << lo << ", " << hi << "]";
        throw std::runtime_error(msg.str());
    }
    int it = 0;
    for (; it < opt.max_iters && hi - lo > opt.tol * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (undershoots(n, mid, opt.h, opt.r_shoot)) lo = mid;
        else hi = mid;
    }
    if (hi - lo > opt.tol * hi) throw std::runtime_error("solve_eigen_shooting: bisection did not converge");
    const double lambda = 0.5 * (lo + hi);

    SpectralPair p;
    p.dim = n;
    p.lambda1 = lambda;
    p.h = opt.h;
    p.r0 = 0.0;
    p.method = "shooting";
    const int m = static_cast<int>(std::lround(opt.r_max / opt.h));
    const int im = static_cast<int>(std::lround(opt.r_match / opt.h));
    p.z0.assign(m + 1, 0.0);
    p.dz0.assign(m + 1, 0.0);

    const int start = std::max(1, static_cast<int>(kSeriesRadius / opt.h));
    State y{1.0, 0.0};
    for (int i = 0; i <= start; ++i) {
        if (i > 0) y = origin_series(n, lambda, i * opt.h);
        p.z0[i] = y[0];
        p.dz0[i] = y[1];
    }
    for (int i = start; i < im; ++i) {
        y = rk4_step(n, lambda, i * opt.h, y, opt.h);
        p.z0[i + 1] = y[0];
        p.dz0[i + 1] = y[1];
    }
    const State out_match{p.z0[im], p.dz0[im]};

    const double rate = std::sqrt(lambda);
    State z{1.0, -rate};
    std::vector<State> inward(m + 1);
    inward[m] = z;
    for (int i = m; i > im; --i) {
        z = rk4_step(n, lambda, i * opt.h, z, -opt.h);
        inward[i - 1] = z;
    }
    const double scale = out_match[0] / inward[im][0];
    for (int i = im; i <= m; ++i) {
        p.z0[i] = scale * inward[i][0];
        p.dz0[i] = scale * inward[i][1];
    }
    p.match_jump = std::abs(out_match[1] - p.dz0[im]) / std::abs(out_match[1]);
    normalize(p);
    p.ode_residual = ode_residual_sup(p, lambda);
    return p;
}

FdEigenResult solve_eigen_fd(int n, const RadialGrid& grid) {
    if (n < 5) throw std::invalid_argument("solve_eigen_fd: N must be >= 5");
    if (grid.h > 0.02 + 1e-15 || grid.r_max < 30.0)
        throw std::invalid_argument("solve_eigen_fd: grid needs h <= 0.02 and r_max >= 30");
    // one outer pass: Robin rate from a first solve, then re-solve with sqrt(lambda1)
    const FdEigenResult first = fd_pass(n, grid, std::sqrt(static_cast<double>(n)));
    FdEigenResult out = fd_pass(n, grid, std::sqrt(first.pair.lambda1));
    out.pair.ode_residual = ode_residual_sup(out.pair, out.pair.lambda1);
    return out;
}

RichardsonReport fd_richardson(int n, const RadialGrid& grid) {
    RichardsonReport rep;
    const auto a = solve_eigen_fd(n, grid);
    const auto b = solve_eigen_fd(n, {grid.h / 2, grid.r_max});
    const auto c = solve_eigen_fd(n, {grid.h / 4, grid.r_max});
    rep.lambda_h = a.pair.lambda1;
    rep.lambda_h2 = b.pair.lambda1;
    rep.lambda_h4 = c.pair.lambda1;
    if (std::abs(rep.lambda_h - rep.lambda_h2) > 1e-3 * std::abs(rep.lambda_h2))
        throw std::runtime_error("fd_richardson: grid too coarse, refinement levels disagree by more than 1e-3");
    rep.ratio = (rep.lambda_h - rep.lambda_h2) / (rep.lambda_h2 - rep.lambda_h4);
    rep.extrapolated = rep.lambda_h4 + (rep.lambda_h4 - rep.lambda_h2) / 3.0;
    rep.positive_count = c.positive_count;
    rep.second_eigenvalue = c.second_eigenvalue;
    return rep;
}

DecayFit fit_decay(const SpectralPair& p, double r_lo, double r_hi) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int cnt = 0;
    for (std::size_t i = 0; i < p.z0.size(); ++i) {
        const double r = p.r_at(i);
        if (r < r_lo || r > r_hi) continue;
        const double y = -std::log(p.z0[i]) - 0.5 * (p.dim - 1.0) * std::log(r);
        sx += r;
        sy += y;
        sxx += r * r;
        sxy += r * y;
        ++cnt;
    }
    if (cnt < 2) throw std::invalid_argument("fit_decay: fewer than two nodes in the fit window");
    DecayFit fit;
    fit.slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    fit.intercept = (sy - fit.slope * sx) / cnt;
    const double rate = std::sqrt(p.lambda1);
    fit.rel_error = std::abs(fit.slope - rate) / rate;
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < p.z0.size(); ++i) {
        const double r = p.r_at(i);
        if (r < 0.5 * p.r_max()) continue;
        const double v = std::log(p.z0[i]) + rate * r + 0.5 * (p.dim - 1.0) * std::log(r);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    fit.tail_spread = hi - lo;
    return fit;
}

void write_spectral(const SpectralPair& p, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    nlohmann::json hdr = {{"N", p.dim},       {"lambda1", p.lambda1}, {"h", p.h},
                          {"r0", p.r0},       {"r_max", p.r_max()},   {"nodes", p.z0.size()},
                          {"method", p.method}, {"ode_residual", p.ode_residual}};
    os << "# " << hdr.dump() << "\n";
    os.precision(17);
    for (std::size_t i = 0; i < p.z0.size(); ++i) os << p.r_at(i) << ' ' << p.z0[i] << ' ' << p.dz0[i] << '\n';
}

SpectralPair read_spectral(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    std::getline(is, line);
    if (line.rfind("# ", 0) != 0) throw std::runtime_error(path + ": missing JSON header");
    const auto hdr = nlohmann::json::parse(line.substr(2));
    SpectralPair p;
    p.dim = hdr.at("N");
    p.lambda1 = hdr.at("lambda1");
    p.h = hdr.at("h");
    p.r0 = hdr.at("r0");
    p.method = hdr.at("method");
    p.ode_residual = hdr.value("ode_residual", 0.0);
    double r, z, dz;
    while (is >> r >> z >> dz) {
        p.z0.push_back(z);
        p.dz0.push_back(dz);
    }
    if (p.z0.size() != hdr.at("nodes").get<std::size_t>()) throw std::runtime_error(path + ": node count mismatch");
    return p;
}

}  // namespace kcrit
