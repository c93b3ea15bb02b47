#include "kcrit/quadrature.hpp"

#include <omp.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace kcrit {

GaussRule gauss_legendre(int order) {
    if (order < 1) throw std::invalid_argument("gauss_legendre: order must be >= 1");
    GaussRule g;
    g.x.resize(order);
    g.w.resize(order);
    const int m = (order + 1) / 2;
    for (int i = 0; i < m; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= order; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = order * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        g.x[i] = -z;
        g.x[order - 1 - i] = z;
        g.w[i] = g.w[order - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    return g;
}

double angular_weight(int dim, Harmonic a, Harmonic b) {
    if (a.degree < 0 || a.degree > 1 || b.degree < 0 || b.degree > 1)
        throw std::invalid_argument("angular_weight: only harmonics of degree 0 and 1 are supported");
    const double area = sphere_area(dim - 1);
    if (a.degree != b.degree) return 0.0;
    if (a.degree == 0) return area;
    if (a.component != b.component) return 0.0;
    return area / (dim - 1.0);
}

namespace {

// Breakpoints |x| in [0, far]: width 0.5 up to 4, width 1 up to 32, then dyadic.
std::vector<double> ladder(double far) {
    std::vector<double> v;
    for (double x = 0.0; x < 4.0; x += 0.5) v.push_back(x);
    for (double x = 4.0; x < 32.0; x += 1.0) v.push_back(x);
    for (double x = 32.0; x < far; x *= 2.0) v.push_back(x);
    v.push_back(far);
    return v;
}

std::vector<double> clip_breaks(std::vector<double> v, double lo, double hi) {
    v.push_back(lo);
    v.push_back(hi);
    std::sort(v.begin(), v.end());
    std::vector<double> out;
    for (double x : v) {
        if (x < lo || x > hi) continue;
        if (!out.empty() && x - out.back() <= 1e-12 * std::max(1.0, std::abs(x))) continue;
        out.push_back(x);
    }
    return out;
}

std::vector<double> refine_breaks(const std::vector<double>& v, int levels) {
    std::vector<double> cur = v;
    for (int l = 0; l < levels; ++l) {
        std::vector<double> nxt;
        for (std::size_t i = 0; i + 1 < cur.size(); ++i) {
            nxt.push_back(cur[i]);
            nxt.push_back(0.5 * (cur[i] + cur[i + 1]));
        }
        nxt.push_back(cur.back());
        cur = std::move(nxt);
    }
    return cur;
}

struct PanelSet {
    std::vector<double> u, v;  // breakpoints in the two panel coordinates
    bool polar = false;
};

PanelSet make_panels(const QuadratureGrid& g) {
    PanelSet p;
    if (g.domain == QuadratureGrid::Domain::whole_space) {
        p.polar = true;
        p.u = ladder(g.r_far);
        p.v = {0.0, 0.5 * std::numbers::pi, std::numbers::pi};
    } else {
        if (!(g.s_max > 0.0) || !(g.t_max > g.t_min)) throw std::invalid_argument("half-space grid has empty extent");
        p.u = clip_breaks(ladder(g.s_max), 0.0, g.s_max);
        std::vector<double> t;
        for (double c : g.t_centers) {
            const double far = std::max(std::abs(g.t_min - c), std::abs(g.t_max - c));
            for (double x : ladder(far)) {
                if (c != g.t_centers.front() && x > 32.0) break;
                t.push_back(c + x);
                t.push_back(c - x);
            }
        }
        p.v = clip_breaks(t, g.t_min, g.t_max);
    }
    p.u = refine_breaks(p.u, g.refine);
    p.v = refine_breaks(p.v, g.refine);
    return p;
}

// Tensor rule on [u0,u1] x [v0,v1], accumulating signed and absolute sums.
void panel_rule(const QuadratureGrid& g, const GaussRule& rule, bool polar, double u0, double u1, double v0,
                double v1, int nout, const AxialFn& fn, double* acc, double* acc_abs, std::vector<double>& buf) {
    const double hu = 0.5 * (u1 - u0), cu = 0.5 * (u1 + u0);
    const double hv = 0.5 * (v1 - v0), cv = 0.5 * (v1 + v0);
    const int q = static_cast<int>(rule.x.size());
    for (int i = 0; i < q; ++i) {
        const double u = cu + hu * rule.x[i];
        for (int j = 0; j < q; ++j) {
            const double v = cv + hv * rule.x[j];
            double s, t, jac;
            if (polar) {
                s = u * std::sin(v);
                t = u * std::cos(v);
                jac = u;
            } else {
                s = u;
                t = v;
                jac = 1.0;
            }
            const double w = rule.w[i] * rule.w[j] * hu * hv * jac * std::pow(s, g.dim - 2);
            if (w == 0.0) continue;
            fn(s, t, buf.data());
            for (int k = 0; k < nout; ++k) {
                acc[k] += w * buf[k];
                acc_abs[k] += w * std::abs(buf[k]);
            }
        }
    }
}

// Pairwise sum of rows [lo, hi) of a row-major table, fixed tree shape.
void pairwise_sum(const std::vector<double>& table, std::size_t lo, std::size_t hi, int width, double* out) {
    if (hi - lo == 1) {
        for (int k = 0; k < width; ++k) out[k] = table[lo * width + k];
        return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::vector<double> a(width), b(width);
    pairwise_sum(table, lo, mid, width, a.data());
    pairwise_sum(table, mid, hi, width, b.data());
    for (int k = 0; k < width; ++k) out[k] = a[k] + b[k];
}

}  // namespace

QuadResult integrate_axial(const QuadratureGrid& grid, int nout, const AxialFn& fn, ExecPolicy policy) {
    if (grid.dim < 3) throw std::invalid_argument("integrate_axial: dimension must be >= 3");
    const PanelSet ps = make_panels(grid);
    const GaussRule rule = gauss_legendre(grid.gl_order);
    const std::size_t nu = ps.u.size() - 1, nv = ps.v.size() - 1;
    const std::size_t npanels = nu * nv;
    // per panel: coarse[nout], fine[nout], fine_abs[nout]
    const int width = 3 * nout;
    std::vector<double> table(npanels * width, 0.0);

    auto work = [&](std::size_t idx, std::vector<double>& buf, std::vector<double>& scratch) {
        const std::size_t iu = idx / nv, iv = idx % nv;
        double* row = table.data() + idx * width;
        const double u0 = ps.u[iu], u1 = ps.u[iu + 1], v0 = ps.v[iv], v1 = ps.v[iv + 1];
        std::fill(scratch.begin(), scratch.end(), 0.0);
        panel_rule(grid, rule, ps.polar, u0, u1, v0, v1, nout, fn, row, scratch.data(), buf);
        const double um = 0.5 * (u0 + u1), vm = 0.5 * (v0 + v1);
        panel_rule(grid, rule, ps.polar, u0, um, v0, vm, nout, fn, row + nout, row + 2 * nout, buf);
        panel_rule(grid, rule, ps.polar, um, u1, v0, vm, nout, fn, row + nout, row + 2 * nout, buf);
        panel_rule(grid, rule, ps.polar, u0, um, vm, v1, nout, fn, row + nout, row + 2 * nout, buf);
        panel_rule(grid, rule, ps.polar, um, u1, vm, v1, nout, fn, row + nout, row + 2 * nout, buf);
    };

    if (policy == ExecPolicy::parallel) {
#pragma omp parallel
        {
            std::vector<double> buf(nout), scratch(nout);
#pragma omp for schedule(dynamic, 4)
            for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(npanels); ++idx) work(idx, buf, scratch);
        }
    } else {
        std::vector<double> buf(nout), scratch(nout);
        for (std::size_t idx = 0; idx < npanels; ++idx) work(idx, buf, scratch);
    }

    std::vector<double> total(width);
    pairwise_sum(table, 0, npanels, width, total.data());
    QuadResult r;
    r.value.resize(nout);
    r.error.resize(nout);
    r.magnitude.resize(nout);
    r.evaluations = static_cast<std::int64_t>(npanels) * 5 * grid.gl_order * grid.gl_order;
    for (int k = 0; k < nout; ++k) {
        r.value[k] = total[nout + k];
        r.error[k] = std::abs(total[nout + k] - total[k]);
        r.magnitude[k] = total[2 * nout + k];
        if (r.error[k] > 1e-9 * r.magnitude[k] + 1e-300) r.converged = false;
    }
    return r;
}

QuadValue integrate_axial(const QuadratureGrid& grid, Harmonic a, Harmonic b,
                          const std::function<double(double, double)>& fn, ExecPolicy policy) {
    const double ang = angular_weight(grid.dim, a, b);
    QuadValue out;
    if (ang == 0.0) return out;
    const auto r = integrate_axial(
        grid, 1, [&](double s, double t, double* o) { o[0] = fn(s, t); }, policy);
    out.value = ang * r.value[0];
    out.error = ang * r.error[0];
    out.magnitude = ang * r.magnitude[0];
    out.converged = r.converged;
    return out;
}

MonteCarloEstimate monte_carlo_gaussian(int dim, const std::function<double(const std::vector<double>&)>& f,
                                        std::uint64_t samples, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
    std::vector<double> x(dim);
    double mean = 0.0, m2 = 0.0;
    for (std::uint64_t i = 0; i < samples; ++i) {
        for (auto& v : x) v = gauss(rng);
        const double y = f(x);
        const double d = y - mean;
        mean += d / static_cast<double>(i + 1);
        m2 += d * (y - mean);
    }
    const double scale = std::pow(std::numbers::pi, 0.5 * dim);
    MonteCarloEstimate est;
    est.mean = scale * mean;
    est.std_error = scale * std::sqrt(m2 / static_cast<double>(samples - 1) / static_cast<double>(samples));
    est.samples = samples;
    est.seed = seed;
    return est;
}

double closed_J(int n) { return sphere_area(n) / (n * (n + 2.0)); }

double closed_A1(int n) {
    const BubbleProfile b(n);
    return b.alpha * b.alpha * sphere_area(n) * (n - 2.0) * (n - 2.0) / std::pow(2.0, n - 1);
}

namespace {
double critical_energy(int n) {
    const BubbleProfile b(n);
    const double beta = std::tgamma(0.5 * n) * std::tgamma(0.5 * n) / std::tgamma(static_cast<double>(n));
    return std::pow(b.alpha, b.p + 1.0) * sphere_area(n) * 0.5 * beta;
}
}  // namespace

double closed_A2(int n) { return (n - 2.0) * (n - 2.0) / (4.0 * n) * critical_energy(n); }
double closed_C0(int n) { return critical_energy(n) / n; }

double closed_A3(int n) {
    const BubbleProfile b(n);
    return b.p * std::pow(b.alpha, b.p + 1.0) * (n - 2.0) * (n - 2.0) / std::pow(2.0, n - 1) * closed_J(n);
}

double printed_A3(int n) {
    const BubbleProfile b(n);
    return b.p * std::pow(b.alpha, 0.5 * (n + 2.0)) * (n - 2.0) * (n - 2.0) / std::pow(2.0, n - 1) * closed_J(n);
}

namespace {

// Mode-0 average over S^{N-2} of ∂_11 U, i.e. Δ_ξ̄ U / (N-1).
double avg_d11(const BubbleProfile& b, double s, double t) {
    const double q = 1.0 + s * s + t * t;
    const double n1 = b.dim - 1.0;
    const double c1 = -2.0 * b.gamma * b.alpha, c2 = 4.0 * b.gamma * (b.gamma + 1.0) * b.alpha;
    return (c1 * std::pow(q, -b.gamma - 1.0) * n1 + c2 * s * s * std::pow(q, -b.gamma - 2.0)) / n1;
}

}  // namespace

ConstantsTable compute_constants(int n, const SpectralPair& sp, double h_aa, double h_jj, double dn0,
                                 const ConstantsOptions& opt) {
    if (n < 3) throw std::invalid_argument("compute_constants: N must be >= 3");
    if (sp.dim != n) throw std::invalid_argument("compute_constants: spectral pair dimension mismatch");
    const BubbleProfile b(n);
    QuadratureGrid grid = QuadratureGrid::whole(n);
    grid.gl_order = opt.gl_order;
    enum { iPZ, iA2, iA3, iA4, iA5, iC0, iA7, iDJJ, iD1, iC1, iJ, iCnt };
    const auto r = integrate_axial(grid, iCnt, [&](double s, double t, double* o) {
        const double r2 = s * s + t * t;
        const double u = b.value_r2(r2);
        const double up = std::pow(u, b.p);
        const double pot = b.potential_r2(r2);
        const double zd = z_dilation_r2(b, r2);
        const double zn = b.dr_over_r(r2) * t;
        const double z0 = sp.value(std::sqrt(r2));
        const double logu = std::log(u);
        o[iPZ] = pot * zd;
        o[iA2] = up * logu * zd;
        o[iA3] = pot * t * zn;
        o[iA4] = pot * z0;
        o[iA5] = up * logu * z0;
        o[iC0] = zn * zn;
        o[iA7] = up * z0;
        o[iDJJ] = avg_d11(b, s, t) * z0;
        o[iD1] = z0 * z0;
        o[iC1] = zd * zd;
        o[iJ] = t * t * std::pow(1.0 + r2, -0.5 * (n + 4.0));
    });
    const double ang = angular_weight(n, {}, {});
    auto val = [&](int k) { return ang * r.value[k]; };
    auto err = [&](int k) { return ang * r.error[k]; };

    ConstantsTable c;
    c.dim = n;
    c.lambda1 = sp.lambda1;
    c.h_aa = h_aa;
    c.h_jj = h_jj;
    c.dn0 = dn0;
    const double two = std::pow(2.0, 2 - n);
    c.A1 = -b.alpha * two * val(iPZ);
    c.err_A1 = b.alpha * two * err(iPZ);
    c.A2 = val(iA2);
    c.err_A2 = err(iA2);
    c.A3 = -b.alpha * (n - 2.0) * 0.5 * two * val(iA3);
    c.err_A3 = b.alpha * (n - 2.0) * 0.5 * two * err(iA3);
    c.A4 = b.alpha * two * val(iA4);
    c.err_A4 = b.alpha * two * err(iA4);
    c.A5 = val(iA5);
    c.err_A5 = err(iA5);
    c.C0 = val(iC0);
    c.err_C0 = err(iC0);
    c.A6 = c.C0;
    c.err_A6 = c.err_C0;
    c.A7 = b.gamma * val(iA7);
    c.err_A7 = b.gamma * err(iA7);
    c.djj_z0 = val(iDJJ);
    c.D1 = val(iD1);
    c.err_D1 = err(iD1);
    c.c1 = val(iC1);
    c.J = val(iJ);
    c.D2 = 2.0 * h_jj * dn0 * c.djj_z0;
    c.err_D2 = 2.0 * std::abs(h_jj * dn0) * err(iDJJ);

    c.A1_closed = closed_A1(n);
    c.A2_closed = closed_A2(n);
    c.A3_closed = closed_A3(n);
    c.C0_closed = closed_C0(n);
    c.A3_printed = printed_A3(n);
    c.A3_printed_rel = std::abs(c.A3 - c.A3_printed) / std::abs(c.A3_printed);
    if (opt.strict_printed_a3 && c.A3_printed_rel > opt.a3_tol) {
        std::ostringstream msg;
        msg << "compute_constants: A3 quadrature " << c.A3 << " disagrees with the printed closed form "
            << c.A3_printed << " (relative " << c.A3_printed_rel << ")";
        throw std::runtime_error(msg.str());
    }
    return c;
}

std::vector<IdentityCheck> verify_appendix_identities(int n, const std::vector<double>& h_diag, double tol,
                                                      int gl_order) {
    if (static_cast<int>(h_diag.size()) != n - 1)
        throw std::invalid_argument("verify_appendix_identities: H diagonal must have N-1 entries");
    const BubbleProfile b(n);
    QuadratureGrid grid = QuadratureGrid::whole(n);
    grid.gl_order = gl_order;
    double h_sum = 0.0;
    for (double h : h_diag) h_sum += h;

    enum { iUpZ, iD11Z, iDNNZ, iXiD11DN, iUp1, iDN2, iDs2, iCnt };
    const auto r = integrate_axial(grid, iCnt, [&](double s, double t, double* o) {
        const double r2 = s * s + t * t;
        const AxialJet j = bubble_jet(b, s, t);
        const double zd = z_dilation_r2(b, r2);
        const double up = std::pow(j.f, b.p);
        const double d11 = avg_d11(b, s, t);
        o[iUpZ] = up * zd;
        o[iD11Z] = d11 * zd;
        o[iDNNZ] = j.ftt * zd;
        o[iXiD11DN] = t * d11 * j.ft;
        o[iUp1] = up * j.f;
        o[iDN2] = j.ft * j.ft;
        o[iDs2] = j.fs * j.fs;
    });
    const double w0 = angular_weight(n, {}, {});
    const double w1 = angular_weight(n, {1, 1}, {1, 1});
    auto val = [&](int k, double w = 0) { return (w == 0 ? w0 : w) * r.value[k]; };
    auto mag = [&](int k, double w = 0) { return (w == 0 ? w0 : w) * r.magnitude[k]; };

    std::vector<IdentityCheck> out;
    auto push_zero = [&](const std::string& name, double lhs, double scale) {
        IdentityCheck c{name, lhs, 0.0, std::abs(lhs) / scale, scale, tol, false};
        c.pass = c.residual < tol;
        out.push_back(c);
    };
    auto push_eq = [&](const std::string& name, double lhs, double rhs) {
        IdentityCheck c{name, lhs, rhs, std::abs(lhs - rhs) / std::abs(rhs), std::abs(rhs), tol, false};
        c.pass = c.residual < tol;
        out.push_back(c);
    };
    push_zero("(i) int U^p Z_{N+1} = 0", val(iUpZ), mag(iUpZ));
    push_zero("(ii) int d11U Z_{N+1} = 0", val(iD11Z), mag(iD11Z));
    push_zero("(ii) int dNNU Z_{N+1} = 0", val(iDNNZ), mag(iDNNZ));
    push_zero("(ii) H_ij int dijU Z_{N+1} = 0", h_sum * val(iD11Z), std::max(1.0, std::abs(h_sum)) * mag(iD11Z));
    const double c0 = val(iDN2);
    push_eq("(iii) int xi_N H_ij dijU dNU = H_jj C0 / 2", h_sum * val(iXiD11DN), 0.5 * h_sum * c0);
    push_eq("(iv) int U^{p+1} = N int |dNU|^2", val(iUp1), n * c0);
    push_eq("(v) int |d1U|^2 = C0", val(iDs2, w1), c0);
    // off-diagonal pairs: degree-1 harmonics with different components, and degree 1 against degree 0
    const double off1 = integrate_axial(grid, {1, 1}, {1, 2}, [&](double s, double t) {
        const AxialJet j = bubble_jet(b, s, t);
        return j.fs * j.fs;
    }).value;
    const double off2 = integrate_axial(grid, {1, 1}, {0, 0}, [&](double s, double t) {
        const AxialJet j = bubble_jet(b, s, t);
        return j.fs * j.ft;
    }).value;
    push_zero("(v) int d1U d2U = 0", off1, c0);
    push_zero("(v) int d1U dNU = 0", off2, c0);
    return out;
}

double h1_axial(const BubbleProfile& b, const SpectralPair& sp, const ProjectionInput& in, double s, double t) {
    const int n = b.dim;
    const double rho = std::pow(in.eps, (n - 1.0) / (n - 2.0));
    const double l = in.eps * in.dn / (rho * in.mu);
    const double r2 = s * s + t * t;
    const AxialJet u = bubble_jet(b, s, t);
    const double ubar = bubble_jet(b, s, t, -2.0 * l).f;
    const double up = std::pow(u.f, b.p);
    const double hdd = in.h_jj * avg_d11(b, s, t);  // isotropic part of H_ij ∂_ij U
    const double z0 = sp.value(std::sqrt(r2));
    double h = b.potential_r2(r2) * ubar;
    h += in.eps * (up * std::log(u.f) - b.gamma * up * std::log(in.mu) - 2.0 * in.dn * hdd - sp.lambda1 * in.e * z0);
    h += rho * in.mu * (-2.0 * t * hdd + (in.h_aa + in.h_jj) * u.ft);
    return h;
}

Projections project_h1(int n, const ProjectionInput& in, const ConstantsTable& c, const SpectralPair& sp,
                       int gl_order) {
    if (!(in.dn > 0) || !(in.mu > 0) || !(in.eps > 0)) throw std::invalid_argument("project_h1: need eps, mu, d_N > 0");
    const BubbleProfile b(n);
    const double rho = std::pow(in.eps, (n - 1.0) / (n - 2.0));
    Projections p;
    p.plane_distance = in.eps * in.dn / (rho * in.mu);
    p.radius = in.delta / rho;
    if (p.radius < 4.0 * p.plane_distance)
        throw std::invalid_argument("project_h1: truncation radius delta/rho too small for this eps");
    QuadratureGrid grid = QuadratureGrid::half(n, p.plane_distance, p.radius);
    grid.gl_order = gl_order;
    auto integrand = [&](double s, double t, double* o) {
        const double h = h1_axial(b, sp, in, s, t);
        const double r2 = s * s + t * t;
        o[0] = h * z_dilation_r2(b, r2);
        o[1] = h * b.dr_over_r(r2) * t;
        o[2] = h * sp.value(std::sqrt(r2));
    };
    const auto r = integrate_axial(grid, 3, integrand);
    const double ang = angular_weight(n, {}, {});
    p.p_dilation = ang * r.value[0];
    p.p_normal = ang * r.value[1];
    p.p_ground = ang * r.value[2];
    p.err_dilation = ang * r.error[0];
    p.err_normal = ang * r.error[1];
    p.err_ground = ang * r.error[2];
    // h1 is a degree-0 harmonic in ξ̄, Z_l for l < N is degree 1: the projections vanish by orthogonality
    p.p_tangential.assign(n - 1, 0.0);
    for (int l = 1; l <= n - 1; ++l)
        p.p_tangential[l - 1] = angular_weight(n, {0, 0}, {1, l}) * r.value[0];

    const double ratio = in.mu / in.dn;
    p.pred_dilation = in.eps * (-c.A1 * std::pow(ratio, n - 2) + c.A2);
    p.pred_normal = rho * (c.A3 * std::pow(ratio, n - 1) + c.A6 * in.mu * in.h_aa);
    p.pred_ground = in.eps * (c.A4 * std::pow(ratio, n - 2) + c.A5 - c.A7 * std::log(in.mu) -
                              sp.lambda1 * in.e * c.D1 - 2.0 * in.h_jj * in.dn * c.djj_z0);

    // part of R^N below the Dirichlet plane
    QuadratureGrid below;
    below.dim = n;
    below.domain = QuadratureGrid::Domain::half_space;
    below.gl_order = gl_order;
    below.s_max = grid.r_far;
    below.t_min = -grid.r_far;
    below.t_max = -p.plane_distance;
    below.t_centers = {0.0, -2.0 * p.plane_distance};
    const auto tail = integrate_axial(below, 3, integrand);
    p.tail_dilation = ang * tail.value[0];
    return p;
}

}  // namespace kcrit
