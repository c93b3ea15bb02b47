#include "kcrit/construct.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace kcrit {

namespace {

// Same profile as smooth_cutoff with its first two derivatives, written through u = log(f0/f1)
// so that χ' = -χ(1-χ)u' stays finite near the ends.
struct CutoffJet {
    double f = 1, d1 = 0, d2 = 0;
};

CutoffJet cutoff_jet(double r, double a, double b) {
    CutoffJet c;
    if (r <= a) return c;
    if (r >= b) return {0, 0, 0};
    const double w = b - a, x = (r - a) / w, y = 1.0 - x;
    const double u = -1.0 / x + 1.0 / y;
    const double du = 1.0 / (x * x) + 1.0 / (y * y), d2u = -2.0 / (x * x * x) + 2.0 / (y * y * y);
    c.f = u > 0 ? std::exp(-u) / (1.0 + std::exp(-u)) : 1.0 / (1.0 + std::exp(u));
    const double q = c.f * (1.0 - c.f);
    c.d1 = -q * du / w;
    c.d2 = (-(1.0 - 2.0 * c.f) * (-q * du) * du - q * d2u) / (w * w);
    return c;
}

// Radial function F(r) with F', F'' and the derived axial quantities at (s, τ).
struct RadialJet {
    double f = 0, lap = 0, lap_bar = 0, fs = 0, ft = 0;
};

RadialJet radial_axial(int n, double f, double f1, double f2, double s, double tau) {
    RadialJet j;
    j.f = f;
    const double r = std::hypot(s, tau);
    if (r < 1e-12) {
        j.lap = n * f2;
        j.lap_bar = (n - 1) * f2;
        return j;
    }
    const double cs = s / r, ct = tau / r, fr = f1 / r;
    j.fs = f1 * cs;
    j.ft = f1 * ct;
    j.lap = f2 + (n - 1) * fr;
    j.lap_bar = f2 * cs * cs + fr * (n - 1 - cs * cs);
    return j;
}

// χ Z₀ at radius r: value, first and second radial derivatives, and Δ(χZ₀).
struct GroundJet {
    double f = 0, f1 = 0, f2 = 0, lap = 0;
};

GroundJet ground_jet(const SpectralPair& sp, double r, double a, double b) {
    GroundJet g;
    const CutoffJet c = cutoff_jet(r, a, b);
    if (c.f == 0 && c.d1 == 0) return g;
    const int n = sp.dim;
    const double z = sp.value(r), pot = radial_potential(n, r);
    // Z₀'' from the radial equation Z₀'' + (N-1)Z₀'/r + pot Z₀ = λ₁ Z₀
    double z1, z2, z_over_r;
    if (r < 1e-12) {
        z1 = 0;
        z2 = (sp.lambda1 - pot) * z / n;
        z_over_r = z2;
    } else {
        z1 = sp.derivative(r);
        z_over_r = z1 / r;
        z2 = (sp.lambda1 - pot) * z - (n - 1) * z_over_r;
    }
    g.f = c.f * z;
    g.f1 = c.d1 * z + c.f * z1;
    g.f2 = c.d2 * z + 2 * c.d1 * z1 + c.f * z2;
    g.lap = c.f * (sp.lambda1 - pot) * z + c.d2 * z + 2 * c.d1 * z1 + (r > 1e-12 ? (n - 1) * c.d1 * z / r : 0.0);
    return g;
}

double lap_bar_bubble(const BubbleProfile& b, const AxialJet& j, double s, double tau) {
    // U_s / s = c1 (1+r²)^{-γ-1}
    const double q1 = std::pow(1.0 + s * s + tau * tau, -b.gamma - 1.0);
    return j.fss + (b.dim - 2.0) * (-2.0 * b.gamma * b.alpha) * q1;
}

struct NodeTerms {
    double u = 0, ubar = 0, g = 0;  // U, Ū, χZ₀ (value)
    double analytic_value = 0;      // U - Ū + εe χZ₀
    double s_analytic = 0;          // -Ū^p - εeΔ(χZ₀) - P(analytic layers)
};

// Pointwise pieces of S shared by the analytic split and the positivity checks.
NodeTerms node_terms(const ApproxSolution& v, const BubbleProfile& b, const SpectralPair& sp, double s, double t) {
    NodeTerms nt;
    const int n = v.dim;
    const double tau = t - v.shift();
    const AxialJet u = bubble_jet(b, s, tau);
    nt.u = u.f;
    if (v.limit) {
        nt.analytic_value = u.f;
        return nt;
    }
    const double l = v.plane_distance();
    const AxialJet ub = bubble_jet(b, s, tau, -2.0 * l);
    const double ee = v.eps * v.params.e;
    const GroundJet gj = ground_jet(sp, std::hypot(s, tau), v.z0_inner, v.z0_outer);
    const RadialJet gr = radial_axial(n, gj.f, gj.f1, gj.f2, s, tau);
    nt.ubar = ub.f;
    nt.g = gj.f;
    nt.analytic_value = u.f - ub.f + ee * gj.f;

    // P g = β Δ̄g - ρμ(trH + trH² x_N) ∂_t g + ρ²μ² c_s s ∂_s g on g = U - Ū + εe χZ₀
    const double rm = v.rho * v.params.mu, xn = v.x_normal(t);
    const double beta = 2.0 * v.geom.kappa * xn + 3.0 * v.geom.kappa * v.geom.kappa * xn * xn;
    const double first = rm * (v.geom.tr_h + v.geom.tr_h2 * xn);
    const double radial = rm * rm * v.geom.c_s() * s;
    const double lap_bar = lap_bar_bubble(b, u, s, tau) - lap_bar_bubble(b, ub, s, tau + 2.0 * l) + ee * gr.lap_bar;
    const double gt = u.ft - ub.ft + ee * gr.ft, gs = u.fs - ub.fs + ee * gr.fs;
    const double pg = beta * lap_bar - first * gt + radial * gs;

    nt.s_analytic = -std::pow(ub.f, b.p) - ee * gj.lap - pg;
    return nt;
}

// f(v) - U^p evaluated without cancellation: U^p expm1(γε log μ - ε log U + (p-ε) log1p(φ/U)).
double nonlinear_excess(const ApproxSolution& v, const BubbleProfile& b, double u, double phi) {
    const double up = std::pow(u, b.p);
    const double x = phi / u;
    if (!(x > -1.0)) return -up;
    const double y = b.gamma * v.eps * (v.limit ? 0.0 : std::log(v.params.mu)) - v.eps * std::log(u) +
                     (b.p - v.eps) * std::log1p(x);
    return up * std::expm1(y);
}

double nonlinearity(const ApproxSolution& v, const BubbleProfile& b, double value) {
    if (!(value > 0)) return 0.0;
    const double mu_factor = v.limit ? 1.0 : std::pow(v.params.mu, b.gamma * v.eps);
    return mu_factor * std::pow(value, b.p - v.eps);
}

double nonlinearity_derivative(const ApproxSolution& v, const BubbleProfile& b, double value) {
    if (!(value > 0)) return 0.0;
    const double mu_factor = v.limit ? 1.0 : std::pow(v.params.mu, b.gamma * v.eps);
    return mu_factor * (b.p - v.eps) * std::pow(value, b.p - v.eps - 1.0);
}

// Nodal lookup for coefficients that only exist on the grid; the stencil queries exact node coordinates.
std::function<double(double, double)> nodal_function(const AxiField& f) {
    return [f](double s, double t) {
        const auto& g = *f.grid;
        const auto is = std::lower_bound(g.s.begin(), g.s.end(), s);
        const auto it = std::lower_bound(g.t.begin(), g.t.end(), t);
        if (is == g.s.end() || it == g.t.end() || *is != s || *it != t)
            throw std::logic_error("nodal coefficient queried off the grid");
        return f.at(static_cast<int>(is - g.s.begin()), static_cast<int>(it - g.t.begin()));
    };
}

double l2(const AxiField& f) { return std::sqrt(std::max(0.0, f.inner(f))); }

// Z_{N+1}, Z_N, Z₀ centred at t = shift, times the grid cutoff χ̄.
std::vector<AxiField> kernel_fields(const std::shared_ptr<const AxialGrid>& g, const SpectralPair& sp,
                                    double shift = 0.0) {
    const BubbleProfile b(g->dim);
    std::vector<AxiField> z(3, AxiField(g, 0));
    for (int i = 0; i < g->ns(); ++i)
        for (int j = 0; j < g->nt(); ++j) {
            const double s = g->s[i], tau = g->t[j] - shift, r2 = s * s + tau * tau;
            const double chi = g->chi[g->index(i, j)];
            z[0].at(i, j) = chi * z_dilation_r2(b, r2);
            z[1].at(i, j) = chi * b.dr_over_r(r2) * tau;
            z[2].at(i, j) = chi * sp.value(std::sqrt(r2));
        }
    return z;
}

}  // namespace

FrozenGeometry FrozenGeometry::flat(int dim) {
    FrozenGeometry g;
    g.dim = dim;
    return g;
}

FrozenGeometry FrozenGeometry::from_model(const HypersurfaceModel& model, double y, double tol) {
    const ShapeData sd = shape_at(model, std::vector<double>(model.k(), y));
    const int k = sd.k, m = sd.n - 1;
    const Eigen::MatrixXd& h = sd.H;
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    FrozenGeometry g;
    g.dim = model.N();
    g.y = y;
    g.source = model.name();
    double kappa = 0;
    for (int i = k; i < m; ++i) kappa += h(i, i);
    kappa /= (m - k);
    for (int i = k; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            const double target = (i == j) ? kappa : 0.0;
            if (std::abs(h(i, j) - target) > tol * scale) {
                std::ostringstream msg;
                msg << "construct: H is not κ·Id on the normal block at y = " << y << " (entry (" << i << "," << j
                    << ") = " << h(i, j) << ", κ = " << kappa << ")";
                throw std::invalid_argument(msg.str());
            }
        }
    g.kappa = kappa;
    for (int a = 0; a < k; ++a) g.h_aa += h(a, a);
    g.tr_h = h.trace();
    g.tr_h2 = (h * h).trace();
    return g;
}

double ApproxSolution::plane_distance() const {
    if (limit) return plane_ref;
    return eps * params.dn / (rho * params.mu);
}

AxiField ApproxSolution::correction() const {
    AxiField w(grid, 0);
    for (const auto& layer : layers)
        for (std::size_t k = 0; k < w.values.size(); ++k) w.values[k] += layer.values[k];
    return w;
}

AxiField ApproxSolution::values(const SpectralPair& sp) const {
    const BubbleProfile b(dim);
    AxiField out = correction();
    for (int i = 0; i < grid->ns(); ++i)
        for (int j = 0; j < grid->nt(); ++j)
            out.at(i, j) += node_terms(*this, b, sp, grid->s[i], grid->t[j]).analytic_value;
    return out;
}

ApproxSolution initial_approximation(double eps, const FrozenGeometry& geom, const ConstructParams& guess,
                                     const ConstructConfig& cfg) {
    if (eps < 0) throw std::invalid_argument("construct: eps must be non-negative");
    ApproxSolution v;
    v.dim = geom.dim;
    v.eps = eps;
    v.geom = geom;
    v.params = guess;
    v.gamma = cfg.gamma;
    AxialGridSpec spec = cfg.grid;
    if (eps == 0) {
        v.limit = true;
        v.plane_ref = spec.plane;
    } else {
        if (!(guess.mu > 0) || !(guess.dn > 0)) throw std::invalid_argument("construct: need mu, d_N > 0");
        v.rho = std::pow(eps, (geom.dim - 1.0) / (geom.dim - 2.0));
        v.plane_ref = eps * guess.dn / (v.rho * guess.mu);
        v.cutoff_lo = 2.0 * std::pow(eps, -cfg.gamma);
        v.cutoff_hi = 4.0 * std::pow(eps, -cfg.gamma);
        spec.plane = v.plane_ref;
        const double rm = v.rho * guess.mu;
        spec.radius = std::min(cfg.max_radius, cfg.fermi_extent / rm - v.plane_ref);
        if (spec.radius < 2.0 * v.plane_ref) {
            std::ostringstream msg;
            msg << "construct: eps = " << eps << " leaves a Fermi-chart radius " << spec.radius
                << " below twice the plane distance " << v.plane_ref;
            throw std::invalid_argument(msg.str());
        }
        if (spec.radius > v.cutoff_lo) spec.radius = v.cutoff_lo;  // keep χ_ε ≡ 1 on the grid
        v.z0_inner = cfg.z0_inner * v.plane_ref;
        v.z0_outer = cfg.z0_outer * v.plane_ref;
    }
    v.grid = make_axial_grid(geom.dim, spec);
    return v;
}

AxialCoefficients perturbation_coefficients(const ApproxSolution& v) {
    AxialCoefficients c;
    if (v.limit || v.rho == 0) return c;
    const double rm = v.rho * v.params.mu, kappa = v.geom.kappa;
    const double tr_h = v.geom.tr_h, tr_h2 = v.geom.tr_h2, cs = v.geom.c_s(), plane = v.plane_ref;
    if (kappa != 0)
        c.b_bar = [=](double, double t) {
            const double xn = rm * (t + plane);
            return -(2.0 * kappa * xn + 3.0 * kappa * kappa * xn * xn);
        };
    if (tr_h != 0 || tr_h2 != 0) c.b_t = [=](double, double t) { return rm * (tr_h + tr_h2 * rm * (t + plane)); };
    if (cs != 0) c.b_s = [=](double s, double) { return -rm * rm * cs * s; };
    return c;
}

AxiField apply_error_operator(const ApproxSolution& v, const SpectralPair& sp) {
    const BubbleProfile b(v.dim);
    const AxialGrid& g = *v.grid;
    const AxiField w = v.correction();
    const AxialCoefficients coef = perturbation_coefficients(v);
    const AxiField lw = apply_operator(w, coef);  // -A w - pU^{p-1}w
    AxiField out(v.grid, 0);
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            if (out.dirichlet(i, j)) continue;
            const double s = g.s[i], t = g.t[j];
            const NodeTerms nt = node_terms(v, b, sp, s, t);
            const double wv = w.at(i, j);
            const double phi = nt.analytic_value - nt.u + wv;
            const double pot = radial_potential(v.dim, std::hypot(s, t));
            out.at(i, j) = nt.s_analytic + lw.at(i, j) + pot * wv - nonlinear_excess(v, b, nt.u, phi);
        }
    return out;
}

AxiField apply_error_operator_fd(const ApproxSolution& v, const SpectralPair& sp) {
    const BubbleProfile b(v.dim);
    const AxialGrid& g = *v.grid;
    const AxiField vals = v.values(sp);
    const AxiField lv = apply_operator(vals, perturbation_coefficients(v));
    AxiField out(v.grid, 0);
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            if (out.dirichlet(i, j)) continue;
            const double pot = radial_potential(v.dim, std::hypot(g.s[i], g.t[j]));
            out.at(i, j) = lv.at(i, j) + pot * vals.at(i, j) - nonlinearity(v, b, vals.at(i, j));
        }
    return out;
}

std::array<double, 3> kernel_projections(const AxiField& residual, const SpectralPair& sp, double shift) {
    const auto z = kernel_fields(residual.grid, sp, shift);
    return {residual.inner(z[0]), residual.inner(z[1]), residual.inner(z[2])};
}

ProjectedSolver layer_solver(const ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg) {
    AxialCoefficients b = perturbation_coefficients(v);
    if (cfg.linearization == Linearization::current && !v.limit) {
        // replace pU^{p-1} by f'(v) so the step is a Newton step
        const BubbleProfile bp(v.dim);
        const AxiField vals = v.values(sp);
        AxiField shift(v.grid, 0);
        for (int i = 0; i < v.grid->ns(); ++i)
            for (int j = 0; j < v.grid->nt(); ++j)
                shift.at(i, j) = radial_potential(v.dim, std::hypot(v.grid->s[i], v.grid->t[j])) -
                                 nonlinearity_derivative(v, bp, vals.at(i, j));
        b.b_0 = nodal_function(shift);
    }
    return ProjectedSolver(v.grid, 0, b, cfg.decay_index, sp);
}

FitReport fit_parameters(ApproxSolution& v, const ProjectedSolver& solver, const SpectralPair& sp,
                         const ConstructConfig& cfg) {
    FitReport rep;
    rep.before = v.params;
    std::vector<double> zn;
    for (const auto& z : solver.constraints()) zn.push_back(l2(z));
    auto eval = [&](const Eigen::Vector3d& x, double* snorm = nullptr) {
        ApproxSolution trial = v;
        trial.params = {x[0], x[1], x[2]};
        AxiField s = apply_error_operator(trial, sp);
        if (snorm) *snorm = l2(s);
        for (double& val : s.values) val = -val;
        const std::vector<double> lam = solver.multipliers(s);
        Eigen::Vector3d f;
        for (int k = 0; k < 3; ++k) f[k] = lam[k] * zn[k];
        return f;
    };
    Eigen::Vector3d x(v.params.mu, v.params.dn, v.params.e);
    if (cfg.fit_parameters && !v.limit) {
        Eigen::Vector3d f = eval(x);
        for (int it = 0; it < cfg.fit_max_iters; ++it) {
            Eigen::Matrix3d jac;
            for (int c = 0; c < 3; ++c) {
                const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
                Eigen::Vector3d xp = x, xm = x;
                xp[c] += h;
                xm[c] -= h;
                jac.col(c) = (eval(xp) - eval(xm)) / (2 * h);
            }
            const Eigen::Vector3d step = -jac.partialPivLu().solve(f);
            double lambda = 1.0;
            Eigen::Vector3d xn = x + step, fn = f;
            for (int half = 0; half < 20; ++half) {
                xn = x + lambda * step;
                if (xn[0] > 0 && xn[1] > 0) {
                    fn = eval(xn);
                    if (fn.norm() <= f.norm() || lambda < 1e-3) break;
                }
                lambda *= 0.5;
            }
            double rel = 0;
            for (int c = 0; c < 3; ++c) rel = std::max(rel, std::abs(xn[c] - x[c]) / std::max(1.0, std::abs(x[c])));
            x = xn;
            f = fn;
            rep.iterations = it + 1;
            if (rel < cfg.fit_tol) {
                rep.converged = true;
                break;
            }
        }
        v.params = {x[0], x[1], x[2]};
    } else {
        rep.converged = true;
    }
    double snorm = 0;
    const Eigen::Vector3d f = eval(x, &snorm);
    for (int k = 0; k < 3; ++k) rep.multipliers[k] = snorm > 0 ? std::abs(f[k]) / snorm : 0.0;
    rep.after = v.params;
    return rep;
}

FitReport fit_parameters(ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg) {
    return fit_parameters(v, layer_solver(v, sp, cfg), sp, cfg);
}

FitReport fit_parameters_centred(ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg) {
    FitReport rep;
    rep.before = v.params;
    if (!cfg.fit_parameters || v.limit) return fit_parameters(v, sp, cfg);
    const double eps = v.eps, rho = v.rho;
    const FrozenGeometry geom = v.geom;
    // unknowns (μ, L, e) with d_N = L ρ μ / ε, so μ and e move nothing on the grid
    auto params_of = [&](const Eigen::Vector3d& x) { return ConstructParams{x[0], x[1] * rho * x[0] / eps, x[2]}; };
    auto residual = [&](const ApproxSolution& base, const ProjectedSolver& solver, const ConstructParams& p) {
        ApproxSolution trial = base;
        trial.params = p;
        AxiField s = apply_error_operator(trial, sp);
        for (double& val : s.values) val = -val;
        const std::vector<double> lam = solver.multipliers(s);
        Eigen::Vector3d f;
        for (int k = 0; k < 3; ++k) f[k] = lam[k] * l2(solver.constraints()[k]);
        return f;
    };
    auto centred = [&](const Eigen::Vector3d& x, ApproxSolution& out) {
        out = initial_approximation(eps, geom, params_of(x), cfg);
        return layer_solver(out, sp, cfg);
    };
    Eigen::Vector3d x(v.params.mu, v.plane_distance(), v.params.e);
    ApproxSolution cur;
    ProjectedSolver solver = centred(x, cur);
    Eigen::Vector3d f = residual(cur, solver, params_of(x));
    for (int it = 0; it < cfg.fit_max_iters; ++it) {
        Eigen::Matrix3d jac;
        for (int c : {0, 2}) {
            const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
            Eigen::Vector3d xp = x, xm = x;
            xp[c] += h;
            xm[c] -= h;
            jac.col(c) = (residual(cur, solver, params_of(xp)) - residual(cur, solver, params_of(xm))) / (2 * h);
        }
        {
            const double h = 1e-5 * x[1];
            Eigen::Vector3d xp = x, xm = x;
            xp[1] += h;
            xm[1] -= h;
            ApproxSolution vp, vm;
            const ProjectedSolver sp_p = centred(xp, vp), sp_m = centred(xm, vm);
            jac.col(1) = (residual(vp, sp_p, params_of(xp)) - residual(vm, sp_m, params_of(xm))) / (2 * h);
        }
        const Eigen::Vector3d step = -jac.partialPivLu().solve(f);
        double lambda = 1.0;
        Eigen::Vector3d xn = x, fn = f;
        ApproxSolution vn;
        for (int half = 0; half < 12; ++half) {
            xn = x + lambda * step;
            if (xn[0] > 0 && xn[1] > 0) {
                const ProjectedSolver sn = centred(xn, vn);
                fn = residual(vn, sn, params_of(xn));
                if (fn.norm() <= f.norm() || half == 11) {
                    cur = vn;
                    solver = sn;
                    break;
                }
            }
            lambda *= 0.5;
        }
        double rel = 0;
        for (int c = 0; c < 3; ++c) rel = std::max(rel, std::abs(xn[c] - x[c]) / std::max(1.0, std::abs(x[c])));
        x = xn;
        f = fn;
        rep.iterations = it + 1;
        if (rel < cfg.fit_tol) {
            rep.converged = true;
            break;
        }
    }
    cur.params = params_of(x);
    v = cur;
    AxiField s = apply_error_operator(v, sp);
    const double snorm = l2(s);
    for (int k = 0; k < 3; ++k) rep.multipliers[k] = snorm > 0 ? std::abs(f[k]) / snorm : 0.0;
    rep.after = v.params;
    return rep;
}

LayerReport build_next_layer(ApproxSolution& v, const AxiField& h, const ProjectedSolver& solver,
                             const SpectralPair& sp, const ConstructConfig& cfg) {
    if (h.grid != v.grid) throw std::invalid_argument("build_next_layer: residual lives on another grid");
    LayerReport rep;
    rep.order = v.order() + 1;
    const OrthogonalizeReport orth = orthogonalize_rhs(h, sp);
    rep.indices = orth.indices;
    rep.coefficients = orth.coefficients;
    rep.orthogonality = orth.residuals;
    const double hn = l2(h);
    for (std::size_t a = 0; a < orth.indices.size(); ++a) {
        const double zn = l2(solver.constraints()[a]);
        rep.relative_coefficients.push_back(hn > 0 ? std::abs(orth.coefficients[a]) * zn / hn : 0.0);
    }
    for (int j : orth.indices)
        if (orth.residuals[j] > cfg.orth_threshold) {
            std::ostringstream msg;
            msg << "build_next_layer: projected rhs not orthogonal to Z_" << j << " chi (relative "
                << orth.residuals[j] << " > " << cfg.orth_threshold << ")";
            throw OrthogonalityFailure(msg.str(), j);
        }
    AxiField rhs = orth.field;
    for (double& x : rhs.values) x = -x;
    const ProjectedSolution sol = solver.solve(rhs);
    rep.multipliers = sol.multipliers;
    rep.solve_residual = sol.residual;
    rep.layer_norm = sol.phi.weighted_norm(cfg.layer_index);
    v.layers.push_back(sol.phi);
    return rep;
}

LayerReport build_next_layer(ApproxSolution& v, const AxiField& h, const SpectralPair& sp,
                             const ConstructConfig& cfg) {
    return build_next_layer(v, h, layer_solver(v, sp, cfg), sp, cfg);
}

namespace {

// w(t - δ) to second order in δ, Dirichlet nodes restored. Derivatives in the mapped variable v.
AxiField translate_layer(const AxiField& w, double delta) {
    const AxialGrid& g = *w.grid;
    AxiField out = w;
    const int nt = g.nt();
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 1; j + 1 < nt; ++j) {
            const double wv = (w.at(i, j + 1) - w.at(i, j - 1)) / (2 * g.dv);
            const double wvv = (w.at(i, j + 1) - 2 * w.at(i, j) + w.at(i, j - 1)) / (g.dv * g.dv);
            const double wt = wv / g.dt[j];
            const double wtt = (wvv - g.d2t[j] * wt) / (g.dt[j] * g.dt[j]);
            out.at(i, j) += -delta * wt + 0.5 * delta * delta * wtt;
        }
    out.apply_dirichlet();
    return out;
}

// Parameters as (μ, L, e); moving L translates the grid layers with the bubble.
ApproxSolution with_centred_params(const ApproxSolution& v, double mu, double plane, double e, double layer_shift) {
    ApproxSolution out = v;
    out.params = {mu, plane * v.rho * mu / v.eps, e};
    if (layer_shift != 0.0)
        for (auto& w : out.layers) w = translate_layer(w, layer_shift);
    return out;
}

}  // namespace

std::pair<LayerReport, FitReport> build_joint_layer(ApproxSolution& v, const AxiField& s, const ProjectedSolver& solver,
                                                    const SpectralPair& sp, const ConstructConfig& cfg) {
    if (s.grid != v.grid) throw std::invalid_argument("build_joint_layer: residual lives on another grid");
    LayerReport layer;
    FitReport fit;
    layer.order = v.order() + 1;
    layer.indices = solver.indices();
    fit.before = v.params;
    auto negated = [](AxiField f) {
        for (double& x : f.values) x = -x;
        return f;
    };
    const ProjectedSolution base = solver.solve(negated(s));
    const int nc = static_cast<int>(base.multipliers.size());
    const Eigen::Vector3d x(v.params.mu, v.plane_distance(), v.params.e);
    std::array<ProjectedSolution, 3> response;
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    for (int c = 0; c < 3; ++c) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[c]));
        Eigen::Vector3d xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        const double moved = c == 1 ? h : 0.0;
        AxiField ds = apply_error_operator(with_centred_params(v, xp[0], xp[1], xp[2], moved), sp);
        const AxiField sm = apply_error_operator(with_centred_params(v, xm[0], xm[1], xm[2], -moved), sp);
        for (std::size_t k = 0; k < ds.values.size(); ++k) ds.values[k] = (ds.values[k] - sm.values[k]) / (2 * h);
        response[c] = solver.solve(negated(ds));
        for (int k = 0; k < nc; ++k) m(k, c) = response[c].multipliers[k];
    }
    Eigen::Vector3d lam0;
    for (int k = 0; k < nc; ++k) lam0[k] = base.multipliers[k];
    const Eigen::Vector3d dp = cfg.fit_parameters && !v.limit ? Eigen::Vector3d(-m.partialPivLu().solve(lam0))
                                                               : Eigen::Vector3d::Zero();
    AxiField w = base.phi;
    for (int c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < w.values.size(); ++k) w.values[k] += dp[c] * response[c].phi.values[k];
    v = with_centred_params(v, x[0] + dp[0], x[1] + dp[1], x[2] + dp[2], dp[1]);
    const double sn = l2(s);
    for (int k = 0; k < nc; ++k) {
        const double lam = lam0[k] + m.row(k).dot(dp);
        const double zn = l2(solver.constraints()[k]);
        layer.coefficients.push_back(base.multipliers[k]);
        layer.relative_coefficients.push_back(sn > 0 ? std::abs(base.multipliers[k]) * zn / sn : 0.0);
        layer.multipliers.push_back(lam);
        fit.multipliers[k] = sn > 0 ? std::abs(lam) * zn / sn : 0.0;
    }
    layer.orthogonality = base.orthogonality;
    layer.solve_residual = base.residual;
    for (const auto& r : response) layer.solve_residual = std::max(layer.solve_residual, r.residual);
    layer.layer_norm = w.weighted_norm(cfg.layer_index);
    v.layers.push_back(std::move(w));
    fit.after = v.params;
    fit.iterations = 1;
    fit.converged = true;
    return {layer, fit};
}

ConstructParams leading_guess(const FrozenGeometry& geom, const SpectralPair& sp) {
    const Traces tr = geom.traces();
    const auto t = compute_constants(geom.dim, sp, tr.h_aa_sum, tr.h_jj_sum, 1.0);
    const auto root = closed_form_root(t, tr);
    const auto t2 = compute_constants(geom.dim, sp, tr.h_aa_sum, tr.h_jj_sum, root.dn0);
    const auto root2 = closed_form_root(t2, tr);
    return {root2.mu0, root2.dn0, root2.e0};
}

namespace {

OrderResidual record(const ApproxSolution& v, const AxiField& s, const SpectralPair& sp, const ConstructConfig& cfg,
                     const FitReport& fit, const LayerReport& layer) {
    OrderResidual o;
    o.order = v.order();
    o.norm = s.weighted_norm(cfg.residual_index);
    o.params = v.params;
    o.fit = fit;
    o.layer = layer;
    const AxiField vals = v.values(sp);
    o.min_interior = std::numeric_limits<double>::infinity();
    for (int i = 0; i < v.grid->ns(); ++i)
        for (int j = 0; j < v.grid->nt(); ++j) {
            if (j == 0) o.plane_max = std::max(o.plane_max, std::abs(vals.at(i, j)));
            else if (!vals.dirichlet(i, j)) o.min_interior = std::min(o.min_interior, vals.at(i, j));
        }
    return o;
}

}  // namespace

ConstructRun construct_at(double eps, const FrozenGeometry& geom, const ConstructParams& guess, const SpectralPair& sp,
                          const ConstructConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    ConstructRun run;
    run.eps = eps;
    run.guess = guess;
    ApproxSolution v = initial_approximation(eps, geom, guess, cfg);
    FitReport fit = fit_parameters_centred(v, sp, cfg);
    AxiField s = apply_error_operator(v, sp);
    run.orders.push_back(record(v, s, sp, cfg, fit, {}));
    for (int order = 1; order <= cfg.max_order; ++order) {
        const auto [layer, step] = build_joint_layer(v, s, layer_solver(v, sp, cfg), sp, cfg);
        fit = step;
        s = apply_error_operator(v, sp);
        run.orders.push_back(record(v, s, sp, cfg, fit, layer));
    }
    run.solution = std::move(v);
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return run;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

ResidualReport residual_ladder(const std::vector<double>& eps, const FrozenGeometry& geom, const SpectralPair& sp,
                               const ConstructConfig& cfg) {
    ResidualReport rep;
    rep.dim = geom.dim;
    rep.geom = geom;
    rep.config = cfg;
    rep.guess = leading_guess(geom, sp);
    for (double e : eps) rep.runs.push_back(construct_at(e, geom, rep.guess, sp, cfg));
    if (rep.runs.size() >= 2)
        for (int order = 0; order <= cfg.max_order; ++order) {
            std::vector<double> x, y;
            for (const auto& r : rep.runs) {
                x.push_back(r.eps);
                y.push_back(r.orders[order].norm);
            }
            rep.slopes.push_back(loglog_slope(x, y));
        }
    return rep;
}

std::string ResidualReport::json() const {
    using nlohmann::json;
    json j;
    j["dim"] = dim;
    j["geometry"] = {{"source", geom.source}, {"y", geom.y},         {"kappa", geom.kappa},
                     {"h_aa", geom.h_aa},     {"tr_h", geom.tr_h},   {"tr_h2", geom.tr_h2}};
    j["leading_params"] = {{"mu", guess.mu}, {"dn", guess.dn}, {"e", guess.e}};
    j["residual_index"] = config.residual_index;
    j["layer_index"] = config.layer_index;
    j["gamma"] = config.gamma;
    j["linearization"] = config.linearization == Linearization::bubble ? "bubble" : "current";
    j["slopes"] = slopes;
    json runs = json::array();
    for (const auto& r : this->runs) {
        json jr;
        jr["eps"] = r.eps;
        jr["seconds"] = r.seconds;
        jr["plane_distance"] = r.solution.plane_distance();
        jr["grid"] = {{"ns", r.solution.grid->ns()},
                      {"nt", r.solution.grid->nt()},
                      {"radius", r.solution.grid->spec.radius},
                      {"plane", r.solution.plane_ref}};
        jr["global_cutoff"] = {{"lo", r.solution.cutoff_lo}, {"hi", r.solution.cutoff_hi}};
        json orders = json::array();
        for (const auto& o : r.orders) {
            json jo = {{"order", o.order},
                       {"norm", o.norm},
                       {"mu", o.params.mu},
                       {"dn", o.params.dn},
                       {"e", o.params.e},
                       {"fit_iterations", o.fit.iterations},
                       {"fit_converged", o.fit.converged},
                       {"fit_multipliers", o.fit.multipliers},
                       {"min_interior", o.min_interior},
                       {"plane_max", o.plane_max}};
            if (o.order > 0)
                jo["layer"] = {{"relative_c", o.layer.relative_coefficients},
                               {"multipliers", o.layer.multipliers},
                               {"solve_residual", o.layer.solve_residual},
                               {"norm", o.layer.layer_norm},
                               {"norm_over_eps_power", o.layer.layer_norm / std::pow(r.eps, o.order)}};
            orders.push_back(jo);
        }
        jr["orders"] = orders;
        runs.push_back(jr);
    }
    j["runs"] = runs;
    return j.dump(2);
}

std::string ResidualReport::csv() const {
    std::ostringstream out;
    out.precision(12);
    out << "eps,order,norm,slope\n";
    for (const auto& r : runs)
        for (const auto& o : r.orders)
            out << r.eps << ',' << o.order << ',' << o.norm << ','
                << (o.order < static_cast<int>(slopes.size()) ? slopes[o.order] : 0.0) << '\n';
    return out.str();
}

}  // namespace kcrit
