#include "kcrit/params.hpp"

#include <cmath>
#include <sstream>

namespace kcrit {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Vector3d;

namespace {

void require_hypothesis(const Traces& tr) {
    if (!(tr.h_aa_sum < 0)) {
        std::ostringstream msg;
        msg << "hypothesis violated: sum of H_aa over T_qK is " << tr.h_aa_sum
            << " (must be negative for a root with mu0 > 0, dn0 > 0)";
        throw HypothesisViolation(msg.str());
    }
}

}  // namespace

Vector3d leading_system(const ConstantsTable& t, const Traces& tr, double mu, double dn, double e) {
    const int n = t.dim;
    const double r = mu / dn;
    Vector3d f;
    f[0] = -t.A1 * std::pow(r, n - 2) + t.A2;
    f[1] = t.A1 * std::pow(r, n - 1) + t.A1 * t.A6 / t.A3 * mu * tr.h_aa_sum;
    f[2] = t.A4 * std::pow(r, n - 2) + t.A5 - t.A7 * std::log(mu) - t.lambda1 * e - 2 * tr.h_jj_sum * dn * t.djj_z0;
    return f;
}

Vector3d leading_row_scale(const ConstantsTable& t, const Traces& tr, double mu, double dn, double e) {
    const int n = t.dim;
    const double r = mu / dn;
    Vector3d s;
    s[0] = std::max(std::abs(t.A1 * std::pow(r, n - 2)), std::abs(t.A2));
    s[1] = std::max(std::abs(t.A1 * std::pow(r, n - 1)), std::abs(t.A1 * t.A6 / t.A3 * mu * tr.h_aa_sum));
    s[2] = std::max({std::abs(t.A4 * std::pow(r, n - 2)), std::abs(t.A5), std::abs(t.A7 * std::log(mu)),
                     std::abs(t.lambda1 * e), std::abs(2 * tr.h_jj_sum * dn * t.djj_z0)});
    return s.cwiseMax(1.0);
}

Matrix3d leading_jacobian(const ConstantsTable& t, const Traces& tr, double mu, double dn) {
    const int n = t.dim;
    const double r = mu / dn;
    Matrix3d j = Matrix3d::Zero();
    j(0, 0) = -(n - 2) * t.A1 * std::pow(r, n - 3) / dn;
    j(0, 1) = (n - 2) * t.A1 * std::pow(r, n - 2) / dn;
    j(1, 0) = (n - 1) * t.A1 * std::pow(r, n - 2) / dn + t.A1 * t.A6 / t.A3 * tr.h_aa_sum;
    j(1, 1) = -(n - 1) * t.A1 * std::pow(r, n - 1) / dn;
    j(2, 0) = (n - 2) * t.A4 * std::pow(r, n - 3) / dn - t.A7 / mu;
    j(2, 1) = -(n - 2) * t.A4 * std::pow(r, n - 2) / dn - 2 * tr.h_jj_sum * t.djj_z0;
    j(2, 2) = -t.lambda1;
    return j;
}

Matrix3d printed_jacobian(const ConstantsTable& t, const Traces& tr, double mu, double dn) {
    const int n = t.dim;
    const double r = mu / dn;
    Matrix3d j = leading_jacobian(t, tr, mu, dn);
    j(1, 0) = (n - 2) * t.A1 * std::pow(r, n - 2) / dn;
    j(2, 1) = -(n - 2) * t.A4 * std::pow(r, n - 2) / dn - 2 * tr.h_jj_sum * dn * t.djj_z0;
    return j;
}

ClosedForm closed_form_root(const ConstantsTable& t, const Traces& tr) {
    require_hypothesis(tr);
    const int n = t.dim;
    ClosedForm c;
    const double ratio = t.A2 / t.A1;
    c.mu0 = -std::pow(ratio, (n - 1.0) / (n - 2.0)) * t.A3 / (t.A6 * tr.h_aa_sum);
    c.dn0 = -ratio * t.A3 / (t.A6 * tr.h_aa_sum);
    c.e0 = (-2 * c.dn0 * tr.h_jj_sum * t.djj_z0 + t.A2 * t.A4 / t.A1 + t.A5 - t.A7 * std::log(c.mu0)) / t.lambda1;
    return c;
}

ParameterState solve_leading_order(const ConstantsTable& t, const Traces& tr, double eps, const NewtonConfig& cfg,
                                   const Perturbation& perturb) {
    require_hypothesis(tr);
    if (!(cfg.abs_tol > 0) || cfg.max_iters < 1) throw std::invalid_argument("NewtonConfig: tolerances must be positive");
    if (eps < 0) throw std::invalid_argument("solve_leading_order: eps must be non-negative");
    const ClosedForm cf = closed_form_root(t, tr);
    ParameterState st;
    st.dim = t.dim;
    st.eps = eps;
    st.traces = tr;
    st.table = t;
    st.mu_closed = cf.mu0;
    st.dn_closed = cf.dn0;
    st.e_closed = cf.e0;

    Vector3d x = cfg.guess == NewtonConfig::Guess::closed_form ? Vector3d(cf.mu0, cf.dn0, cf.e0)
                                                                : Vector3d(cfg.mu, cfg.dn, cfg.e);
    if (!(x[0] > 0 && x[1] > 0)) throw std::invalid_argument("solve_leading_order: initial mu, dn must be positive");
    auto residual = [&](const Vector3d& v) {
        Vector3d r = leading_system(t, tr, v[0], v[1], v[2]);
        if (perturb && eps > 0) r += perturb(v[0], v[1], v[2], eps);
        return r;
    };
    auto converged = [&](const Vector3d& r, const Vector3d& v) {
        const Vector3d s = leading_row_scale(t, tr, v[0], v[1], v[2]);
        return (r.cwiseAbs().array() <= cfg.abs_tol * s.array()).all();
    };
    Vector3d r = residual(x);
    auto scaled = [&](const Vector3d& v, const Vector3d& res) {
        return res.cwiseQuotient(leading_row_scale(t, tr, v[0], v[1], v[2])).norm();
    };
    // exact Jacobian of F; with a perturbation it seeds Broyden rank-one updates
    Matrix3d jac = leading_jacobian(t, tr, x[0], x[1]);
    const bool broyden = perturb && eps > 0;
    auto fd_jacobian = [&](const Vector3d& v, const Vector3d& rv) {
        Matrix3d j;
        for (int c = 0; c < 3; ++c) {
            Vector3d vp = v;
            const double h = 1e-6 * std::max(1.0, std::abs(v[c]));
            vp[c] += h;
            j.col(c) = (residual(vp) - rv) / h;
        }
        return j;
    };
    bool fresh = !broyden;
    int it = 0;
    while (!converged(r, x)) {
        if (it == cfg.max_iters) {
            std::ostringstream msg;
            msg << "Newton did not converge in " << cfg.max_iters << " iterations (residual " << r.norm() << ")";
            throw std::runtime_error(msg.str());
        }
        ++it;
        if (!broyden) jac = leading_jacobian(t, tr, x[0], x[1]);
        const Vector3d step = jac.partialPivLu().solve(-r);
        const double r0 = scaled(x, r);
        double lam = 1.0;
        Vector3d xn = x + step, rn;
        bool accepted = false;
        for (int h = 0; h < (broyden ? 6 : 40); ++h) {
            xn = x + lam * step;
            if (xn[0] > 0 && xn[1] > 0) {
                rn = residual(xn);
                if (!cfg.damping || scaled(xn, rn) <= r0) {
                    accepted = true;
                    break;
                }
            }
            lam *= 0.5;
        }
        if (!accepted) {
            if (broyden && !fresh) {
                // stale secant model: rebuild by finite differences and retry
                jac = fd_jacobian(x, r);
                fresh = true;
                continue;
            }
            throw std::runtime_error("Newton damping failed to reduce the residual");
        }
        if (broyden) {
            const Vector3d dx = xn - x, dr = rn - r;
            jac += (dr - jac * dx) * dx.transpose() / dx.squaredNorm();
            fresh = false;
        }
        x = xn;
        r = rn;
    }
    st.mu0 = x[0];
    st.dn0 = x[1];
    st.e0 = x[2];
    st.residual = r;
    st.row_scale = leading_row_scale(t, tr, x[0], x[1], x[2]);
    st.iterations = it;
    return st;
}

Perturbation projected_perturbation(const ConstantsTable& t, const SpectralPair& spectral, const Traces& tr,
                                    double delta, int gl_order) {
    return [t, spectral, tr, delta, gl_order](double mu, double dn, double e, double eps) -> Vector3d {
        ProjectionInput in;
        in.eps = eps;
        in.mu = mu;
        in.dn = dn;
        in.e = e;
        in.h_aa = tr.h_aa_sum;
        in.h_jj = tr.h_jj_sum;
        in.delta = delta;
        const Projections p = project_h1(t.dim, in, t, spectral, gl_order);
        const double rho = std::pow(eps, (t.dim - 1.0) / (t.dim - 2.0));
        const Vector3d full(p.p_dilation / eps, t.A1 / t.A3 * p.p_normal / rho, p.p_ground / eps);
        return full - leading_system(t, tr, mu, dn, e);
    };
}

SignReport check_jacobian_signs(const ParameterState& s, double lambda1) {
    const ConstantsTable& t = s.table;
    const int n = t.dim;
    const double mu = s.mu0, dn = s.dn0, haa = s.traces.h_aa_sum;
    SignReport rep;
    rep.F0_exact = leading_jacobian(t, s.traces, mu, dn);
    rep.F0_printed = printed_jacobian(t, s.traces, mu, dn);
    const Vector3d x0(mu, dn, s.e0);
    for (int c = 0; c < 3; ++c) {
        const double h = 1e-4 * std::max(1.0, std::abs(x0[c]));
        Vector3d d1 = Vector3d::Zero(), acc = Vector3d::Zero();
        const double w[2] = {8.0, -1.0};
        for (int k = 1; k <= 2; ++k) {
            Vector3d xp = x0, xm = x0;
            xp[c] += k * h;
            xm[c] -= k * h;
            acc += w[k - 1] * (leading_system(t, s.traces, xp[0], xp[1], xp[2]) -
                               leading_system(t, s.traces, xm[0], xm[1], xm[2]));
        }
        d1 = acc / (12 * h);
        rep.F0_fd.col(c) = d1;
    }
    const double scale = rep.F0_fd.cwiseAbs().maxCoeff();
    rep.fd_mismatch = (rep.F0_exact - rep.F0_fd).cwiseAbs().maxCoeff() / scale;
    rep.printed_mismatch = (rep.F0_printed - rep.F0_fd).cwiseAbs().maxCoeff() / scale;
    if (rep.fd_mismatch > 1e-6) {
        std::ostringstream msg;
        msg << "analytic and finite-difference Jacobians disagree (relative " << rep.fd_mismatch << ")";
        throw std::runtime_error(msg.str());
    }
    rep.det_F0 = rep.F0_exact.determinant();
    const double q = std::pow(mu, n - 2) / std::pow(dn, n - 1);
    rep.det_F0_printed_formula = -lambda1 * (n - 2) * t.A1 * t.A1 * q * haa;
    rep.det_F0_root_formula = lambda1 * (n - 2) * t.A1 * t.A1 * (t.A6 / t.A3) * q * haa;
    rep.A = -(n - 2) * t.A1 * std::pow(mu, n - 3) / std::pow(dn, n - 2);
    rep.B = (n - 2) * t.A1 * q;
    rep.C = -(n - 1) * t.A1 * std::pow(mu, n - 1) / std::pow(dn, n);
    rep.AC_minus_B2 = rep.A * rep.C - rep.B * rep.B;
    rep.M = correction_matrix(s);
    rep.det_M = rep.M.determinant();
    rep.det_M_formula = t.A6 * haa * mu / dn;
    rep.det_F0_positive = rep.det_F0 > 0;
    rep.ac_b2_positive = rep.AC_minus_B2 > 0;
    rep.det_M_nonzero = rep.det_M != 0;
    return rep;
}

Matrix2d correction_matrix(const ParameterState& s, CorrectionMatrix reading) {
    const ConstantsTable& t = s.table;
    const int n = t.dim;
    const double mu = s.mu0, dn = s.dn0;
    const double a = (n - 1) * t.A3 * std::pow(mu, n - 2) / std::pow(dn, n - 1);
    const double b = (n - 1) * t.A3 * std::pow(mu, n - 1) / std::pow(dn, n);
    const double sign = reading == CorrectionMatrix::printed ? 1.0 : -1.0;
    Matrix2d m;
    m << 1.0, -mu / dn, t.A6 * s.traces.h_aa_sum - sign * a, sign * b;
    return m;
}

ParameterState solve_correction_step(const ParameterState& s, int level, const Vector3d& rhs, CorrectionMatrix reading) {
    if (level < 1) throw std::invalid_argument("solve_correction_step: level must be >= 1");
    const ConstantsTable& t = s.table;
    const int n = t.dim;
    const Matrix2d m = correction_matrix(s, reading);
    const double det = m.determinant();
    if (std::abs(det) <= 1e-14 * m.cwiseAbs().maxCoeff() * m.cwiseAbs().maxCoeff())
        throw std::runtime_error("solve_correction_step: correction matrix M is singular");
    const double scale = std::pow(s.eps, level);
    const double r1 = std::pow(s.dn0, n - 2) / ((n - 2) * t.A1 * std::pow(s.mu0, n - 3)) * rhs[0];
    const Eigen::Vector2d sol = m.partialPivLu().solve(scale * Eigen::Vector2d(r1, rhs[1]));
    const Matrix3d j = leading_jacobian(t, s.traces, s.mu0, s.dn0);
    CorrectionLevel c;
    c.level = level;
    c.mu = sol[0];
    c.dn = sol[1];
    // a31 μ_i + a32 d_i - λ1 e_i = ε^i R3
    c.e = (j(2, 0) * c.mu + j(2, 1) * c.dn - scale * rhs[2]) / t.lambda1;
    c.bound_constant = scale > 0 ? std::max({std::abs(c.mu), std::abs(c.dn), std::abs(c.e)}) / scale : 0.0;
    ParameterState out = s;
    std::erase_if(out.corrections, [&](const CorrectionLevel& x) { return x.level == level; });
    out.corrections.push_back(c);
    return out;
}

namespace {

struct LineFit {
    double slope = 0, intercept = 0, r2 = 0;
};

LineFit line_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    LineFit f;
    f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    f.intercept = (sy - f.slope * sx) / n;
    double ss_res = 0, ss_tot = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double pred = f.intercept + f.slope * x[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - sy / n) * (y[i] - sy / n);
    }
    f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

}  // namespace

EpsStructureFit fit_eps_structure(const ConstantsTable& t, const Traces& tr, const std::vector<double>& ladder,
                                  const Perturbation& perturb, const NewtonConfig& cfg) {
    if (ladder.size() < 3) throw std::invalid_argument("fit_eps_structure: need at least three eps values");
    for (std::size_t i = 1; i < ladder.size(); ++i)
        if (!(ladder[i] < ladder[i - 1])) throw std::invalid_argument("eps ladder must be strictly decreasing");
    EpsStructureFit fit;
    std::vector<double> x1, x2, dmu;
    const double mu0 = closed_form_root(t, tr).mu0;
    for (double eps : ladder) {
        const ParameterState s = solve_leading_order(t, tr, eps, cfg, perturb);
        fit.eps.push_back(eps);
        fit.mu.push_back(s.mu0);
        fit.dn.push_back(s.dn0);
        fit.e.push_back(s.e0);
        const double x = std::pow(eps, 1.0 / (t.dim - 2.0));
        x1.push_back(x);
        x2.push_back(x * x);
        dmu.push_back(s.mu0 - mu0);
    }
    const LineFit a = line_fit(x1, dmu);
    fit.slope_mu = a.slope;
    fit.intercept_mu = a.intercept;
    fit.r2_mu = a.r2;
    fit.r2_mu_quadratic = line_fit(x2, dmu).r2;
    return fit;
}

}  // namespace kcrit
