#include "kcrit/geometry.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace kcrit {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

HypersurfaceModel HypersurfaceModel::sphere(int n, double radius, SubmanifoldKind sub) {
    if (n < 3 || !(radius > 0)) throw std::invalid_argument("sphere: need n >= 3 and R > 0");
    if (sub == SubmanifoldKind::clifford_torus && n != 4)
        throw std::invalid_argument("sphere: the Clifford torus is only available in S^3 (n = 4)");
    HypersurfaceModel m;
    m.kind = ModelKind::sphere;
    m.sub = sub;
    m.n = n;
    m.major = radius;
    return m;
}

HypersurfaceModel HypersurfaceModel::torus(int n, double major_radius, double minor_radius) {
    if (n < 3 || !(minor_radius > 0) || !(major_radius > minor_radius))
        throw std::invalid_argument("torus: need n >= 3 and R > r > 0");
    HypersurfaceModel m;
    m.kind = ModelKind::torus;
    m.n = n;
    m.major = major_radius;
    m.minor = minor_radius;
    return m;
}

HypersurfaceModel HypersurfaceModel::ellipsoid(std::vector<double> semi_axes) {
    if (semi_axes.size() < 3) throw std::invalid_argument("ellipsoid: need at least 3 semi-axes");
    for (double a : semi_axes)
        if (!(a > 0)) throw std::invalid_argument("ellipsoid: semi-axes must be positive");
    HypersurfaceModel m;
    m.kind = ModelKind::ellipsoid;
    m.n = static_cast<int>(semi_axes.size());
    m.axes = std::move(semi_axes);
    return m;
}

std::string HypersurfaceModel::name() const {
    switch (kind) {
        case ModelKind::sphere: return sub == SubmanifoldKind::clifford_torus ? "sphere/clifford" : "sphere";
        case ModelKind::torus: return "torus";
        case ModelKind::ellipsoid: return "ellipsoid";
    }
    return "?";
}

std::vector<double> HypersurfaceModel::k_periods() const {
    const double tau = 2.0 * std::numbers::pi;
    switch (kind) {
        case ModelKind::sphere:
            if (sub == SubmanifoldKind::clifford_torus) return {tau * major / std::sqrt(2.0), tau * major / std::sqrt(2.0)};
            return {tau * major};
        case ModelKind::torus: return {tau * (major - minor)};
        case ModelKind::ellipsoid: return {tau};
    }
    return {};
}

VectorXd HypersurfaceModel::k_point(const std::vector<double>& y) const {
    VectorXd x = VectorXd::Zero(n);
    switch (kind) {
        case ModelKind::sphere:
            if (sub == SubmanifoldKind::clifford_torus) {
                const double c = major / std::sqrt(2.0);
                const double u = y[0] / c, v = y[1] / c;
                x << c * std::cos(u), c * std::sin(u), c * std::cos(v), c * std::sin(v);
            } else {
                x[0] = major * std::cos(y[0] / major);
                x[1] = major * std::sin(y[0] / major);
            }
            break;
        case ModelKind::torus: {
            const double rho = major - minor;
            x[0] = rho * std::cos(y[0] / rho);
            x[1] = rho * std::sin(y[0] / rho);
            break;
        }
        case ModelKind::ellipsoid:
            x[0] = axes[0] * std::cos(y[0]);
            x[1] = axes[1] * std::sin(y[0]);
            break;
    }
    return x;
}

VectorXd HypersurfaceModel::inner_normal(const VectorXd& x) const {
    switch (kind) {
        case ModelKind::sphere: return -x / x.norm();
        case ModelKind::torus: {
            VectorXd c = VectorXd::Zero(n);
            const double p = std::hypot(x[0], x[1]);
            c[0] = major * x[0] / p;
            c[1] = major * x[1] / p;
            const VectorXd d = x - c;
            return -d / d.norm();
        }
        case ModelKind::ellipsoid: {
            VectorXd g(n);
            for (int i = 0; i < n; ++i) g[i] = x[i] / (axes[i] * axes[i]);
            return -g / g.norm();
        }
    }
    return x;
}

double HypersurfaceModel::level(const VectorXd& x) const {
    switch (kind) {
        case ModelKind::sphere: return x.norm() - major;
        case ModelKind::torus: {
            VectorXd c = VectorXd::Zero(n);
            const double p = std::hypot(x[0], x[1]);
            c[0] = major * x[0] / p;
            c[1] = major * x[1] / p;
            return (x - c).norm() - minor;
        }
        case ModelKind::ellipsoid: {
            double s = 0;
            for (int i = 0; i < n; ++i) s += x[i] * x[i] / (axes[i] * axes[i]);
            return s - 1.0;
        }
    }
    return 0;
}

namespace {

// 4th-order central first derivative of the K parametrization along y_a.
VectorXd dk(const HypersurfaceModel& m, std::vector<double> y, int a, double h = 1e-3) {
    const double y0 = y[a];
    auto at = [&](double s) {
        y[a] = y0 + s;
        return m.k_point(y);
    };
    return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
}

// Mixed/pure second derivative of the K parametrization.
VectorXd ddk(const HypersurfaceModel& m, std::vector<double> y, int a, int b, double h = 1e-3) {
    if (a == b) {
        const double y0 = y[a];
        auto at = [&](double s) {
            y[a] = y0 + s;
            return m.k_point(y);
        };
        return (-at(2 * h) + 16 * at(h) - 30 * at(0) + 16 * at(-h) - at(-2 * h)) / (12 * h * h);
    }
    auto shifted = [&](double s) {
        auto z = y;
        z[b] += s;
        return dk(m, z, a, h);
    };
    return (-shifted(2 * h) + 8 * shifted(h) - 8 * shifted(-h) + shifted(-2 * h)) / (12 * h);
}

VectorXd unit(int n, int i) {
    VectorXd e = VectorXd::Zero(n);
    e[i] = 1.0;
    return e;
}

}  // namespace

MatrixXd HypersurfaceModel::frame(const std::vector<double>& y) const {
    const int kk = k();
    MatrixXd f(n, n - 1);
    for (int a = 0; a < kk; ++a) {
        VectorXd t = dk(*this, y, a);
        for (int b = 0; b < a; ++b) t -= t.dot(f.col(b)) * f.col(b);
        f.col(a) = t.normalized();
    }
    if (sub == SubmanifoldKind::circle) {
        for (int i = 2; i < n; ++i) f.col(kk + i - 2) = unit(n, i);
        return f;
    }
    const VectorXd nu = inner_normal(k_point(y));
    int col = kk;
    for (int i = 0; i < n && col < n - 1; ++i) {
        VectorXd v = unit(n, i);
        v -= v.dot(nu) * nu;
        for (int b = 0; b < col; ++b) v -= v.dot(f.col(b)) * f.col(b);
        if (v.norm() > 1e-6) f.col(col++) = v.normalized();
    }
    return f;
}

std::vector<double> HypersurfaceModel::locate_on_k(const VectorXd& q, double tol) const {
    if (q.size() != n) throw std::invalid_argument("locate_on_k: point has wrong dimension");
    std::vector<double> y;
    switch (kind) {
        case ModelKind::sphere:
            if (sub == SubmanifoldKind::clifford_torus) {
                const double c = major / std::sqrt(2.0);
                y = {c * std::atan2(q[1], q[0]), c * std::atan2(q[3], q[2])};
            } else {
                y = {major * std::atan2(q[1], q[0])};
            }
            break;
        case ModelKind::torus: y = {(major - minor) * std::atan2(q[1], q[0])}; break;
        case ModelKind::ellipsoid: y = {std::atan2(q[1] / axes[1], q[0] / axes[0])}; break;
    }
    const double dist = (k_point(y) - q).norm();
    if (dist > tol * std::max(1.0, q.norm())) {
        std::ostringstream msg;
        msg << "point is not on K (distance " << dist << ")";
        throw std::invalid_argument(msg.str());
    }
    return y;
}

MatrixXd ShapeData::jacobi_coefficient() const {
    const int nn = n - 1 - k;
    MatrixXd c = MatrixXd::Zero(nn, nn);
    for (int m = 0; m < nn; ++m)
        for (int l = 0; l < nn; ++l) {
            double v = 0;
            for (int a = 0; a < k; ++a) v += R(k + m, a, a, k + l);
            for (int a = 0; a < k; ++a)
                for (int cc = 0; cc < k; ++cc) v -= Gamma(cc, a, m) * Gamma(a, cc, l);
            c(m, l) = v;
        }
    return c;
}

namespace {

void fill_gamma(const HypersurfaceModel& m, const std::vector<double>& y, ShapeData& s, bool zero) {
    const int kk = s.k, nn = s.n - 1 - kk;
    s.gamma.assign(kk * kk * nn, 0.0);
    s.minimality.assign(nn, 0.0);
    if (zero) return;
    for (int c = 0; c < kk; ++c)
        for (int a = 0; a < kk; ++a) {
            VectorXd acc = ddk(m, y, a, c);
            if (!m.k_isometric()) {
                // k = 1 with a non-unit-speed parametrization: curvature vector of the curve
                const VectorXd d1 = dk(m, y, 0);
                const double sp = d1.squaredNorm();
                acc = acc / sp - d1.dot(acc) * d1 / (sp * sp);
            }
            for (int i = 0; i < nn; ++i) s.gamma[(c * kk + a) * nn + i] = acc.dot(s.frame.col(kk + i));
        }
    for (int i = 0; i < nn; ++i)
        for (int a = 0; a < kk; ++a) s.minimality[i] += s.Gamma(a, a, i);
}

void fill_traces(ShapeData& s) {
    s.sum_aa = s.sum_jj = 0;
    for (int a = 0; a < s.k; ++a) s.sum_aa += s.H(a, a);
    for (int i = s.k; i < s.n - 1; ++i) s.sum_jj += s.H(i, i);
}

}  // namespace

ShapeData shape_fd(const HypersurfaceModel& m, const std::vector<double>& y, double h) {
    ShapeData s;
    s.n = m.n;
    s.k = m.k();
    s.q = m.k_point(y);
    s.frame = m.frame(y);
    s.H.resize(m.n - 1, m.n - 1);
    for (int b = 0; b < m.n - 1; ++b) {
        const VectorXd e = s.frame.col(b);
        auto nu = [&](double t) { return m.inner_normal(s.q + t * e); };
        const VectorXd dnu = (-nu(2 * h) + 8 * nu(h) - 8 * nu(-h) + nu(-2 * h)) / (12 * h);
        for (int a = 0; a < m.n - 1; ++a) s.H(a, b) = -s.frame.col(a).dot(dnu);
    }
    fill_traces(s);
    fill_gamma(m, y, s, false);
    return s;
}

ShapeData shape_at(const HypersurfaceModel& m, const std::vector<double>& y) {
    if (m.kind == ModelKind::ellipsoid) return shape_fd(m, y);
    ShapeData s;
    s.n = m.n;
    s.k = m.k();
    s.q = m.k_point(y);
    s.frame = m.frame(y);
    s.analytic = true;
    s.H = MatrixXd::Zero(m.n - 1, m.n - 1);
    if (m.kind == ModelKind::sphere) {
        s.H.diagonal().setConstant(1.0 / m.major);
    } else {
        s.H(0, 0) = -1.0 / (m.major - m.minor);
        for (int i = 1; i < m.n - 1; ++i) s.H(i, i) = 1.0 / m.minor;
    }
    fill_traces(s);
    // great circles and the inner equator are geodesics of ∂Ω
    fill_gamma(m, y, s, m.sub == SubmanifoldKind::circle);
    return s;
}

ShapeData shape_at(const HypersurfaceModel& m, const VectorXd& q) { return shape_at(m, m.locate_on_k(q)); }

VectorXd fermi_chart(const HypersurfaceModel& m, double y, const VectorXd& x) {
    if (m.sub != SubmanifoldKind::circle || m.kind == ModelKind::ellipsoid)
        throw std::invalid_argument("fermi_chart: closed form only for the sphere great circle and the torus");
    const int nb = m.n - 2;  // dimension of x̄
    if (x.size() != nb + 1) throw std::invalid_argument("fermi_chart: x must have N components");
    const VectorXd xb = x.head(nb);
    const double xn = x[nb];
    const double rho = xb.norm();
    VectorXd dir = VectorXd::Zero(nb);
    if (rho > 0) dir = xb / rho;
    VectorXd out = VectorXd::Zero(m.n);
    if (m.kind == ModelKind::sphere) {
        const double R = m.major;
        const double c = std::cos(rho / R), s = std::sin(rho / R);
        out[0] = R * c * std::cos(y / R);
        out[1] = R * c * std::sin(y / R);
        // sin(ρ/R)/ρ · x̄ written to stay smooth at ρ = 0
        const double sinc = rho > 1e-8 ? s / rho : (1.0 / R) * (1.0 - rho * rho / (6 * R * R));
        for (int i = 0; i < nb; ++i) out[2 + i] = R * sinc * xb[i];
        return out * (1.0 - xn / R);
    }
    const double R = m.major, r = m.minor;
    const double theta = y / (R - r);
    const double w0 = -std::cos(rho / r);
    const double sinc = rho > 1e-8 ? std::sin(rho / r) / rho : (1.0 / r) * (1.0 - rho * rho / (6 * r * r));
    const double rad = R + (r - xn) * w0;
    out[0] = rad * std::cos(theta);
    out[1] = rad * std::sin(theta);
    for (int i = 0; i < nb; ++i) out[2 + i] = (r - xn) * sinc * xb[i];
    return out;
}

namespace {

MatrixXd pullback_metric(const HypersurfaceModel& m, double y, const VectorXd& x, double h) {
    const int n = m.n;
    MatrixXd d(n, n);
    auto ups = [&](const VectorXd& z) { return fermi_chart(m, z[0], z.tail(n - 1)); };
    VectorXd z(n);
    z[0] = y;
    z.tail(n - 1) = x;
    const double c[3] = {45.0, -9.0, 1.0};
    for (int j = 0; j < n; ++j) {
        VectorXd acc = VectorXd::Zero(n);
        for (int s = 1; s <= 3; ++s) {
            VectorXd zp = z, zm = z;
            zp[j] += s * h;
            zm[j] -= s * h;
            acc += c[s - 1] * (ups(zp) - ups(zm));
        }
        d.col(j) = acc / (60 * h);
    }
    return d.transpose() * d;
}

double fit_slope(const std::vector<double>& r, const std::vector<double>& e) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(r.size());
    for (int i = 0; i < n; ++i) {
        const double lx = std::log(r[i]), ly = std::log(e[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

ExpansionReport fermi_metric_expansion_check(const HypersurfaceModel& m, double y, const VectorXd& direction,
                                             int m_first, int m_last) {
    const int n = m.n, nb = n - 2;
    if (direction.size() != nb + 1) throw std::invalid_argument("expansion check: direction must have N components");
    const ShapeData sd = shape_at(m, std::vector<double>{y});
    const MatrixXd H = sd.H;
    const MatrixXd H2 = H * H;
    const double scale = m.kind == ModelKind::torus ? m.minor : m.major;
    const double fd_h = 1e-3 * scale;
    ExpansionReport rep;
    std::vector<double> rem_ab_third;
    const VectorXd dir = direction.normalized();

    const MatrixXd g0 = pullback_metric(m, y, VectorXd::Zero(nb + 1), fd_h);
    for (int j = 0; j < nb; ++j) rep.base_offdiag = std::max(rep.base_offdiag, std::abs(g0(0, 1 + j)));

    for (int lev = m_first; lev <= m_last; ++lev) {
        const double rad = std::ldexp(scale, -lev);
        const VectorXd x = rad * dir;
        const VectorXd xb = x.head(nb);
        const double xn = x[nb];
        const MatrixXd g = pullback_metric(m, y, x, fd_h);
        if (!(g.determinant() > 0)) throw std::runtime_error("expansion check: Fermi chart folds over");
        double e_ij = 0, e_ab = 0, e_ab3 = 0, e_aj = 0;
        for (int i = 0; i < nb; ++i)
            for (int j = 0; j < nb; ++j) {
                double curv = 0;
                for (int s = 0; s < nb; ++s)
                    for (int t = 0; t < nb; ++t) curv += sd.R(1 + i, 1 + s, 1 + t, 1 + j) * xb[s] * xb[t];
                const double expect = (i == j ? 1.0 : 0.0) - 2 * xn * H(1 + i, 1 + j) + curv / 3.0 + xn * xn * H2(1 + i, 1 + j);
                e_ij = std::max(e_ij, std::abs(g(1 + i, 1 + j) - expect));
            }
        {
            double curv = 0;
            for (int s = 0; s < nb; ++s)
                for (int l = 0; l < nb; ++l) curv += sd.R(1 + s, 0, 0, 1 + l) * xb[s] * xb[l];
            const double base = 1.0 - 2 * xn * H(0, 0) + xn * xn * H2(0, 0);
            e_ab = std::abs(g(0, 0) - (base + curv));
            e_ab3 = std::abs(g(0, 0) - (base + curv / 3.0));
        }
        for (int j = 0; j < nb; ++j) {
            const double expect = -2 * xn * H(0, 1 + j);
            e_aj = std::max(e_aj, std::abs(g(0, 1 + j) - expect));
        }
        rep.radii.push_back(rad);
        rep.rem_ij.push_back(e_ij);
        rep.rem_ab.push_back(e_ab);
        rem_ab_third.push_back(e_ab3);
        rep.rem_aj.push_back(std::max(e_aj, 1e-300));
        rep.max_g_aN = std::max(rep.max_g_aN, std::abs(g(0, n - 1)));
        for (int i = 0; i < nb; ++i) rep.max_g_iN = std::max(rep.max_g_iN, std::abs(g(1 + i, n - 1)));
        rep.max_g_NN_dev = std::max(rep.max_g_NN_dev, std::abs(g(n - 1, n - 1) - 1.0));
    }
    rep.slope_ij = fit_slope(rep.radii, rep.rem_ij);
    const double s_full = fit_slope(rep.radii, rep.rem_ab);
    const double s_third = fit_slope(rep.radii, rem_ab_third);
    if (s_full >= s_third) {
        rep.slope_ab = s_full;
        rep.ab_reading = "R_sabl";
    } else {
        rep.slope_ab = s_third;
        rep.rem_ab = rem_ab_third;
        rep.ab_reading = "(1/3) R_sabl";
    }
    rep.slope_aj = fit_slope(rep.radii, rep.rem_aj);
    return rep;
}

// ---------------------------------------------------------------- Jacobi operator

int JacobiOperator::grid_size() const {
    int g = 1;
    for (int p : points) g *= p;
    return g;
}

namespace {

double mode_of(int j, int m) { return j <= m / 2 ? j : j - m; }

MatrixXd fourier_d2(int m, double period) {
    if (m % 2) throw std::invalid_argument("Fourier grid needs an even number of points");
    // closed form of the even-grid spectral second derivative on [0, 2π), Nyquist mode included
    MatrixXd d(m, m);
    const double h = 2.0 * std::numbers::pi / m;
    const double scale = std::pow(2.0 * std::numbers::pi / period, 2);
    for (int j = 0; j < m; ++j)
        for (int l = 0; l < m; ++l) {
            if (j == l) {
                d(j, l) = -(static_cast<double>(m) * m + 2.0) / 12.0;
            } else {
                const double sn = std::sin((j - l) * h / 2.0);
                d(j, l) = -((j - l) % 2 ? -1.0 : 1.0) / (2.0 * sn * sn);
            }
            d(j, l) *= scale;
        }
    return d;
}

void build_matrix(JacobiOperator& op) {
    const int g = op.grid_size(), nc = op.ncomp;
    MatrixXd lap;
    if (op.k == 1) {
        lap = fourier_d2(op.points[0], op.periods[0]);
    } else {
        const MatrixXd d1 = fourier_d2(op.points[0], op.periods[0]);
        const MatrixXd d2 = fourier_d2(op.points[1], op.periods[1]);
        const int m1 = op.points[0], m2 = op.points[1];
        lap = MatrixXd::Zero(g, g);
        for (int a = 0; a < m1; ++a)
            for (int b = 0; b < m2; ++b) {
                for (int a2 = 0; a2 < m1; ++a2) lap(a * m2 + b, a2 * m2 + b) += d1(a, a2);
                for (int b2 = 0; b2 < m2; ++b2) lap(a * m2 + b, a * m2 + b2) += d2(b, b2);
            }
    }
    op.matrix = MatrixXd::Zero(g * nc, g * nc);
    for (int c = 0; c < nc; ++c) op.matrix.block(c * g, c * g, g, g) = lap;
    for (int j = 0; j < g; ++j)
        for (int l = 0; l < nc; ++l)
            for (int m = 0; m < nc; ++m) op.matrix(l * g + j, m * g + j) -= op.coef[j](m, l);
    double w = 1.0;
    for (int a = 0; a < op.k; ++a) w *= op.periods[a] / op.points[a];
    op.weights = VectorXd::Constant(g * nc, w);
}

std::vector<std::vector<int>> all_modes(const JacobiOperator& op) {
    std::vector<std::vector<int>> out;
    if (op.k == 1) {
        for (int j = 0; j < op.points[0]; ++j) out.push_back({static_cast<int>(mode_of(j, op.points[0]))});
    } else {
        for (int a = 0; a < op.points[0]; ++a)
            for (int b = 0; b < op.points[1]; ++b)
                out.push_back({static_cast<int>(mode_of(a, op.points[0])), static_cast<int>(mode_of(b, op.points[1]))});
    }
    return out;
}

double laplace_symbol(const JacobiOperator& op, const std::vector<int>& mode) {
    double lam = 0;
    const double tau = 2.0 * std::numbers::pi;
    for (int a = 0; a < op.k; ++a) lam -= std::pow(tau * mode[a] / op.periods[a], 2);
    return lam;
}

std::string mode_name(const std::vector<int>& mode) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < mode.size(); ++i) os << (i ? "," : "") << mode[i];
    os << ")";
    return os.str();
}

}  // namespace

std::vector<std::pair<std::vector<int>, double>> JacobiOperator::modal_eigenvalues() const {
    if (!constant) throw std::logic_error("modal eigenvalues need constant coefficients");
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(coef[0]);
    std::vector<std::pair<std::vector<int>, double>> out;
    for (const auto& mode : all_modes(*this)) {
        const double lam = laplace_symbol(*this, mode);
        for (int i = 0; i < ncomp; ++i) out.push_back({mode, lam - es.eigenvalues()[i]});
    }
    return out;
}

VectorXd JacobiOperator::dense_eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(matrix, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
}

double JacobiOperator::smallest_abs_eigenvalue() const {
    double best = 1e300;
    if (constant) {
        for (const auto& [mode, ev] : modal_eigenvalues()) best = std::min(best, std::abs(ev));
    } else {
        const VectorXd ev = dense_eigenvalues();
        for (int i = 0; i < ev.size(); ++i) best = std::min(best, std::abs(ev[i]));
    }
    return best;
}

JacobiOperator make_jacobi(const std::vector<double>& periods, int resolution, const MatrixXd& c) {
    if (periods.empty() || periods.size() > 2) throw std::invalid_argument("make_jacobi: K must be a circle or a 2-torus");
    if (c.rows() != c.cols() || c.rows() < 1) throw std::invalid_argument("make_jacobi: coefficient must be square");
    JacobiOperator op;
    op.k = static_cast<int>(periods.size());
    op.ncomp = static_cast<int>(c.rows());
    op.periods = periods;
    op.points.assign(op.k, resolution);
    op.coef.assign(op.grid_size(), c);
    op.constant = true;
    build_matrix(op);
    return op;
}

JacobiOperator assemble_jacobi(const HypersurfaceModel& m, int resolution) {
    if (!m.k_isometric())
        throw std::invalid_argument("assemble_jacobi: unsupported K (needs an isometric circle or flat torus chart)");
    JacobiOperator op;
    op.k = m.k();
    op.ncomp = m.normal_dim();
    op.periods = m.k_periods();
    op.points.assign(op.k, resolution);
    const int g = op.grid_size();
    op.coef.resize(g);
    for (int j = 0; j < g; ++j) {
        std::vector<double> y(op.k);
        if (op.k == 1) {
            y[0] = op.periods[0] * j / resolution;
        } else {
            y[0] = op.periods[0] * (j / resolution) / resolution;
            y[1] = op.periods[1] * (j % resolution) / resolution;
        }
        op.coef[j] = shape_at(m, y).jacobi_coefficient();
    }
    op.constant = true;
    for (int j = 1; j < g; ++j)
        if ((op.coef[j] - op.coef[0]).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + op.coef[0].cwiseAbs().maxCoeff()))
            op.constant = false;
    if (op.constant)
        for (int j = 1; j < g; ++j) op.coef[j] = op.coef[0];
    build_matrix(op);
    return op;
}

namespace {

// In-place forward (sign -1) or inverse transform over a 1- or 2-D periodic grid.
void fft_grid(std::vector<cplx>& data, const std::vector<int>& pts, bool forward) {
    Eigen::FFT<double> fft;
    auto run = [&](std::vector<cplx>& v) {
        std::vector<cplx> out;
        if (forward) fft.fwd(out, v);
        else fft.inv(out, v);
        v = out;
    };
    if (pts.size() == 1) {
        run(data);
        return;
    }
    const int m1 = pts[0], m2 = pts[1];
    std::vector<cplx> row(m2), col(m1);
    for (int a = 0; a < m1; ++a) {
        for (int b = 0; b < m2; ++b) row[b] = data[a * m2 + b];
        run(row);
        for (int b = 0; b < m2; ++b) data[a * m2 + b] = row[b];
    }
    for (int b = 0; b < m2; ++b) {
        for (int a = 0; a < m1; ++a) col[a] = data[a * m2 + b];
        run(col);
        for (int a = 0; a < m1; ++a) data[a * m2 + b] = col[a];
    }
}

double derivative_sup(const JacobiOperator& op, const VectorXd& d, int order) {
    const int g = op.grid_size();
    const auto modes = all_modes(op);
    const double tau = 2.0 * std::numbers::pi;
    double best = 0;
    std::vector<std::pair<int, int>> dirs;
    if (order == 1) {
        for (int a = 0; a < op.k; ++a) dirs.push_back({a, -1});
    } else {
        for (int a = 0; a < op.k; ++a)
            for (int b = a; b < op.k; ++b) dirs.push_back({a, b});
    }
    for (int c = 0; c < op.ncomp; ++c) {
        std::vector<cplx> hat(g);
        for (int j = 0; j < g; ++j) hat[j] = d[c * g + j];
        fft_grid(hat, op.points, true);
        for (auto [a, b] : dirs) {
            std::vector<cplx> w(g);
            for (int j = 0; j < g; ++j) {
                const auto& md = modes[j];
                auto ik = [&](int dir) {
                    const bool nyq = 2 * md[dir] == op.points[dir];
                    return nyq && order == 1 ? cplx(0) : cplx(0, tau * md[dir] / op.periods[dir]);
                };
                cplx f = ik(a);
                if (b >= 0) f *= ik(b);
                w[j] = f * hat[j];
            }
            fft_grid(w, op.points, false);
            for (int j = 0; j < g; ++j) best = std::max(best, std::abs(w[j]));
        }
    }
    return best;
}

}  // namespace

VectorXd solve_jacobi_dense(const JacobiOperator& op, const VectorXd& f) {
    return op.matrix.fullPivLu().solve(f);
}

JacobiSolution solve_jacobi(const JacobiOperator& op, const VectorXd& f, double tol) {
    const int g = op.grid_size(), nc = op.ncomp;
    if (f.size() != g * nc) throw std::invalid_argument("solve_jacobi: right-hand side has wrong size");
    JacobiSolution sol;
    const double cscale = 1.0 + op.coef[0].cwiseAbs().maxCoeff();
    if (op.constant) {
        sol.method = "fft";
        const auto modes = all_modes(op);
        std::vector<std::vector<cplx>> hat(nc, std::vector<cplx>(g));
        for (int c = 0; c < nc; ++c) {
            for (int j = 0; j < g; ++j) hat[c][j] = f[c * g + j];
            fft_grid(hat[c], op.points, true);
        }
        for (int j = 0; j < g; ++j) {
            // (λ_m I - c^T) d̂ = f̂, rows indexed by l
            MatrixXd a = -op.coef[0].transpose();
            a.diagonal().array() += laplace_symbol(op, modes[j]);
            Eigen::JacobiSVD<MatrixXd> svd(a);
            const double smin = svd.singularValues().minCoeff();
            if (smin < tol * cscale) {
                std::ostringstream msg;
                msg << "solve_jacobi: degenerate Jacobi operator, kernel at Fourier mode " << mode_name(modes[j])
                    << " (|eigenvalue| " << smin << ")";
                throw std::runtime_error(msg.str());
            }
            Eigen::VectorXcd rhs(nc);
            for (int c = 0; c < nc; ++c) rhs[c] = hat[c][j];
            const Eigen::VectorXcd x = a.cast<cplx>().partialPivLu().solve(rhs);
            for (int c = 0; c < nc; ++c) hat[c][j] = x[c];
        }
        sol.d.resize(g * nc);
        for (int c = 0; c < nc; ++c) {
            fft_grid(hat[c], op.points, false);
            for (int j = 0; j < g; ++j) sol.d[c * g + j] = hat[c][j].real();
        }
    } else {
        sol.method = "dense";
        const double smin = op.smallest_abs_eigenvalue();
        if (smin < tol * cscale) {
            std::ostringstream msg;
            msg << "solve_jacobi: degenerate Jacobi operator (|eigenvalue| " << smin << ")";
            throw std::runtime_error(msg.str());
        }
        sol.d = solve_jacobi_dense(op, f);
    }
    const double fn = f.norm();
    sol.residual = fn > 0 ? (op.matrix * sol.d - f).norm() / fn : (op.matrix * sol.d).norm();
    const double finf = f.cwiseAbs().maxCoeff();
    if (finf > 0)
        sol.bound_constant =
            (sol.d.cwiseAbs().maxCoeff() + derivative_sup(op, sol.d, 1) + derivative_sup(op, sol.d, 2)) / finf;
    return sol;
}

}  // namespace kcrit
