#include "kcrit/linsolve.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kcrit {

AxialGridSpec AxialGridSpec::refined(int factor) const {
    AxialGridSpec out = *this;
    out.ns = (ns - 1) * factor + 1;
    out.nt = (nt - 1) * factor + 1;
    out.core_spacing = core_spacing / factor;
    return out;
}

double smooth_cutoff(double r, double a, double b) {
    if (r <= a) return 1.0;
    if (r >= b) return 0.0;
    const double x = (r - a) / (b - a);
    const double f1 = std::exp(-1.0 / (1.0 - x)), f0 = std::exp(-1.0 / x);
    return f1 / (f1 + f0);
}

std::shared_ptr<const AxialGrid> make_axial_grid(int dim, const AxialGridSpec& spec) {
    if (dim < 3) throw std::invalid_argument("axial grid: dimension must be at least 3");
    if (spec.ns < 5 || spec.nt < 5) throw std::invalid_argument("axial grid: need at least 5 nodes per direction");
    if (!(spec.plane > 0) || !(spec.radius > 0) || spec.grading < 0)
        throw std::invalid_argument("axial grid: plane, radius must be positive and grading non-negative");
    auto g = std::make_shared<AxialGrid>();
    g->dim = dim;
    g->spec = spec;
    if (g->spec.cutoff_outer <= 0) g->spec.cutoff_outer = spec.radius;
    if (g->spec.cutoff_inner <= 0) g->spec.cutoff_inner = 0.75 * g->spec.cutoff_outer;
    if (!(g->spec.cutoff_inner < g->spec.cutoff_outer) || g->spec.cutoff_outer > spec.radius)
        throw std::invalid_argument("axial grid: need cutoff_inner < cutoff_outer <= radius");
    const double S = spec.radius, T = spec.radius, L = spec.plane;
    double gr = spec.grading;
    if (spec.core_spacing > 0) {
        // S g / sinh(g) = core_spacing (ns - 1), solved by bisection on g
        const double target = spec.core_spacing * (spec.ns - 1) / S;
        if (target >= 1.0) {
            gr = 0.0;
        } else {
            double lo = 1e-8, hi = 60.0;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                (mid / std::sinh(mid) > target ? lo : hi) = mid;
            }
            gr = 0.5 * (lo + hi);
        }
        g->spec.grading = gr;
    }
    const double sh = gr > 0 ? std::sinh(gr) : 1.0;
    g->du = 1.0 / (spec.ns - 1);
    for (int i = 0; i < spec.ns; ++i) {
        const double u = i * g->du;
        if (gr > 0) {
            g->s.push_back(S * std::sinh(gr * u) / sh);
            g->ds.push_back(S * gr * std::cosh(gr * u) / sh);
            g->d2s.push_back(S * gr * gr * std::sinh(gr * u) / sh);
        } else {
            g->s.push_back(S * u);
            g->ds.push_back(S);
            g->d2s.push_back(0.0);
        }
    }
    g->s.back() = S;
    const double vmin = gr > 0 ? -std::asinh(L * sh / T) / gr : -L / T;
    g->dv = (1.0 - vmin) / (spec.nt - 1);
    for (int j = 0; j < spec.nt; ++j) {
        const double v = vmin + j * g->dv;
        if (gr > 0) {
            g->t.push_back(T * std::sinh(gr * v) / sh);
            g->dt.push_back(T * gr * std::cosh(gr * v) / sh);
            g->d2t.push_back(T * gr * gr * std::sinh(gr * v) / sh);
        } else {
            g->t.push_back(T * v);
            g->dt.push_back(T);
            g->d2t.push_back(0.0);
        }
    }
    g->t.front() = -L;
    g->t.back() = T;
    g->weight.resize(g->size());
    g->chi.resize(g->size());
    for (int i = 0; i < spec.ns; ++i)
        for (int j = 0; j < spec.nt; ++j) {
            const double wu = (i == 0 || i == spec.ns - 1 ? 0.5 : 1.0) * g->du * g->ds[i];
            const double wv = (j == 0 || j == spec.nt - 1 ? 0.5 : 1.0) * g->dv * g->dt[j];
            g->weight[g->index(i, j)] = wu * wv * std::pow(g->s[i], dim - 2);
            g->chi[g->index(i, j)] =
                smooth_cutoff(std::hypot(g->s[i], g->t[j]), g->spec.cutoff_inner, g->spec.cutoff_outer);
        }
    return g;
}

AxiField::AxiField(std::shared_ptr<const AxialGrid> g, int m) : grid(std::move(g)), mode(m) {
    if (m != 0 && m != 1) throw std::invalid_argument("AxiField: only modes 0 and 1 are supported");
    values.assign(grid->size(), 0.0);
}

bool AxiField::dirichlet(int i, int j) const {
    return i == grid->ns() - 1 || j == 0 || j == grid->nt() - 1 || (mode == 1 && i == 0);
}

void AxiField::apply_dirichlet() {
    for (int i = 0; i < grid->ns(); ++i)
        for (int j = 0; j < grid->nt(); ++j)
            if (dirichlet(i, j)) at(i, j) = 0.0;
}

double AxiField::weighted_norm(double r) const {
    double best = 0;
    for (int i = 0; i < grid->ns(); ++i)
        for (int j = 0; j < grid->nt(); ++j) {
            const double q = 1.0 + grid->s[i] * grid->s[i] + grid->t[j] * grid->t[j];
            best = std::max(best, std::pow(q, 0.5 * r) * std::abs(at(i, j)));
        }
    return best;
}

namespace {

double angular_factor(int dim, int mode) {
    const double area = sphere_area(dim - 1);
    return mode == 0 ? area : area / (dim - 1.0);
}

}  // namespace

double AxiField::inner(const AxiField& o) const {
    if (o.grid != grid) throw std::invalid_argument("inner: fields live on different grids");
    if (o.mode != mode) return 0.0;
    double acc = 0;
    for (std::size_t k = 0; k < values.size(); ++k) acc += grid->weight[k] * values[k] * o.values[k];
    return acc * angular_factor(grid->dim, mode);
}

AxiField sample_field(std::shared_ptr<const AxialGrid> g, int mode, const std::function<double(double, double)>& f) {
    AxiField out(g, mode);
    for (int i = 0; i < g->ns(); ++i)
        for (int j = 0; j < g->nt(); ++j) out.at(i, j) = f(g->s[i], g->t[j]);
    return out;
}

double AxialCoefficients::size(const AxialGrid& g) const {
    const double h = 1e-5;
    auto grad = [&](const std::function<double(double, double)>& f, double s, double t) {
        if (!f) return 0.0;
        return std::hypot((f(s + h, t) - f(s - h, t)) / (2 * h), (f(s, t + h) - f(s, t - h)) / (2 * h));
    };
    auto val = [](const std::function<double(double, double)>& f, double s, double t) {
        return f ? std::abs(f(s, t)) : 0.0;
    };
    double sup_b = 0, sup_db = 0, sup_bi = 0;
    for (double s : g.s)
        for (double t : g.t) {
            sup_b = std::max(sup_b, val(b_ss, s, t) + val(b_st, s, t) + val(b_tt, s, t) + val(b_bar, s, t));
            sup_db = std::max(sup_db, grad(b_ss, s, t) + grad(b_st, s, t) + grad(b_tt, s, t) + grad(b_bar, s, t));
            sup_bi = std::max(sup_bi, (1.0 + std::hypot(s, t)) * (val(b_s, s, t) + val(b_t, s, t)) + val(b_0, s, t));
        }
    return sup_b + sup_db + sup_bi;
}

std::vector<int> mode_constraints(int dim, int mode) {
    if (mode == 0) return {0, dim, dim + 1};
    if (mode == 1) return {1};
    throw std::invalid_argument("mode_constraints: only modes 0 and 1");
}

AxiField constraint_field(std::shared_ptr<const AxialGrid> g, const SpectralPair& spectral, int j) {
    const BubbleProfile b(g->dim);
    const int mode = (j >= 1 && j <= g->dim - 1) ? 1 : 0;
    AxiField out(g, mode);
    for (int i = 0; i < g->ns(); ++i)
        for (int k = 0; k < g->nt(); ++k) {
            const double s = g->s[i], t = g->t[k];
            const double z = j == 0 ? spectral.value(std::hypot(s, t)) : kernel_axial(b, j, s, t);
            out.at(i, k) = z * g->chi[g->index(i, k)];
        }
    out.apply_dirichlet();
    return out;
}

namespace {

double l2(const AxiField& f) { return std::sqrt(std::max(0.0, f.inner(f))); }

std::vector<double> all_residuals(const AxiField& h, const std::vector<int>& active, const std::vector<AxiField>& z) {
    const int n = h.grid->dim;
    std::vector<double> out(n + 2, 0.0);
    const double hn = l2(h);
    for (std::size_t k = 0; k < active.size(); ++k) {
        const double zn = l2(z[k]);
        out[active[k]] = hn > 0 && zn > 0 ? std::abs(h.inner(z[k])) / (hn * zn) : 0.0;
    }
    return out;
}

}  // namespace

OrthogonalizeReport orthogonalize_rhs(const AxiField& h, const SpectralPair& spectral) {
    OrthogonalizeReport rep;
    rep.indices = mode_constraints(h.grid->dim, h.mode);
    const int m = static_cast<int>(rep.indices.size());
    std::vector<AxiField> z;
    for (int j : rep.indices) z.push_back(constraint_field(h.grid, spectral, j));
    Eigen::MatrixXd gram(m, m);
    Eigen::VectorXd rhs(m);
    for (int a = 0; a < m; ++a) {
        rhs[a] = h.inner(z[a]);
        for (int b = 0; b < m; ++b) gram(a, b) = z[a].inner(z[b]);
    }
    const Eigen::VectorXd dscale = gram.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd corr = dscale.asDiagonal() * gram * dscale.asDiagonal();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(corr).eigenvalues();
    rep.gram_condition = ev.maxCoeff() / ev.minCoeff();
    if (!(ev.minCoeff() > 1e-12)) throw std::runtime_error("orthogonalize_rhs: Gram matrix of Z_j chi is singular on this grid");
    const Eigen::VectorXd c = gram.ldlt().solve(rhs);
    rep.field = h;
    for (int a = 0; a < m; ++a) {
        rep.coefficients.push_back(c[a]);
        for (std::size_t k = 0; k < rep.field.values.size(); ++k) rep.field.values[k] -= c[a] * z[a].values[k];
    }
    rep.residuals = all_residuals(rep.field, rep.indices, z);
    return rep;
}

namespace {

struct Term {
    int i, j;
    double c;
};

// Stencil of L at interior node (i, j): -Δ - pU^{p-1} + b terms, mode-aware.
void stencil(const AxialGrid& g, int mode, const AxialCoefficients& b, int i, int j, std::vector<Term>& out) {
    out.clear();
    const int n = g.dim;
    const double s = g.s[i], t = g.t[j];
    const double du = g.du, dv = g.dv;
    const double pot = radial_potential(n, std::hypot(s, t));
    const double bss = b.b_ss ? b.b_ss(s, t) : 0.0, bst = b.b_st ? b.b_st(s, t) : 0.0;
    const double btt = b.b_tt ? b.b_tt(s, t) : 0.0, bs = b.b_s ? b.b_s(s, t) : 0.0, bt = b.b_t ? b.b_t(s, t) : 0.0;
    const double radial = 1.0 - (b.b_bar ? b.b_bar(s, t) : 0.0);  // -(1 - b_bar) Δ̄
    const double zeroth = b.b_0 ? b.b_0(s, t) : 0.0;

    // -φ_tt in flux form; b_tt, b_t on the mapped grid
    const double tp = g.dt[j], tpp = g.d2t[j];
    {
        const double hp = g.t[j + 1] - g.t[j], hm = g.t[j] - g.t[j - 1], vol = 0.5 * (hp + hm);
        const double cvv = 1.0 / (tp * tp * dv * dv), cv = -tpp / (tp * tp * tp) / (2 * dv), cvt = 1.0 / (tp * 2 * dv);
        out.push_back({i, j + 1, -1.0 / (hp * vol) + btt * (cvv + cv) + bt * cvt});
        out.push_back({i, j - 1, -1.0 / (hm * vol) + btt * (cvv - cv) - bt * cvt});
        out.push_back({i, j, 1.0 / (hp * vol) + 1.0 / (hm * vol) - 2 * btt * cvv - pot + zeroth});
    }

    if (i == 0) {
        // mode 0 on the axis: φ even in s; finite volume over the ball of radius s_{1/2}
        // flux (s1/2)^{N-2}(φ1-φ0)/s1 over the volume (s1/2)^{N-1}/(N-1)
        const double s1 = g.s[1];
        const double c = 2.0 * (n - 1.0) / (s1 * s1);
        const double sp = g.ds[0];
        const double bc = bss * 2.0 / (sp * sp * du * du);
        out.push_back({1, j, -c * radial + bc});
        out.push_back({0, j, c * radial - bc});
        return;
    }
    // -s^{2-N} ∂_s(s^{N-2} ∂_s φ) as a finite volume over the shell [s_{i-1/2}, s_{i+1/2}]
    const double sp = g.ds[i], spp = g.d2s[i];
    {
        const double hp = g.s[i + 1] - g.s[i], hm = g.s[i] - g.s[i - 1];
        const double sph = 0.5 * (g.s[i + 1] + s), smh = 0.5 * (g.s[i - 1] + s);
        const double vol = (std::pow(sph / s, n - 1) - std::pow(smh / s, n - 1)) * s / (n - 1.0);
        const double fp = radial * std::pow(sph / s, n - 2) / (hp * vol);
        const double fm = radial * std::pow(smh / s, n - 2) / (hm * vol);
        const double cuu = 1.0 / (sp * sp * du * du), cu = -spp / (sp * sp * sp) / (2 * du), cus = 1.0 / (sp * 2 * du);
        out.push_back({i + 1, j, -fp + bss * (cuu + cu) + bs * cus});
        out.push_back({i - 1, j, -fm + bss * (cuu - cu) - bs * cus});
        out.push_back({i, j, fp + fm - 2 * bss * cuu + (mode == 1 ? radial * (n - 2.0) / (s * s) : 0.0)});
    }
    if (bst != 0.0) {
        const double c = bst / (sp * tp * 4 * du * dv);
        out.push_back({i + 1, j + 1, c});
        out.push_back({i - 1, j - 1, c});
        out.push_back({i + 1, j - 1, -c});
        out.push_back({i - 1, j + 1, -c});
    }
}

}  // namespace

AxiField apply_operator(const AxiField& phi, const AxialCoefficients& b) {
    const AxialGrid& g = *phi.grid;
    AxiField out(phi.grid, phi.mode);
    std::vector<Term> st;
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            if (phi.dirichlet(i, j)) continue;
            stencil(g, phi.mode, b, i, j, st);
            double acc = 0;
            for (const auto& term : st) acc += term.c * phi.at(term.i, term.j);
            out.at(i, j) = acc;
        }
    return out;
}

struct ProjectedSolver::Factor {
    std::vector<int> unknown;
    int nu = 0;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
};

ProjectedSolver::ProjectedSolver(std::shared_ptr<const AxialGrid> gp, int mode, const AxialCoefficients& b, double r,
                                 const SpectralPair& spectral, bool allow_inadmissible)
    : grid_(std::move(gp)), mode_(mode), r_(r), b_(b), factor_(std::make_shared<Factor>()) {
    if (!grid_) throw std::invalid_argument("solve_projected: right-hand side has no grid");
    const int n = grid_->dim;
    if (!allow_inadmissible && !(r > 2 && r < n - 2)) {
        std::ostringstream msg;
        msg << "solve_projected: decay index r = " << r << " outside (2, N-2) = (2, " << n - 2 << ")";
        throw std::invalid_argument(msg.str());
    }
    const AxialGrid& g = *grid_;
    indices_ = mode_constraints(n, mode);
    for (int j : indices_) z_.push_back(constraint_field(grid_, spectral, j));

    AxiField probe(grid_, mode);
    auto& unknown = factor_->unknown;
    unknown.assign(g.size(), -1);
    int nu = 0;
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j)
            if (!probe.dirichlet(i, j)) unknown[g.index(i, j)] = nu++;
    factor_->nu = nu;
    const int nc = static_cast<int>(z_.size());
    const double ang = angular_factor(n, mode);

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nu) * (b.b_st ? 9 : 5) + 2 * nc * nu);
    std::vector<Term> st;
    std::vector<double> zscale(nc);
    for (int k = 0; k < nc; ++k) zscale[k] = 1.0 / z_[k].inner(z_[k]);
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            const int row = unknown[g.index(i, j)];
            if (row < 0) continue;
            stencil(g, mode, b, i, j, st);
            for (const auto& term : st) {
                const int col = unknown[g.index(term.i, term.j)];
                if (col >= 0) trip.emplace_back(row, col, term.c);
            }
            for (int k = 0; k < nc; ++k) {
                const double zv = z_[k].at(i, j);
                if (zv == 0.0) continue;
                trip.emplace_back(row, nu + k, -zv);
                trip.emplace_back(nu + k, row, zscale[k] * ang * g.weight[g.index(i, j)] * zv);
            }
        }
    Eigen::SparseMatrix<double> a(nu + nc, nu + nc);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    factor_->lu.analyzePattern(a);
    factor_->lu.factorize(a);
    if (factor_->lu.info() != Eigen::Success) throw std::runtime_error("solve_projected: saddle system is singular");
}

ProjectedSolution ProjectedSolver::solve(const AxiField& h) const {
    if (h.grid != grid_) throw std::invalid_argument("solve_projected: right-hand side lives on another grid");
    if (h.mode != mode_) throw std::invalid_argument("solve_projected: right-hand side has another angular mode");
    const AxialGrid& g = *grid_;
    const auto& unknown = factor_->unknown;
    const int nu = factor_->nu, nc = static_cast<int>(z_.size());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nu + nc);
    for (std::size_t k = 0; k < g.size(); ++k)
        if (unknown[k] >= 0) rhs[unknown[k]] = h.values[k];
    const Eigen::VectorXd x = factor_->lu.solve(rhs);
    if (factor_->lu.info() != Eigen::Success || !x.allFinite())
        throw std::runtime_error("solve_projected: linear solve failed");

    ProjectedSolution sol;
    sol.indices = indices_;
    sol.phi = AxiField(grid_, mode_);
    for (std::size_t k = 0; k < g.size(); ++k)
        if (unknown[k] >= 0) sol.phi.values[k] = x[unknown[k]];
    for (int k = 0; k < nc; ++k) sol.multipliers.push_back(x[nu + k]);

    AxiField lphi = apply_operator(sol.phi, b_);
    double res = 0, hmax = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
        if (unknown[k] < 0) continue;
        double v = lphi.values[k] - h.values[k];
        for (int c = 0; c < nc; ++c) v -= sol.multipliers[c] * z_[c].values[k];
        res = std::max(res, std::abs(v));
        hmax = std::max(hmax, std::abs(h.values[k]));
    }
    sol.residual = hmax > 0 ? res / hmax : res;
    sol.orthogonality = all_residuals(sol.phi, sol.indices, z_);
    const double hn = h.weighted_norm(r_);
    sol.ratio = hn > 0 ? sol.phi.weighted_norm(r_ - 2) / hn : 0.0;
    return sol;
}

std::vector<double> ProjectedSolver::multipliers(const AxiField& h) const {
    const auto& unknown = factor_->unknown;
    const int nu = factor_->nu, nc = static_cast<int>(z_.size());
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nu + nc);
    for (std::size_t k = 0; k < unknown.size(); ++k)
        if (unknown[k] >= 0) rhs[unknown[k]] = h.values[k];
    const Eigen::VectorXd x = factor_->lu.solve(rhs);
    return std::vector<double>(x.data() + nu, x.data() + nu + nc);
}

ProjectedSolution solve_projected(const ProjectedProblem& pb, const SpectralPair& spectral, bool allow_inadmissible) {
    if (!pb.h.grid) throw std::invalid_argument("solve_projected: right-hand side has no grid");
    if (pb.h.grid->dim != pb.dim) throw std::invalid_argument("solve_projected: grid dimension differs from the problem");
    return ProjectedSolver(pb.h.grid, pb.h.mode, pb.b, pb.r, spectral, allow_inadmissible).solve(pb.h);
}

AxiField solve_laplace_dirichlet(std::shared_ptr<const AxialGrid> gp, const std::function<double(double, double)>& data) {
    const AxialGrid& g = *gp;
    AxiField out(gp, 0);
    std::vector<int> unknown(g.size(), -1);
    int nu = 0;
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            if (out.dirichlet(i, j)) out.at(i, j) = data(g.s[i], g.t[j]);
            else unknown[g.index(i, j)] = nu++;
        }
    // -Δ only: drop the potential by adding it back on the diagonal
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(nu);
    std::vector<Term> st;
    for (int i = 0; i < g.ns(); ++i)
        for (int j = 0; j < g.nt(); ++j) {
            const int row = unknown[g.index(i, j)];
            if (row < 0) continue;
            stencil(g, 0, AxialCoefficients{}, i, j, st);
            trip.emplace_back(row, row, radial_potential(g.dim, std::hypot(g.s[i], g.t[j])));
            for (const auto& term : st) {
                const double c = term.c;
                const int col = unknown[g.index(term.i, term.j)];
                if (col >= 0) trip.emplace_back(row, col, c);
                else rhs[row] -= c * out.at(term.i, term.j);
            }
        }
    Eigen::SparseMatrix<double> a(nu, nu);
    a.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(a);
    if (lu.info() != Eigen::Success) throw std::runtime_error("solve_laplace_dirichlet: factorization failed");
    const Eigen::VectorXd x = lu.solve(rhs);
    for (std::size_t k = 0; k < g.size(); ++k)
        if (unknown[k] >= 0) out.values[k] = x[unknown[k]];
    return out;
}

std::string rhs_name(RhsKind k) {
    switch (k) {
        case RhsKind::bubble_power: return "bubble_power";
        case RhsKind::algebraic: return "algebraic";
        case RhsKind::odd_algebraic: return "odd_algebraic";
        case RhsKind::mode_one: return "mode_one";
    }
    return "?";
}

AxiField make_rhs(std::shared_ptr<const AxialGrid> g, RhsKind kind, double r) {
    const BubbleProfile b(g->dim);
    AxiField f;
    switch (kind) {
        case RhsKind::bubble_power:
            f = sample_field(g, 0, [&](double s, double t) { return std::pow(b.value_r2(s * s + t * t), b.p); });
            break;
        case RhsKind::algebraic:
            f = sample_field(g, 0, [&](double s, double t) { return std::pow(1.0 + s * s + t * t, -0.5 * r); });
            break;
        case RhsKind::odd_algebraic:
            f = sample_field(g, 0, [&](double s, double t) { return t * std::pow(1.0 + s * s + t * t, -0.5 * (r + 1)); });
            break;
        case RhsKind::mode_one:
            f = sample_field(g, 1, [&](double s, double t) { return s * std::pow(1.0 + s * s + t * t, -0.5 * (r + 1)); });
            break;
    }
    f.apply_dirichlet();
    return f;
}

AprioriReport measure_apriori_constant(int dim, double r, const std::vector<AxialGridSpec>& ladder,
                                       const std::vector<RhsKind>& family, const SpectralPair& spectral, double delta,
                                       bool allow_inadmissible) {
    if (ladder.empty() || family.empty()) throw std::invalid_argument("measure_apriori_constant: empty ladder or family");
    AprioriReport rep;
    rep.dim = dim;
    rep.r = r;
    rep.family = family;
    auto run_level = [&](const AxialGridSpec& spec, const AxialCoefficients& b) {
        AprioriLevel lev;
        lev.spec = spec;
        const auto g = make_axial_grid(dim, spec);
        for (RhsKind k : family) {
            ProjectedProblem pb;
            pb.dim = dim;
            pb.r = r;
            pb.b = b;
            pb.h = orthogonalize_rhs(make_rhs(g, k, r), spectral).field;
            const ProjectedSolution s = solve_projected(pb, spectral, allow_inadmissible);
            lev.ratios.push_back(s.ratio);
            lev.sup_ratio = std::max(lev.sup_ratio, s.ratio);
            lev.residual = std::max(lev.residual, s.residual);
        }
        return lev;
    };
    double lo = 1e300, hi = 0;
    for (const auto& spec : ladder) {
        rep.levels.push_back(run_level(spec, AxialCoefficients{}));
        lo = std::min(lo, rep.levels.back().sup_ratio);
        hi = std::max(hi, rep.levels.back().sup_ratio);
    }
    rep.constant = hi;
    rep.variation = (hi - lo) / lo;
    rep.growth = rep.levels.back().sup_ratio / rep.levels.front().sup_ratio;
    if (delta > 0) {
        // smooth, decaying coefficients scaled so the hypothesis quantity sits near delta / 2
        AxialCoefficients b;
        b.b_ss = [](double s, double t) { return 1.0 / (1.0 + s * s + t * t); };
        b.b_tt = b.b_ss;
        const auto g0 = make_axial_grid(dim, ladder.front());
        const double unit = b.size(*g0);
        const double scale = 0.5 * delta / unit;
        b.b_ss = [scale](double s, double t) { return scale / (1.0 + s * s + t * t); };
        b.b_tt = b.b_ss;
        rep.delta = delta;
        rep.b_size = b.size(*g0);
        rep.perturbed_constant = run_level(ladder.front(), b).sup_ratio;
        rep.perturbation_change = std::abs(rep.perturbed_constant - rep.levels.front().sup_ratio);
    }
    return rep;
}

void write_field(const AxiField& f, const std::string& path, const std::string& header_json) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_field: cannot open " + path);
    os << "# " << header_json << "\n";
    os.precision(17);
    for (int i = 0; i < f.grid->ns(); ++i)
        for (int j = 0; j < f.grid->nt(); ++j) os << f.grid->s[i] << ' ' << f.grid->t[j] << ' ' << f.at(i, j) << '\n';
}

}  // namespace kcrit
