#pragma once

#include "kcrit/bubble.hpp"
#include "kcrit/spectral.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace kcrit {

struct AxialGridSpec {
    int ns = 81;               // nodes in s = |ξ̄| including the axis and the outer edge
    int nt = 161;              // nodes in t = ξ_N including both Dirichlet edges
    double plane = 10.0;       // Dirichlet plane at t = -plane
    double radius = 40.0;      // outer truncation: s = radius and t = radius
    double grading = 3.0;      // sinh stretching strength (0 = uniform)
    double core_spacing = 0;   // if > 0, grading is chosen so the spacing at ξ = 0 equals this
    double cutoff_inner = 0;   // χ = 1 below this |ξ| (0: 0.75 radius)
    double cutoff_outer = 0;   // χ = 0 above this |ξ| (0: radius)

    /// Same domain with (n-1)·factor + 1 nodes per direction.
    AxialGridSpec refined(int factor) const;
};

/// Mapped grid s = S sinh(g u)/sinh(g), t = c sinh(g v), nodes uniform in (u, v).
struct AxialGrid {
    int dim = 7;
    AxialGridSpec spec;
    std::vector<double> s, ds, d2s;  // node values and mapping derivatives in s
    std::vector<double> t, dt, d2t;
    double du = 0, dv = 0;
    std::vector<double> weight;  // trapezoid weight of ∫ · s^{N-2} ds dt (no angular factor)
    std::vector<double> chi;     // χ̄ cutoff at each node

    int ns() const { return spec.ns; }
    int nt() const { return spec.nt; }
    int index(int i, int j) const { return i * spec.nt + j; }
    std::size_t size() const { return s.size() * t.size(); }
};

std::shared_ptr<const AxialGrid> make_axial_grid(int dim, const AxialGridSpec& spec);

/// Smooth cutoff, 1 below a, 0 above b, C^∞ in between.
double smooth_cutoff(double r, double a, double b);

/// Field on the (s, t) grid for one angular mode (0: radial in ξ̄, 1: coefficient of ξ_1/|ξ̄|).
struct AxiField {
    std::shared_ptr<const AxialGrid> grid;
    int mode = 0;
    std::vector<double> values;

    AxiField() = default;
    AxiField(std::shared_ptr<const AxialGrid> g, int m);
    double& at(int i, int j) { return values[grid->index(i, j)]; }
    double at(int i, int j) const { return values[grid->index(i, j)]; }
    bool dirichlet(int i, int j) const;
    /// Zero every flagged boundary node.
    void apply_dirichlet();
    /// sup (1+|ξ|²)^{r/2} |w| over the grid.
    double weighted_norm(double r) const;
    /// ∫_{R^N} w·v with the angular factor of the mode.
    double inner(const AxiField& other) const;
};

AxiField sample_field(std::shared_ptr<const AxialGrid> g, int mode, const std::function<double(double, double)>& f);

/// Axially symmetric perturbation b_ss ∂_ss + b_st ∂_st + b_tt ∂_tt + b_s ∂_s + b_t ∂_t + b_bar Δ̄ + b_0,
/// Δ̄ = ∂_ss + (N-2)/s ∂_s the Laplacian in ξ̄ (discretized in flux form, regular on the axis).
struct AxialCoefficients {
    std::function<double(double, double)> b_ss, b_st, b_tt, b_s, b_t, b_bar, b_0;
    bool empty() const { return !b_ss && !b_st && !b_tt && !b_s && !b_t && !b_bar && !b_0; }
    /// ‖b_ij‖∞ + ‖D b_ij‖∞ + ‖(1+|ξ|) b_i‖∞ on the grid (derivatives by FD).
    double size(const AxialGrid& g) const;
};

/// Constraint set of a mode: kernel indices j with Z_j of that mode (0, N, N+1 for mode 0; 1 for mode 1).
std::vector<int> mode_constraints(int dim, int mode);
/// Z_j χ̄ on the grid, as an axial profile of the given mode.
AxiField constraint_field(std::shared_ptr<const AxialGrid> g, const SpectralPair& spectral, int j);

struct OrthogonalizeReport {
    AxiField field;
    std::vector<int> indices;         // active constraints
    std::vector<double> coefficients; // c_j subtracted
    std::vector<double> residuals;    // |∫ h Z_j χ| / (‖h‖ ‖Z_j χ‖) after the pass, all N+2 indices
    double gram_condition = 0;
};

OrthogonalizeReport orthogonalize_rhs(const AxiField& h, const SpectralPair& spectral);

struct ProjectedProblem {
    int dim = 7;
    double r = 3.0;  // decay index, 2 < r < N-2
    AxialCoefficients b;
    AxiField h;
};

struct ProjectedSolution {
    AxiField phi;
    std::vector<int> indices;
    std::vector<double> multipliers;  // L(φ) = h + Σ λ_j Z_j χ
    std::vector<double> orthogonality;  // relative |∫ φ Z_j χ| for all N+2 indices
    double residual = 0;  // ‖L φ - h - Σ λ Z χ‖∞ / ‖h‖∞ at interior nodes
    double ratio = 0;     // ‖φ‖_{r-2} / ‖h‖_r
};

/// Factor-once form of the saddle system: L φ = h + Σ λ_j Z_j χ, ∫ φ Z_j χ = 0.
class ProjectedSolver {
public:
    /// Throws std::invalid_argument if r is outside (2, N-2) unless allow_inadmissible.
    ProjectedSolver(std::shared_ptr<const AxialGrid> grid, int mode, const AxialCoefficients& b, double r,
                    const SpectralPair& spectral, bool allow_inadmissible = false);
    ProjectedSolution solve(const AxiField& h) const;
    /// λ_j only (one back-substitution, no diagnostics).
    std::vector<double> multipliers(const AxiField& h) const;
    const std::vector<int>& indices() const { return indices_; }
    const std::vector<AxiField>& constraints() const { return z_; }

private:
    struct Factor;
    std::shared_ptr<const AxialGrid> grid_;
    int mode_ = 0;
    double r_ = 3.0;
    AxialCoefficients b_;
    std::vector<int> indices_;
    std::vector<AxiField> z_;
    std::shared_ptr<Factor> factor_;
};

/// Throws std::invalid_argument if r is outside (2, N-2) unless allow_inadmissible.
ProjectedSolution solve_projected(const ProjectedProblem& pb, const SpectralPair& spectral,
                                  bool allow_inadmissible = false);

/// L φ at interior nodes (zero on Dirichlet nodes), same discretization as the solver.
AxiField apply_operator(const AxiField& phi, const AxialCoefficients& b);

/// Pure Laplacian with Dirichlet data g on the boundary (mode 0), for maximum-principle checks.
AxiField solve_laplace_dirichlet(std::shared_ptr<const AxialGrid> g, const std::function<double(double, double)>& data);

enum class RhsKind { bubble_power, algebraic, odd_algebraic, mode_one };
std::string rhs_name(RhsKind k);
/// Un-orthogonalized right-hand side of the family.
AxiField make_rhs(std::shared_ptr<const AxialGrid> g, RhsKind kind, double r);

struct AprioriLevel {
    AxialGridSpec spec;
    std::vector<double> ratios;  // per rhs
    double sup_ratio = 0;
    double residual = 0;
};

struct AprioriReport {
    int dim = 7;
    double r = 3.0;
    std::vector<RhsKind> family;
    std::vector<AprioriLevel> levels;
    double constant = 0;   // sup over levels and rhs
    double variation = 0;  // (max - min) / min of sup_ratio over levels
    double growth = 0;     // sup_ratio(last) / sup_ratio(first)
    // perturbation robustness at the first level
    double delta = 0, b_size = 0, perturbed_constant = 0, perturbation_change = 0;
};

/// Empirical ‖φ‖_{r-2}/‖h‖_r over a ladder of grids (refinements or domain enlargements).
AprioriReport measure_apriori_constant(int dim, double r, const std::vector<AxialGridSpec>& ladder,
                                       const std::vector<RhsKind>& family, const SpectralPair& spectral,
                                       double delta = 0.0, bool allow_inadmissible = false);

void write_field(const AxiField& f, const std::string& path, const std::string& header_json);

}  // namespace kcrit
