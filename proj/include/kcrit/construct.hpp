#pragma once

#include <array>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kcrit/geometry.hpp"
#include "kcrit/linsolve.hpp"
#include "kcrit/params.hpp"

namespace kcrit {

/// Curvature data at one frozen point of K, reduced to what the axial operator sees.
/// Requires H_ij = κ δ_ij on the normal block and H_ia = 0.
struct FrozenGeometry {
    int dim = 7;        // N
    double y = 0;       // sample on K
    double kappa = 0;   // common normal eigenvalue of H
    double h_aa = 0;    // Σ_a H_aa
    double tr_h = 0;    // trace of H over all n-1 directions
    double tr_h2 = 0;   // trace of H²
    std::string source = "flat";

    double h_jj() const { return (dim - 1) * kappa; }
    /// Coefficient of ρ²μ² s ∂_s: curvature of ξ̄ plus the tangential Jacobi term.
    double c_s() const { return -(dim - 2.0) * kappa * kappa / 3.0 - kappa * h_aa; }
    Traces traces() const { return {h_aa, h_jj()}; }

    static FrozenGeometry flat(int dim);
    /// Throws std::invalid_argument if H is not isotropic on the normal block (tolerance tol).
    static FrozenGeometry from_model(const HypersurfaceModel& model, double y, double tol = 1e-8);
};

struct ConstructParams {
    double mu = 0, dn = 0, e = 0;
};

enum class Linearization { bubble, current };

struct ConstructConfig {
    AxialGridSpec grid{121, 241, 10.0, 40.0, 3.0, 0.04};  // plane and radius are set per ε
    double max_radius = 60.0;
    double fermi_extent = 0.2;   // the grid keeps ρμ(radius + plane) below this
    double decay_index = 3.0;    // r of the linear solves
    double residual_index = 4.0; // weight of the residual norm
    double layer_index = 2.0;    // weight of the layer norm
    double gamma = 0.75;         // global cutoff χ_ε lives on 2ε^{-γ} < |ξ| < 4ε^{-γ}
    double z0_inner = 0.45, z0_outer = 0.9;  // Z₀ cutoff, fractions of the plane distance
    int max_order = 2;
    Linearization linearization = Linearization::bubble;
    bool fit_parameters = true;
    int fit_max_iters = 25;
    double fit_tol = 1e-12;      // relative parameter step
    double orth_threshold = 1e-6;
};

/// v = U - Ū + ε e χ Z₀ + w₁ + ... + w_I in the stretched half-space above the Dirichlet plane.
/// The grid is laid out around the reference centre t = 0 with its plane at t = -plane_ref;
/// analytic layers are centred at t = shift() so that parameter updates never move the grid.
struct ApproxSolution {
    int dim = 7;
    double eps = 0, rho = 0;
    ConstructParams params;
    FrozenGeometry geom;
    std::shared_ptr<const AxialGrid> grid;
    std::vector<AxiField> layers;
    double plane_ref = 0;
    double z0_inner = 0, z0_outer = 0;  // in ξ units
    double gamma = 0.75, cutoff_lo = 0, cutoff_hi = 0;  // global cutoff radii 2ε^{-γ}, 4ε^{-γ}
    bool limit = false;  // ε = 0: v = U, no reflection, no Z₀ term

    int order() const { return static_cast<int>(layers.size()); }
    double plane_distance() const;  // ε d_N / (ρμ)
    double shift() const { return limit ? 0.0 : plane_distance() - plane_ref; }
    /// x_N = ρμ(t + plane_ref), zero on the plane.
    double x_normal(double t) const { return rho * params.mu * (t + plane_ref); }
    AxiField correction() const;  // Σ w_i
    AxiField values(const SpectralPair& sp) const;
};

ApproxSolution initial_approximation(double eps, const FrozenGeometry& geom, const ConstructParams& guess,
                                     const ConstructConfig& cfg);

/// Coefficients of -A(v) - pU^{p-1} relative to -Δ - pU^{p-1}: what the grid stencil needs on top of itself.
AxialCoefficients perturbation_coefficients(const ApproxSolution& v);

/// S(v) = -A v - μ^{(N-2)ε/2} v_+^{p-ε} at interior nodes (zero on boundary nodes).
/// Analytic layers use closed-form derivatives; the grid layers use the solver's stencil.
AxiField apply_error_operator(const ApproxSolution& v, const SpectralPair& sp);
/// Same quantity with every layer sampled on the grid and differentiated by the stencil.
AxiField apply_error_operator_fd(const ApproxSolution& v, const SpectralPair& sp);

/// ∫ S Z_j χ̄ for j = N+1, N, 0, with Z_j centred at t = shift (the bubble centre).
std::array<double, 3> kernel_projections(const AxiField& residual, const SpectralPair& sp, double shift = 0.0);

/// Saddle solver of the next layer at the current state: L = -A - pU^{p-1} (or -A - f'(v) for
/// Linearization::current) with constraints Z_{N+1}χ̄, Z_Nχ̄, Z₀χ̄.
ProjectedSolver layer_solver(const ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg);

struct FitReport {
    ConstructParams before, after;
    std::array<double, 3> multipliers{};  // |λ_j| ‖Z_jχ̄‖₂ / ‖S‖₂ of L w = -S(v) after the fit
    int iterations = 0;
    bool converged = false;
};

/// Newton on (μ, d_N, e) until L w = -S(v) needs no multipliers: the discrete form of
/// S(v) ⟂ ker L, i.e. the reduced equations for the parameters.
FitReport fit_parameters(ApproxSolution& v, const ProjectedSolver& solver, const SpectralPair& sp,
                         const ConstructConfig& cfg);
FitReport fit_parameters(ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg);
/// Same conditions for v without grid layers, re-laying the grid around the bubble at every trial
/// plane distance (the fixed-grid fit cannot move the plane without moving the bubble off the grid centre).
FitReport fit_parameters_centred(ApproxSolution& v, const SpectralPair& sp, const ConstructConfig& cfg);

struct OrthogonalityFailure : std::runtime_error {
    int index = -1;
    OrthogonalityFailure(const std::string& what, int j) : std::runtime_error(what), index(j) {}
};

struct LayerReport {
    int order = 0;
    std::vector<int> indices;
    std::vector<double> coefficients;   // c_j removed from the residual
    std::vector<double> relative_coefficients;  // |c_j| ‖Z_jχ̄‖₂ / ‖h‖₂
    std::vector<double> orthogonality;  // after the pass, all N+2 indices
    std::vector<double> multipliers;
    double solve_residual = 0;
    double layer_norm = 0;  // ‖w‖_{ε,layer_index}
};

/// Solve L w = -Π h (Π removes the Z_jχ̄ components) and append w to v.
/// Throws OrthogonalityFailure naming j if the projected rhs is not orthogonal to Z_jχ̄ within threshold.
LayerReport build_next_layer(ApproxSolution& v, const AxiField& h, const ProjectedSolver& solver,
                             const SpectralPair& sp, const ConstructConfig& cfg);
LayerReport build_next_layer(ApproxSolution& v, const AxiField& h, const SpectralPair& sp,
                             const ConstructConfig& cfg);

/// Layer and parameter update in one linear solve: w = w₀ + Σ δp_c w_c with L w₀ = -S, L w_c = -∂_c S,
/// δp chosen so the multipliers of the combination vanish. Parameters are (μ, L, e), L the plane distance;
/// a change of L moves the existing grid layers with the bubble (second-order Taylor shift in t).
/// Parameters stay fixed when cfg.fit_parameters is off.
std::pair<LayerReport, FitReport> build_joint_layer(ApproxSolution& v, const AxiField& s, const ProjectedSolver& solver,
                                                    const SpectralPair& sp, const ConstructConfig& cfg);

struct OrderResidual {
    int order = 0;
    double norm = 0;  // ‖S(v_I)‖_{ε,residual_index}
    ConstructParams params;
    FitReport fit;
    LayerReport layer;  // layer that produced v_I (empty for I = 0)
    double min_interior = 0;  // positivity of v_I
    double plane_max = 0;     // |v_I| on the Dirichlet plane
};

struct ConstructRun {
    double eps = 0;
    ConstructParams guess;
    ApproxSolution solution;
    std::vector<OrderResidual> orders;
    double seconds = 0;
};

/// Leading-order parameters (μ₀, d_N⁰, e₀) for the given geometry.
ConstructParams leading_guess(const FrozenGeometry& geom, const SpectralPair& sp);

ConstructRun construct_at(double eps, const FrozenGeometry& geom, const ConstructParams& guess,
                          const SpectralPair& sp, const ConstructConfig& cfg);

struct ResidualReport {
    int dim = 7;
    FrozenGeometry geom;
    ConstructConfig config;
    ConstructParams guess;
    std::vector<ConstructRun> runs;
    std::vector<double> slopes;  // least-squares slope of log ‖S(v_I)‖ against log ε, per order

    std::string json() const;
    std::string csv() const;  // eps,order,norm,slope
};

ResidualReport residual_ladder(const std::vector<double>& eps, const FrozenGeometry& geom, const SpectralPair& sp,
                               const ConstructConfig& cfg);

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace kcrit
