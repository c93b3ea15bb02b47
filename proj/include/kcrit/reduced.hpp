#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "kcrit/geometry.hpp"
#include "kcrit/quadrature.hpp"

namespace kcrit {

struct CoercivityViolation : std::domain_error {
    using std::domain_error::domain_error;
};

/// Linear system on K for (δ, d_N, d̄, e), K a circle of length `period` sampled at `points` nodes.
///
/// Orientation: the (δ, d_N) rows are solved as
///   s₁ Δ_K δ + A δ + B d_N = h₁,   s₂ Δ_K d_N + B δ + C d_N = h₂,
/// with s₁ = c₁ ε^{1+2/(N-2)} μ₀ and s₂ = c₂ ε μ₀. With A, C < 0 and AC - B² > 0 every Fourier block
/// is negative definite, and the energy of the negated system is coercive. The e row is
/// Δ_K e + D₁λ₁ e + D₂ d_N = φ.
struct ReducedSystem {
    int dim = 7;
    double eps = 0.01;
    int points = 256;
    double period = 2.0 * 3.14159265358979323846;
    double A = 0, B = 0, C = 0;
    double c1 = 0, c2 = 0, mu0 = 0;
    double D1 = 0, D2 = 0, lambda1 = 0;

    /// A, B, C from the constants at the leading-order root (μ₀, d_N⁰).
    static ReducedSystem from_constants(const ConstantsTable& t, double mu0, double dn0, double eps, int points = 256,
                                        double period = 2.0 * 3.14159265358979323846);

    double stiffness_delta() const;   // s₁
    double stiffness_normal() const;  // s₂
    double wavenumber(int mode) const { return 2.0 * 3.14159265358979323846 * mode / period; }
    /// Fourier block of the (δ, d_N) rows at integer mode m.
    Eigen::Matrix2d modal_block(int mode) const;
    /// Smallest eigenvalue of the energy form -modal_block(m).
    double energy_eigenvalue(int mode) const;
    /// Throws CoercivityViolation unless A < 0, C < 0, AC - B² > 0.
    void check_coercive() const;
    std::vector<double> nodes() const;
};

struct DeltaNormalSolution {
    Eigen::VectorXd delta, dn;
    double residual = 0;  // assembled residual, sup norm relative to the rhs
    double lhs_norm = 0;  // ‖δ‖∞ + ‖d_N‖∞ + ε^{1/2+1/(N-2)}‖∂δ‖∞ + ε^{1/2}‖∂d_N‖∞
    double rhs_norm = 0;  // ‖h₁‖∞ + ‖h₂‖∞
    double ratio() const { return rhs_norm > 0 ? lhs_norm / rhs_norm : 0.0; }
};

/// Fourier-diagonal solve of the (δ, d_N) rows.
DeltaNormalSolution solve_delta_dn(const ReducedSystem& sys, const Eigen::VectorXd& h1, const Eigen::VectorXd& h2);
/// Same system assembled as a dense 2n x 2n matrix and solved by LU; reference for the modal solve.
DeltaNormalSolution solve_delta_dn_dense(const ReducedSystem& sys, const Eigen::VectorXd& h1, const Eigen::VectorXd& h2);
/// Dense matrix of the (δ, d_N) rows, unknowns ordered (δ, d_N).
Eigen::MatrixXd assemble_delta_dn(const ReducedSystem& sys);

struct BoundSweep {
    std::vector<double> eps;
    std::vector<double> constant;  // sup over the rhs family at each ε
    std::vector<std::string> worst_rhs;
    double variation = 0;          // (max - min) / min over ε
};

/// Rhs family: constants, single modes and bumps at the natural lengths sqrt(s_i/|A|), sqrt(s_i/|C|).
std::vector<std::pair<std::string, std::pair<Eigen::VectorXd, Eigen::VectorXd>>> delta_dn_rhs_family(
    const ReducedSystem& sys);
BoundSweep sweep_delta_dn_bound(const ReducedSystem& base, const std::vector<double>& eps_values);

/// L_j d̄ = f with L_j = -Δ_K + c (the negated discrete Jacobi operator).
JacobiSolution solve_dbar(const JacobiOperator& op, const Eigen::VectorXd& f);

struct ResonancePoint {
    double eps = 0, rho = 0;
    double sigma_min = 0;    // smallest singular value of the discrete operator
    int nearest_mode = 0;
    double scaled_inverse = 0;  // ρ^k / σ_min
    bool in_gap = false;
};

struct GapInterval {
    double eps_lo = 0, eps_hi = 0;
    int mode = 0;  // lies between resonances of modes mode and mode + 1
    double max_scaled_inverse = 0;
};

struct ResonanceOptions {
    bool coupled = false;      // include the (δ, d_N) rows and the D₂ d_N coupling
    double gap_fraction = 0.5;  // central fraction (in ρ) of each inter-resonance interval that is certified
    int points = 0;            // nodes on K_ρ; 0 picks the smallest even count resolving the needed modes
    ExecPolicy policy = ExecPolicy::parallel;
};

struct ResonanceScan {
    int dim = 7, k = 1, points = 0;
    double target = 0;  // D₁λ₁
    std::vector<ResonancePoint> samples;
    std::vector<double> detected;   // ε at local minima of σ_min
    std::vector<double> predicted;  // ε_m from m²ρ² = D₁λ₁ inside the scanned range
    std::vector<int> predicted_modes;
    std::vector<GapInterval> gaps;
    double log_spacing = 0;          // max spacing of the ε grid in log ε
    double max_match_error = 0;      // max |log ε_detected - log ε_predicted|
    int unmatched = 0;               // predicted resonances without a detected minimum (and vice versa)
    double max_scaled_inverse_in_gaps = 0;
    double gap_bound = 0;            // analytic ceiling 2/((1 - gap_fraction) sqrt(D₁λ₁)) for ρ/σ in the gaps
    std::vector<std::pair<double, int>> minima_per_octave;  // (ε upper end, count)
};

/// Resonance positions ε_m = (sqrt(D₁λ₁)/m)^{(N-2)/(N-1)}.
double resonance_eps(int dim, double target, int mode);
/// Log-uniform grid on [eps_lo, eps_hi] fine enough for `samples_per_spacing` points per resonance spacing.
std::vector<double> resonance_grid(int dim, double target, double eps_lo, double eps_hi, int samples_per_spacing);

/// Smallest singular value of L₀ (or of the coupled block) on the circle of radius 1/ρ for each ε.
/// Throws if the node count cannot represent the modes near the resonance at the smallest ε.
ResonanceScan scan_resonance(const ReducedSystem& sys, const std::vector<double>& eps_grid,
                             const ResonanceOptions& opt = {});
/// Same quantity from the dense discrete operator (eigenvalues of Δ + D₁λ₁ on `points` nodes); test oracle.
double resonance_sigma_dense(const ReducedSystem& sys, double eps, int points);

std::string resonance_csv(const ResonanceScan& scan);
std::string resonance_gaps_json(const ResonanceScan& scan);

}  // namespace kcrit
