#pragma once

#include "kcrit/quadrature.hpp"
#include "kcrit/spectral.hpp"

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kcrit {

struct Traces {
    double h_aa_sum = -0.5;  // Σ_a H_aa over directions tangent to K
    double h_jj_sum = 0.0;   // Σ_j H_jj over directions normal to K
};

/// Raised when Σ H_aa ≥ 0: no root with μ₀, d_N⁰ > 0 exists.
struct HypothesisViolation : std::domain_error {
    using std::domain_error::domain_error;
};

struct NewtonConfig {
    enum class Guess { closed_form, user };
    int max_iters = 60;
    double abs_tol = 1e-13;  // per component, relative to the magnitude of that row's terms
    bool damping = true;     // halve the step while the residual grows
    Guess guess = Guess::closed_form;
    double mu = 1.0, dn = 1.0, e = 0.0;  // user guess
};

/// Full system residual minus the leading-order F, as a function of (μ, d_N, e, ε).
using Perturbation = std::function<Eigen::Vector3d(double mu, double dn, double e, double eps)>;

struct CorrectionLevel {
    int level = 0;
    double mu = 0, dn = 0, e = 0;
    double bound_constant = 0;  // max(|μ_i|, |d_i|, |e_i|) / ε^i
};

struct ParameterState {
    int dim = 0;
    double eps = 0;
    double mu0 = 0, dn0 = 0, e0 = 0;
    double mu_closed = 0, dn_closed = 0, e_closed = 0;  // ε = 0 closed forms
    Eigen::Vector3d residual = Eigen::Vector3d::Zero();
    Eigen::Vector3d row_scale = Eigen::Vector3d::Ones();
    int iterations = 0;
    Traces traces;
    ConstantsTable table;
    std::vector<CorrectionLevel> corrections;
};

/// F(μ, d_N, e) of the ε = 0 system.
Eigen::Vector3d leading_system(const ConstantsTable& t, const Traces& tr, double mu, double dn, double e);
/// Magnitude of the largest term in each row of F, used to scale convergence tests.
Eigen::Vector3d leading_row_scale(const ConstantsTable& t, const Traces& tr, double mu, double dn, double e);
/// Exact derivative of F at any point.
Eigen::Matrix3d leading_jacobian(const ConstantsTable& t, const Traces& tr, double mu, double dn);
/// F₀ entry by entry as printed (row 2 in its at-the-root form, a₃₂ with its extra d_N factor).
Eigen::Matrix3d printed_jacobian(const ConstantsTable& t, const Traces& tr, double mu, double dn);

struct ClosedForm {
    double mu0 = 0, dn0 = 0, e0 = 0;
};
ClosedForm closed_form_root(const ConstantsTable& t, const Traces& tr);

ParameterState solve_leading_order(const ConstantsTable& t, const Traces& tr, double eps, const NewtonConfig& cfg = {},
                                   const Perturbation& perturb = {});

/// Perturbation measured by integrating h_{1,ε} against Z_{N+1}, Z_N, Z₀ (rows scaled like F).
Perturbation projected_perturbation(const ConstantsTable& t, const SpectralPair& spectral, const Traces& tr,
                                    double delta = 1.0, int gl_order = 16);

struct SignReport {
    Eigen::Matrix3d F0_exact, F0_printed, F0_fd;
    double fd_mismatch = 0;       // max relative |exact - fd|
    double printed_mismatch = 0;  // max relative |printed - fd|, entry (3,2) carries the extra d_N factor
    double det_F0 = 0;            // det of the exact Jacobian at the root
    double det_F0_printed_formula = 0;  // -λ₁(N-2)A₁² μ^{N-2}/d^{N-1} H_aa
    double det_F0_root_formula = 0;     // λ₁(N-2)A₁²(A₆/A₃) μ^{N-2}/d^{N-1} H_aa
    double A = 0, B = 0, C = 0, AC_minus_B2 = 0;
    Eigen::Matrix2d M;
    double det_M = 0, det_M_formula = 0;
    bool det_F0_positive = false, ac_b2_positive = false, det_M_nonzero = false;
};

/// Throws std::runtime_error if the exact and FD Jacobians differ by more than 1e-6 relative.
SignReport check_jacobian_signs(const ParameterState& state, double lambda1);

enum class CorrectionMatrix { printed, linearized };
Eigen::Matrix2d correction_matrix(const ParameterState& state, CorrectionMatrix reading = CorrectionMatrix::printed);

/// Solve M (μ_i, d_N^i) = ε^i (R̃₁, R₂), then e_i from the linearized third row. Returns the updated state.
ParameterState solve_correction_step(const ParameterState& state, int level, const Eigen::Vector3d& rhs,
                                     CorrectionMatrix reading = CorrectionMatrix::printed);

struct EpsStructureFit {
    std::vector<double> eps, mu, dn, e;
    double slope_mu = 0, intercept_mu = 0, r2_mu = 0;  // μ_ε - μ₀ against ε^{1/(N-2)}
    double r2_mu_quadratic = 0;                        // same against ε^{2/(N-2)}
};
EpsStructureFit fit_eps_structure(const ConstantsTable& t, const Traces& tr, const std::vector<double>& ladder,
                                  const Perturbation& perturb, const NewtonConfig& cfg = {});

}  // namespace kcrit
