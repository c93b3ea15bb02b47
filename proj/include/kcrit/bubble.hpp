#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace kcrit {

/// Standard bubble U(xi) = alpha_N (1 + |xi|^2)^{-(N-2)/2} in R^N.
struct BubbleProfile {
    int dim = 7;
    double alpha = 0.0;
    double p = 0.0;      // critical exponent (N+2)/(N-2)
    double gamma = 0.0;  // (N-2)/2

    explicit BubbleProfile(int n);

    /// Radial value as a function of |xi|^2.
    double value_r2(double r2) const { return alpha * std::pow(1.0 + r2, -gamma); }
    /// d/dr U divided by r, i.e. the common factor of every first derivative.
    double dr_over_r(double r2) const { return -2.0 * gamma * alpha * std::pow(1.0 + r2, -gamma - 1.0); }
    /// p U^{p-1} = N(N+2) / (1+r^2)^2, the linearized potential.
    double potential_r2(double r2) const {
        return static_cast<double>(dim) * (dim + 2) / ((1.0 + r2) * (1.0 + r2));
    }
};

/// Concentration and shift parameters. rho is always derived from eps.
struct TransformParams {
    double mu = 1.0;
    std::vector<double> d_bar;  // tangential shift, length N-1 (may be empty = zero)
    double d_n = 1.0;
    double eps = 0.01;
    int dim = 7;

    double rho() const { return std::pow(eps, (dim - 1.0) / (dim - 2.0)); }
    /// alpha_eps = rho^{((N-2)^2 / (8 - 2 eps (N-2))) eps} - 1
    double alpha_eps() const;
    /// Distance from the bubble centre to the Dirichlet plane in xi units: eps d_N / (rho mu).
    double plane_distance() const { return eps * d_n / (rho() * mu); }
};

/// Second-order jet of an axially symmetric function f(s, t), s = |xi_bar|, t = xi_N.
struct AxialJet {
    double f = 0, fs = 0, ft = 0, fss = 0, fst = 0, ftt = 0;
};

double eval_bubble(const BubbleProfile& b, std::span<const double> xi);
/// U evaluated at (xi_bar, xi_N + 2 eps d_N / (rho mu)). Throws if d_n <= 0.
double eval_bubble_bar(const BubbleProfile& b, const TransformParams& tp, std::span<const double> xi);
/// Z_j for 1 <= j <= N+1 in closed form. Z_0 lives in the spectral module.
double eval_kernel(const BubbleProfile& b, int j, std::span<const double> xi);
/// U_lambda(xi) = alpha (lambda / (lambda^2 + |xi|^2))^{(N-2)/2}.
double scaling_family(const BubbleProfile& b, double lambda, std::span<const double> xi);

/// Gradient and Hessian of U at xi (closed form).
void bubble_gradient(const BubbleProfile& b, std::span<const double> xi, std::span<double> grad);
double bubble_hessian(const BubbleProfile& b, std::span<const double> xi, int i, int j);

/// Jet of U(s, t - shift) in axial coordinates. shift = 0 gives U, shift = -2L gives U-bar.
AxialJet bubble_jet(const BubbleProfile& b, double s, double t, double shift = 0.0);

// Axial kernel profiles. For mode-0 kernels the value at (s, t) is returned.
// For Z_1..Z_{N-1} the returned value is the coefficient of cos(theta) = xi_1 / s.
double kernel_axial(const BubbleProfile& b, int j, double s, double t);

/// Z_{N+1}(r) for radial evaluation.
inline double z_dilation_r2(const BubbleProfile& b, double r2) {
    return b.gamma * b.alpha * (1.0 - r2) * std::pow(1.0 + r2, -b.gamma - 1.0);
}

}  // namespace kcrit
