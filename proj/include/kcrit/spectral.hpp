#pragma once

#include <string>
#include <vector>

namespace kcrit {

/// |S^{n-1}|, the surface area of the unit sphere in R^n.
double sphere_area(int n);

/// Positive eigenvalue lambda1 of Delta + pU^{p-1} and its unit-normalized radial ground state.
struct SpectralPair {
    int dim = 0;
    double lambda1 = 0.0;
    double h = 0.0;       // node spacing
    double r0 = 0.0;      // first node (0 for the shooting grid, h/2 for the FD grid)
    std::vector<double> z0;   // Z0 at r0 + i h
    std::vector<double> dz0;  // Z0' at the same nodes
    double ode_residual = 0.0;  // sup-norm residual of the radial ODE on interior nodes
    double match_jump = 0.0;    // derivative jump at the two-sided matching point (shooting only)
    std::string method;

    double r_max() const { return r0 + h * static_cast<double>(z0.size() - 1); }
    double r_at(std::size_t i) const { return r0 + h * static_cast<double>(i); }
    /// Cubic Hermite value; exponential tail beyond r_max, even extension below r0.
    double value(double r) const;
    double derivative(double r) const;
    /// |S^{N-1}| int r^{N-1} Z0^2 dr by composite Simpson on the node grid.
    double l2_norm_sq() const;
};

/// Radial potential pU^{p-1} = N(N+2)/(1+r^2)^2.
double radial_potential(int n, double r);

struct ShootingOptions {
    double tol = 1e-14;  // bisection width on lambda, relative
    double r_max = 40.0;
    double h = 0.01;
    double r_match = 2.5;
    double r_shoot = 20.0;  // end of the outward bracket integration
    int max_iters = 200;
};

/// Bisection on lambda: a trial solution from the origin either changes sign (lambda too small)
/// or stays positive and grows. Z0 is then built by matching an outward and an inward integration.
SpectralPair solve_eigen_shooting(int dim_n, const ShootingOptions& opt = {});

struct RadialGrid {
    double h = 0.01;
    double r_max = 40.0;
};

struct FdEigenResult {
    SpectralPair pair;
    double second_eigenvalue = 0.0;
    int positive_count = 0;
    double robin_rate = 0.0;  // sqrt(lambda) used in the Robin row
};

/// Symmetric cell-centred discretization, Sturm-count bisection and inverse iteration.
FdEigenResult solve_eigen_fd(int dim_n, const RadialGrid& grid);

struct RichardsonReport {
    double lambda_h = 0, lambda_h2 = 0, lambda_h4 = 0;
    double ratio = 0;         // (l_h - l_h2) / (l_h2 - l_h4)
    double extrapolated = 0;  // l_h4 + (l_h4 - l_h2)/3
    int positive_count = 0;
    double second_eigenvalue = 0;
};

/// Three-level refinement h, h/2, h/4. Throws if consecutive levels disagree by more than 1e-3.
RichardsonReport fd_richardson(int dim_n, const RadialGrid& grid);

struct DecayFit {
    double slope = 0;
    double intercept = 0;
    double rel_error = 0;  // |slope - sqrt(lambda1)| / sqrt(lambda1)
    double tail_spread = 0;  // max - min of log Z0 + sqrt(l) r + (N-1)/2 log r on [r_max/2, r_max]
};

/// Least squares of -log Z0 - ((N-1)/2) log r against r on [r_lo, r_hi].
DecayFit fit_decay(const SpectralPair& pair, double r_lo = 15.0, double r_hi = 30.0);

/// Columnar text: a '#'-prefixed JSON header line, then "r z0 dz0" rows.
void write_spectral(const SpectralPair& pair, const std::string& path);
SpectralPair read_spectral(const std::string& path);

}  // namespace kcrit
