#pragma once

#include <cmath>
#include <vector>

namespace kcrit {

/// Second-order central-difference Laplacian of f at x (2N+1 point stencil).
template <class F>
double fd_laplacian(const F& f, std::vector<double> x, double h) {
    const double f0 = f(x);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        x[i] = xi + h;
        const double fp = f(x);
        x[i] = xi - h;
        const double fm = f(x);
        x[i] = xi;
        sum += fp - 2.0 * f0 + fm;
    }
    return sum / (h * h);
}

/// Observed order from errors at h and h/2.
inline double observed_order(double err_h, double err_h2) { return std::log2(err_h / err_h2); }

}  // namespace kcrit
