#include "kcrit/bubble.hpp"

#include <numeric>
#include <string>

namespace kcrit {

namespace {

double norm2(std::span<const double> xi) {
    double r2 = 0.0;
    for (double v : xi) r2 += v * v;
    return r2;
}

void check_dim(const BubbleProfile& b, std::span<const double> xi) {
    if (static_cast<int>(xi.size()) != b.dim)
        throw std::invalid_argument("point has dimension " + std::to_string(xi.size()) + ", expected " +
                                    std::to_string(b.dim));
}

}  // namespace

BubbleProfile::BubbleProfile(int n) : dim(n) {
    if (n < 3) throw std::invalid_argument("bubble dimension must be >= 3");
    alpha = std::pow(static_cast<double>(n) * (n - 2), (n - 2) / 4.0);
    p = (n + 2.0) / (n - 2.0);
    gamma = (n - 2.0) / 2.0;
}

double TransformParams::alpha_eps() const {
    const double nm2 = dim - 2.0;
    return std::pow(rho(), nm2 * nm2 / (8.0 - 2.0 * eps * nm2) * eps) - 1.0;
}

double eval_bubble(const BubbleProfile& b, std::span<const double> xi) {
    check_dim(b, xi);
    return b.value_r2(norm2(xi));
}

double eval_bubble_bar(const BubbleProfile& b, const TransformParams& tp, std::span<const double> xi) {
    check_dim(b, xi);
    if (!(tp.d_n > 0.0)) throw std::invalid_argument("eval_bubble_bar: d_n must be positive");
    if (!(tp.mu > 0.0)) throw std::invalid_argument("eval_bubble_bar: mu must be positive");
    const double shifted = xi.back() + 2.0 * tp.plane_distance();
    const double r2 = norm2(xi) - xi.back() * xi.back() + shifted * shifted;
    return b.value_r2(r2);
}

double eval_kernel(const BubbleProfile& b, int j, std::span<const double> xi) {
    check_dim(b, xi);
    if (j < 1 || j > b.dim + 1)
        throw std::out_of_range("kernel index " + std::to_string(j) + " outside [1, N+1]");
    const double r2 = norm2(xi);
    if (j == b.dim + 1) return z_dilation_r2(b, r2);
    return b.dr_over_r(r2) * xi[j - 1];
}

double scaling_family(const BubbleProfile& b, double lambda, std::span<const double> xi) {
    check_dim(b, xi);
    if (!(lambda > 0.0)) throw std::invalid_argument("scaling_family: lambda must be positive");
    return b.alpha * std::pow(lambda / (lambda * lambda + norm2(xi)), b.gamma);
}

void bubble_gradient(const BubbleProfile& b, std::span<const double> xi, std::span<double> grad) {
    check_dim(b, xi);
    const double f = b.dr_over_r(norm2(xi));
    for (int i = 0; i < b.dim; ++i) grad[i] = f * xi[i];
}

double bubble_hessian(const BubbleProfile& b, std::span<const double> xi, int i, int j) {
    check_dim(b, xi);
    const double q = 1.0 + norm2(xi);
    const double c = -2.0 * b.gamma * b.alpha;
    double h = -2.0 * (b.gamma + 1.0) * xi[i] * xi[j] * std::pow(q, -b.gamma - 2.0);
    if (i == j) h += std::pow(q, -b.gamma - 1.0);
    return c * h;
}

AxialJet bubble_jet(const BubbleProfile& b, double s, double t, double shift) {
    const double tau = t - shift;
    const double q = 1.0 + s * s + tau * tau;
    const double q1 = std::pow(q, -b.gamma - 1.0);
    const double q2 = q1 / q;
    const double c1 = -2.0 * b.gamma * b.alpha;
    const double c2 = 4.0 * b.gamma * (b.gamma + 1.0) * b.alpha;
    AxialJet j;
    j.f = b.alpha * q1 * q;
    j.fs = c1 * s * q1;
    j.ft = c1 * tau * q1;
    j.fss = c1 * q1 + c2 * s * s * q2;
    j.ftt = c1 * q1 + c2 * tau * tau * q2;
    j.fst = c2 * s * tau * q2;
    return j;
}

double kernel_axial(const BubbleProfile& b, int j, double s, double t) {
    if (j < 1 || j > b.dim + 1)
        throw std::out_of_range("kernel index " + std::to_string(j) + " outside [1, N+1]");
    const double r2 = s * s + t * t;
    if (j == b.dim + 1) return z_dilation_r2(b, r2);
    if (j == b.dim) return b.dr_over_r(r2) * t;
    return b.dr_over_r(r2) * s;
}

}  // namespace kcrit
