#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace kcrit {

// Sign convention used everywhere downstream: ν is the inner unit normal of ∂Ω and the shape
// operator is L[e] = -∇_e ν, so H_{αβ} = e_α · L[e_β]. A round sphere of radius R then has H = Id/R.
// Curvature components satisfy R_{αβαβ} = sectional curvature (Gauss equation
// R_{αβγδ} = H_{αγ}H_{βδ} - H_{αδ}H_{βγ}).
inline constexpr double kInnerNormalSign = +1.0;

enum class ModelKind { sphere, torus, ellipsoid };
enum class SubmanifoldKind { circle, clifford_torus };

/// Exactly parametrized hypersurface ∂Ω ⊂ R^n with an embedded K.
///   sphere(R): K is the great circle in the (x1,x2)-plane, or the Clifford torus when n = 4.
///   torus(R, r): tube of radius r around the circle of radius R in the (x1,x2)-plane; K is the inner equator.
///   ellipsoid(a): K is the section by the (x1,x2)-plane.
struct HypersurfaceModel {
    ModelKind kind = ModelKind::sphere;
    SubmanifoldKind sub = SubmanifoldKind::circle;
    int n = 3;
    double major = 1.0;  // R for sphere and torus
    double minor = 0.0;  // r for torus
    std::vector<double> axes;

    static HypersurfaceModel sphere(int n, double radius, SubmanifoldKind sub = SubmanifoldKind::circle);
    static HypersurfaceModel torus(int n, double major_radius, double minor_radius);
    static HypersurfaceModel ellipsoid(std::vector<double> semi_axes);

    int k() const { return sub == SubmanifoldKind::clifford_torus ? 2 : 1; }
    int normal_dim() const { return n - 1 - k(); }  // N - 1
    int N() const { return n - k(); }
    std::string name() const;

    /// Periods of the K coordinates y (isometric coordinates, except the ellipse which uses its angle).
    std::vector<double> k_periods() const;
    bool k_isometric() const { return kind != ModelKind::ellipsoid; }
    Eigen::VectorXd k_point(const std::vector<double>& y) const;
    /// Inner unit normal, extended smoothly off ∂Ω.
    Eigen::VectorXd inner_normal(const Eigen::VectorXd& x) const;
    /// Implicit function vanishing on ∂Ω.
    double level(const Eigen::VectorXd& x) const;
    /// Orthonormal frame at K(y): k tangent columns followed by N-1 columns normal to K inside ∂Ω.
    Eigen::MatrixXd frame(const std::vector<double>& y) const;
    /// Coordinates y of a point assumed on K; throws if the point is farther than tol from K.
    std::vector<double> locate_on_k(const Eigen::VectorXd& q, double tol = 1e-9) const;
};

struct ShapeData {
    int n = 0, k = 0;
    Eigen::VectorXd q;
    Eigen::MatrixXd frame;  // n x (n-1)
    Eigen::MatrixXd H;      // (n-1) x (n-1)
    double sum_aa = 0, sum_jj = 0;
    std::vector<double> gamma;  // Γ^c_{a i}, index (c*k + a)*(N-1) + i
    std::vector<double> minimality;  // Σ_a Γ^a_a(E_i)
    bool analytic = false;

    double R(int a, int b, int c, int d) const {
        return H(a, c) * H(b, d) - H(a, d) * H(b, c);
    }
    double Gamma(int c, int a, int i) const { return gamma[(c * k + a) * (n - 1 - k) + i]; }
    /// Jacobi coefficient c_ml = Σ_a R_{m a a l} - Σ_{a,c} Γ^c_a(E_m) Γ^a_c(E_l), m, l normal indices.
    Eigen::MatrixXd jacobi_coefficient() const;
};

/// Closed-form shape data where available (sphere, torus); FD of ν otherwise.
ShapeData shape_at(const HypersurfaceModel& model, const std::vector<double>& y);
ShapeData shape_at(const HypersurfaceModel& model, const Eigen::VectorXd& q);
/// Shape data from finite differences of the inner normal field (4th-order central, step h).
ShapeData shape_fd(const HypersurfaceModel& model, const std::vector<double>& y, double h = 1e-3);

/// Fermi chart Υ(y, x̄, x_N) = F(y, x̄) + x_N ν(F) for sphere and torus with k = 1.
Eigen::VectorXd fermi_chart(const HypersurfaceModel& model, double y, const Eigen::VectorXd& x);

struct ExpansionReport {
    std::vector<double> radii;
    std::vector<double> rem_ij, rem_ab, rem_aj;  // sup-norm remainders per radius
    double slope_ij = 0, slope_ab = 0, slope_aj = 0;
    double max_g_aN = 0, max_g_iN = 0, max_g_NN_dev = 0;
    double base_offdiag = 0;  // |g_aj| at x = 0
    std::string ab_reading;
};

/// Pull back the flat metric by FD of Υ and subtract the second-order expansion
/// g_ij = δ - 2x_N H + (1/3) R_istj x_s x_t + x_N^2 H^2 (and the g_ab counterpart), along |x| = 2^{-m}.
ExpansionReport fermi_metric_expansion_check(const HypersurfaceModel& model, double y, const Eigen::VectorXd& direction,
                                             int m_first = 2, int m_last = 7);

/// Discrete Δ_K d_l - c_ml d_m on a periodic grid of K (circle: k = 1, flat torus: k = 2).
struct JacobiOperator {
    int k = 1;
    int ncomp = 1;                 // N - 1
    std::vector<int> points;       // grid points per K direction
    std::vector<double> periods;   // lengths of K directions
    std::vector<Eigen::MatrixXd> coef;  // c(y) at every grid point (row-major over the grid)
    bool constant = true;
    Eigen::MatrixXd matrix;        // assembled dense operator
    Eigen::VectorXd weights;       // quadrature weights for the discrete L^2(K) inner product

    int grid_size() const;
    /// Eigenvalues by Fourier diagonalization (constant coefficients) with their mode labels.
    std::vector<std::pair<std::vector<int>, double>> modal_eigenvalues() const;
    Eigen::VectorXd dense_eigenvalues() const;
    double smallest_abs_eigenvalue() const;
};

JacobiOperator assemble_jacobi(const HypersurfaceModel& model, int resolution);
/// Constant-coefficient operator Δ - c on a circle (k = 1) or flat torus (k = 2).
JacobiOperator make_jacobi(const std::vector<double>& periods, int resolution, const Eigen::MatrixXd& c);

struct JacobiSolution {
    Eigen::VectorXd d;  // component-major: d[comp * grid + point]
    double residual = 0;  // ‖op(d) - f‖ / ‖f‖
    double bound_constant = 0;  // (‖d‖∞ + ‖∂d‖∞ + ‖∂²d‖∞) / ‖f‖∞
    std::string method;
};

/// Spectral (FFT) solve for constant coefficients, dense LU otherwise. Throws naming the kernel mode if degenerate.
JacobiSolution solve_jacobi(const JacobiOperator& op, const Eigen::VectorXd& f, double degeneracy_tol = 1e-8);
/// Dense LU reference solve.
Eigen::VectorXd solve_jacobi_dense(const JacobiOperator& op, const Eigen::VectorXd& f);

}  // namespace kcrit
