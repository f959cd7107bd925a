#include "gelk/quadrature.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "gelk/errors.hpp"

namespace gelk {

namespace {

// Nodes and weights from the symmetric tridiagonal Jacobi matrix of the
// orthogonal-polynomial recurrence; weights are mu0 times the squared first
// eigenvector components.
QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& subdiag,
                            double mu0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, subdiag, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("golub_welsch: eigen decomposition failed");
    QuadratureRule rule;
    rule.nodes = es.eigenvalues();
    rule.weights = mu0 * es.eigenvectors().row(0).transpose().array().square();
    return rule;
}

}  // namespace

QuadratureRule gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be positive");
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1 > 0 ? n - 1 : 0);
    for (int k = 1; k < n; ++k) sub[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
    return golub_welsch(diag, sub, 2.0);
}

QuadratureRule gauss_legendre(int n, double a, double b) {
    QuadratureRule rule = gauss_legendre(n);
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    rule.nodes = (rule.nodes.array() * half + mid).matrix();
    rule.weights *= half;
    return rule;
}

QuadratureRule gauss_hermite_normal(int n) {
    if (n < 1) throw std::invalid_argument("gauss_hermite_normal: n must be positive");
    // Monic Hermite polynomials orthogonal w.r.t. exp(-x^2/2): He_{k+1} = x He_k - k He_{k-1}.
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1 > 0 ? n - 1 : 0);
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
    return golub_welsch(diag, sub, 1.0);  // normalised: weights sum to one
}

namespace {

double simpson(double fa, double fm, double fb, double h) { return h / 6.0 * (fa + 4.0 * fm + fb); }

// force > 0 keeps subdividing regardless of the error estimate, guarding
// against spurious early acceptance when the integrand vanishes at the probe
// points of a wide interval (e.g. even Gaussian-tailed integrands on
// [-20, 20], where f(a) = f(m) = f(b) ~ 0 makes the first estimate exact).
double adaptive_step(const std::function<double(double)>& f, double a, double b, double fa,
                     double fm, double fb, double whole, double tol, int depth, int force) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(fa, flm, fm, m - a);
    const double right = simpson(fm, frm, fb, b - m);
    const double err = left + right - whole;
    if (force <= 0 && std::abs(err) <= 15.0 * tol) return left + right + err / 15.0;
    if (depth <= 0) {
        if (std::abs(err) <= 15.0 * tol) return left + right + err / 15.0;
        throw quadrature_error("adaptive_simpson: depth limit reached, residual estimate " +
                               std::to_string(std::abs(err) / 15.0));
    }
    return adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, force - 1) +
           adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, force - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol,
                        int max_depth) {
    if (!(a < b)) return a == b ? 0.0 : -adaptive_simpson(f, b, a, tol, max_depth);
    const double m = 0.5 * (a + b);
    const double fa = f(a), fm = f(m), fb = f(b);
    const double whole = simpson(fa, fm, fb, b - a);
    return adaptive_step(f, a, b, fa, fm, fb, whole, tol, max_depth, 8);
}

double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values) {
    if (grid.size() != values.size())
        throw std::invalid_argument("trapezoid: grid and values length mismatch");
    double acc = 0.0;
    for (Eigen::Index j = 1; j < grid.size(); ++j)
        acc += 0.5 * (grid[j] - grid[j - 1]) * (values[j] + values[j - 1]);
    return acc;
}

Eigen::VectorXd cumulative_trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values) {
    if (grid.size() != values.size())
        throw std::invalid_argument("cumulative_trapezoid: grid and values length mismatch");
    Eigen::VectorXd out(grid.size());
    if (grid.size() == 0) return out;
    out[0] = 0.0;
    for (Eigen::Index j = 1; j < grid.size(); ++j)
        out[j] = out[j - 1] + 0.5 * (grid[j] - grid[j - 1]) * (values[j] + values[j - 1]);
    return out;
}

CumulativeIntegral::CumulativeIntegral(std::function<double(double)> f, double a, double b,
                                       int panels, int nodes_per_panel)
    : f_(std::move(f)), a_(a), b_(b) {
    if (!(b > a) || panels < 1) throw std::invalid_argument("CumulativeIntegral: bad interval");
    width_ = (b - a) / panels;
    unit_ = gauss_legendre(nodes_per_panel, 0.0, 1.0);
    prefix_.resize(panels + 1);
    prefix_[0] = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double lo = a_ + p * width_;
        double s = 0.0;
        for (Eigen::Index i = 0; i < unit_.nodes.size(); ++i)
            s += unit_.weights[i] * f_(lo + unit_.nodes[i] * width_);
        prefix_[p + 1] = prefix_[p] + s * width_;
    }
}

double CumulativeIntegral::operator()(double x) const {
    if (x <= a_) return 0.0;
    if (x >= b_) return total();
    const int p = std::min<int>(static_cast<int>((x - a_) / width_),
                                static_cast<int>(prefix_.size()) - 2);
    const double lo = a_ + p * width_;
    const double span = x - lo;
    double s = 0.0;
    for (Eigen::Index i = 0; i < unit_.nodes.size(); ++i)
        s += unit_.weights[i] * f_(lo + unit_.nodes[i] * span);
    return prefix_[p] + s * span;
}

}  // namespace gelk
