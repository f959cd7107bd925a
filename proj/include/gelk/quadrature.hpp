#pragma once

#include <functional>
#include <utility>

#include <Eigen/Core>

namespace gelk {

struct QuadratureRule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};

// Gauss-Legendre rule on [-1, 1] (Golub-Welsch on the Jacobi matrix).
QuadratureRule gauss_legendre(int n);

// The same rule mapped onto [a, b].
QuadratureRule gauss_legendre(int n, double a, double b);

// Gauss-Hermite rule normalised for expectations against the standard normal
// density: sum_i w_i h(x_i) ~ E[h(X)], X ~ N(0,1), weights summing to one.
QuadratureRule gauss_hermite_normal(int n);

// Adaptive Simpson integration of f over [a, b] to absolute tolerance tol.
// Throws quadrature_error if the recursion depth limit is reached before the
// local error bound is met.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-10, int max_depth = 60);

// Trapezoid integral of sampled values over a sorted grid.
double trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values);

// Cumulative trapezoid integral; element j holds the integral from grid[0]
// to grid[j] (so element 0 is zero).
Eigen::VectorXd cumulative_trapezoid(const Eigen::VectorXd& grid, const Eigen::VectorXd& values);

// Piecewise-exact cumulative integral of a smooth function: machine-precision
// antiderivative values F(x) - F(a) obtained from per-panel Gauss-Legendre
// rules, usable at arbitrary points of [a, b].  Built once, evaluated many
// times; evaluation cost is one small quadrature over the trailing partial
// panel.
class CumulativeIntegral {
public:
    CumulativeIntegral(std::function<double(double)> f, double a, double b, int panels = 80,
                       int nodes_per_panel = 24);

    double operator()(double x) const;
    double total() const { return prefix_[prefix_.size() - 1]; }

private:
    std::function<double(double)> f_;
    double a_, b_, width_;
    Eigen::VectorXd prefix_;   // integral of f from a to each panel boundary
    QuadratureRule unit_;      // rule on [0, 1], rescaled per evaluation
};

}  // namespace gelk
