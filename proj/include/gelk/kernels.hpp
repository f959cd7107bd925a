#pragma once

#include <array>
#include <functional>

#include <Eigen/Core>

namespace gelk {

// A kernel of order 2r together with the integral functionals that the
// bandwidth and risk formulas consume.  k integrates to one; all moments
// below order 2r vanish.  K is the antiderivative of k, derivative(x, d)
// returns k^(d)(x) for d in {0, 1, 2} (needed by the conditional-product
// smoothers).
struct KernelSpec {
    int order = 2;  // 2r
    std::function<double(double)> k;
    std::function<double(double)> K;
    std::function<double(double, int)> derivative;
    std::array<double, 7> mu{};  // mu[j] = int x^j k(x) dx, j = 0..6
    double roughness = 0.0;      // R(k) = int k(x)^2 dx
    double psi = 0.0;            // psi(k) = 2 int x K(x) k(x) dx
    double support = 20.0;       // |x| beyond which k is numerically zero

    int r() const { return order / 2; }
};

// Built-in Gaussian-based kernels: r = 1 is the standard normal kernel,
// r = 2 the fourth-order kernel k(x) = (3 - x^2) phi(x) / 2 with
// K(x) = Phi(x) + x phi(x) / 2.  Functionals are closed form.
KernelSpec gaussian_kernel(int r);

struct KernelFunctionals {
    double roughness = 0.0;
    std::array<double, 7> mu{};
    double psi = 0.0;
};

// Quadrature evaluation of the functionals of an arbitrary absolutely
// integrable kernel, with K obtained by cumulative quadrature.  support_hint
// bounds the region outside which k is negligible.
KernelFunctionals kernel_functionals(const std::function<double(double)>& k,
                                     double support_hint = 20.0);

// A KernelSpec for a user-supplied kernel; functionals from quadrature,
// derivatives by central finite differences unless provided.
KernelSpec make_kernel(int order, std::function<double(double)> k, double support_hint = 20.0);

}  // namespace gelk
