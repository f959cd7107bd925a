#include "gelk/kernels.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "gelk/errors.hpp"
#include "gelk/quadrature.hpp"
#include "gelk/stats.hpp"

namespace gelk {

namespace {

const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);

double gauss2_deriv(double x, int d) {
    switch (d) {
        case 0: return norm_pdf(x);
        case 1: return -x * norm_pdf(x);
        case 2: return (x * x - 1.0) * norm_pdf(x);
        default: throw std::invalid_argument("kernel derivative order must be 0, 1 or 2");
    }
}

double gauss4_deriv(double x, int d) {
    const double x2 = x * x;
    switch (d) {
        case 0: return 0.5 * (3.0 - x2) * norm_pdf(x);
        case 1: return -0.5 * x * (5.0 - x2) * norm_pdf(x);
        case 2: return 0.5 * (-x2 * x2 + 8.0 * x2 - 5.0) * norm_pdf(x);
        default: throw std::invalid_argument("kernel derivative order must be 0, 1 or 2");
    }
}

}  // namespace

KernelSpec gaussian_kernel(int r) {
    KernelSpec spec;
    spec.order = 2 * r;
    spec.support = 20.0;
    if (r == 1) {
        spec.k = [](double x) { return norm_pdf(x); };
        spec.K = [](double x) { return norm_cdf(x); };
        spec.derivative = gauss2_deriv;
        spec.mu = {1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 15.0};  // normal moments
        spec.roughness = 0.5 * inv_sqrt_pi;
        spec.psi = inv_sqrt_pi;
    } else if (r == 2) {
        spec.k = [](double x) { return 0.5 * (3.0 - x * x) * norm_pdf(x); };
        spec.K = [](double x) { return norm_cdf(x) + 0.5 * x * norm_pdf(x); };
        spec.derivative = gauss4_deriv;
        // int x^j (3 - x^2) phi / 2 = (3 m_j - m_{j+2}) / 2 with normal moments m.
        spec.mu = {1.0, 0.0, 0.0, 0.0, -3.0, 0.0, -30.0};
        spec.roughness = 27.0 / 32.0 * inv_sqrt_pi;
        spec.psi = 7.0 / 16.0 * inv_sqrt_pi;
    } else {
        throw std::invalid_argument("gaussian_kernel: only r = 1 and r = 2 are built in");
    }
    return spec;
}

KernelFunctionals kernel_functionals(const std::function<double(double)>& k, double support_hint) {
    const double a = -support_hint, b = support_hint;
    KernelFunctionals out;
    out.roughness = adaptive_simpson([&](double x) { return k(x) * k(x); }, a, b, 1e-10);
    for (int j = 0; j <= 6; ++j)
        out.mu[j] = adaptive_simpson([&](double x) { return std::pow(x, j) * k(x); }, a, b, 1e-10);
    // K by cumulative quadrature of k, then psi = 2 int x K(x) k(x) dx.
    CumulativeIntegral K(k, a, b, 160, 24);
    out.psi = 2.0 * adaptive_simpson([&](double x) { return x * K(x) * k(x); }, a, b, 1e-10);
    return out;
}

KernelSpec make_kernel(int order, std::function<double(double)> k, double support_hint) {
    if (order < 2 || order % 2 != 0) throw std::invalid_argument("make_kernel: order must be even");
    KernelSpec spec;
    spec.order = order;
    spec.support = support_hint;
    KernelFunctionals fn = kernel_functionals(k, support_hint);
    spec.mu = fn.mu;
    spec.roughness = fn.roughness;
    spec.psi = fn.psi;
    auto Ktab = std::make_shared<CumulativeIntegral>(k, -support_hint, support_hint, 160, 24);
    spec.K = [Ktab](double x) { return (*Ktab)(x); };
    spec.derivative = [k](double x, int d) {
        const double h = 1e-5;
        switch (d) {
            case 0: return k(x);
            case 1: return (k(x + h) - k(x - h)) / (2.0 * h);
            case 2: return (k(x + h) - 2.0 * k(x) + k(x - h)) / (h * h);
            default: throw std::invalid_argument("kernel derivative order must be 0, 1 or 2");
        }
    };
    spec.k = std::move(k);
    return spec;
}

}  // namespace gelk
