#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include <gelk/kernels.hpp>
#include <gelk/quadrature.hpp>
#include <gelk/stats.hpp>

using namespace gelk;

namespace {

const double kSqrtPi = std::sqrt(M_PI);

// Quadrature oracle independent of the library's stored functionals.
double integral(const std::function<double(double)>& f) {
    return adaptive_simpson(f, -20.0, 20.0, 1e-11, 60);
}

}  // namespace

TEST_CASE("second-order Gaussian kernel: closed-form functionals") {
    KernelSpec k1 = gaussian_kernel(1);
    CHECK(k1.order == 2);
    CHECK(k1.r() == 1);
    CHECK(k1.mu[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k1.mu[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(k1.roughness == doctest::Approx(1.0 / (2.0 * kSqrtPi)).epsilon(1e-12));
    CHECK(k1.psi == doctest::Approx(1.0 / kSqrtPi).epsilon(1e-12));
    // k is the standard normal density and K its distribution function.
    for (double x : {-3.0, -1.0, 0.0, 0.7, 2.5}) {
        CHECK(k1.k(x) == doctest::Approx(norm_pdf(x)).epsilon(1e-14));
        CHECK(k1.K(x) == doctest::Approx(norm_cdf(x)).epsilon(1e-14));
    }
}

TEST_CASE("fourth-order Gaussian kernel: functionals against quadrature oracles") {
    KernelSpec k2 = gaussian_kernel(2);
    CHECK(k2.order == 4);
    CHECK(k2.r() == 2);

    // mu_4 = -3: direct quadrature of x^4 k(x).
    double mu4 = integral([&](double x) { return std::pow(x, 4) * k2.k(x); });
    CHECK(mu4 == doctest::Approx(-3.0).epsilon(1e-8));
    CHECK(k2.mu[4] == doctest::Approx(mu4).epsilon(1e-8));

    // Roughness 27/(32 sqrt(pi)) ~ 0.47603: quadrature of k^2.
    double rough = integral([&](double x) { return k2.k(x) * k2.k(x); });
    CHECK(rough == doctest::Approx(27.0 / (32.0 * kSqrtPi)).epsilon(1e-8));
    CHECK(k2.roughness == doctest::Approx(rough).epsilon(1e-8));
    CHECK(k2.roughness == doctest::Approx(0.47603).epsilon(2e-5));

    // Vanishing lower moments: mu_0 = 1, mu_1 = mu_2 = mu_3 = 0.
    CHECK(integral([&](double x) { return k2.k(x); }) == doctest::Approx(1.0).epsilon(1e-8));
    for (int j = 1; j <= 3; ++j) {
        double muj = integral([&](double x) { return std::pow(x, j) * k2.k(x); });
        CHECK(std::abs(muj) <= 1e-8);
        CHECK(std::abs(k2.mu[j]) <= 1e-8);
    }
}

TEST_CASE("distribution-function limits and evenness") {
    for (int r : {1, 2}) {
        KernelSpec spec = gaussian_kernel(r);
        CHECK(std::abs(spec.K(-20.0)) <= 1e-10);
        CHECK(std::abs(spec.K(20.0) - 1.0) <= 1e-10);
        for (double x : {0.31, 1.0, 2.2, 4.5}) {
            CHECK(spec.k(x) == doctest::Approx(spec.k(-x)).epsilon(1e-14));
        }
    }
}

TEST_CASE("psi functional: both integral forms agree for the normal kernel") {
    KernelFunctionals fn = kernel_functionals([](double x) { return norm_pdf(x); }, 20.0);
    CHECK(fn.psi == doctest::Approx(1.0 / kSqrtPi).epsilon(1e-8));
    CHECK(fn.psi == doctest::Approx(0.564190).epsilon(1e-5));
    // Second form for symmetric second-order kernels: int K (1 - K).
    double alt = integral([](double x) { return norm_cdf(x) * (1.0 - norm_cdf(x)); });
    CHECK(fn.psi == doctest::Approx(alt).epsilon(1e-8));
    CHECK(fn.mu[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(fn.mu[2] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(fn.roughness == doctest::Approx(1.0 / (2.0 * kSqrtPi)).epsilon(1e-8));
}

TEST_CASE("psi is positive for the fourth-order Gaussian kernel") {
    KernelSpec k2 = gaussian_kernel(2);
    CHECK(k2.psi > 0.0);
    // Stored value matches quadrature through the 2 int x K k form.
    double psi_quad =
        2.0 * integral([&](double x) { return x * k2.K(x) * k2.k(x); });
    CHECK(k2.psi == doctest::Approx(psi_quad).epsilon(1e-8));
}

TEST_CASE("unsupported built-in order is rejected") {
    CHECK_THROWS_AS(gaussian_kernel(3), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_kernel(0), std::invalid_argument);
}

TEST_CASE("analytic kernel derivatives match finite differences") {
    const double h = 1e-6;
    for (int r : {1, 2}) {
        KernelSpec spec = gaussian_kernel(r);
        for (double x : {-2.7, -0.9, 0.0, 0.4, 1.8, 3.3}) {
            CHECK(spec.derivative(x, 0) == doctest::Approx(spec.k(x)).epsilon(1e-14));
            double fd1 = (spec.k(x + h) - spec.k(x - h)) / (2.0 * h);
            CHECK(spec.derivative(x, 1) == doctest::Approx(fd1).epsilon(1e-5));
            const double h2 = 1e-4;
            double fd2 = (spec.k(x + h2) - 2.0 * spec.k(x) + spec.k(x - h2)) / (h2 * h2);
            double scale = std::max(1e-3, std::abs(fd2));
            CHECK(std::abs(spec.derivative(x, 2) - fd2) / scale <= 1e-5);
        }
        CHECK_THROWS(spec.derivative(0.0, 3));
    }
    // Closed forms of the first two derivative families at a probe point.
    KernelSpec k1 = gaussian_kernel(1);
    double x = 1.3;
    CHECK(k1.derivative(x, 1) == doctest::Approx(-x * norm_pdf(x)).epsilon(1e-12));
    CHECK(k1.derivative(x, 2) == doctest::Approx((x * x - 1.0) * norm_pdf(x)).epsilon(1e-12));
}

TEST_CASE("make_kernel reconstructs functionals from the bare function") {
    KernelSpec ref = gaussian_kernel(2);
    KernelSpec built = make_kernel(4, [](double x) { return 0.5 * (3.0 - x * x) * norm_pdf(x); },
                                   20.0);
    CHECK(built.order == 4);
    CHECK(built.roughness == doctest::Approx(ref.roughness).epsilon(1e-8));
    CHECK(built.psi == doctest::Approx(ref.psi).epsilon(1e-8));
    for (int j = 0; j <= 6; ++j)
        CHECK(built.mu[j] == doctest::Approx(ref.mu[j]).epsilon(1e-7));
    for (double x : {-1.5, 0.2, 2.0}) {
        CHECK(built.K(x) == doctest::Approx(ref.K(x)).epsilon(1e-8));
        CHECK(built.derivative(x, 1) == doctest::Approx(ref.derivative(x, 1)).epsilon(1e-4));
    }
    CHECK_THROWS_AS(make_kernel(3, [](double) { return 0.0; }, 1.0), std::invalid_argument);
}
