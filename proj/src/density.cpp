#include "gelk/density.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gelk/errors.hpp"
#include "gelk/quadrature.hpp"

namespace gelk {

namespace {

void check_sample(const WeightedSample& sample) {
    if (sample.points.size() != sample.weights.size())
        throw input_error("weighted sample has " + std::to_string(sample.points.size()) +
                          " points but " + std::to_string(sample.weights.size()) + " weights");
    if (sample.points.size() == 0) throw input_error("weighted sample is empty");
    const double total = sample.weights.sum();
    if (std::abs(total - 1.0) > 1e-8)
        throw input_error("weights sum to " + std::to_string(total) + ", expected 1");
}

void check_grid(const Vector& grid) {
    for (Eigen::Index j = 1; j < grid.size(); ++j)
        if (!(grid[j] > grid[j - 1]))
            throw input_error("evaluation grid is not strictly increasing at index " +
                              std::to_string(j));
}

void check_bandwidth(double b) {
    if (!(b > 0.0)) throw input_error("bandwidth must be positive, got " + std::to_string(b));
}

}  // namespace

Vector default_grid() { return Vector::LinSpaced(1000, -5.0, 5.0); }

CurveEstimate weighted_kde(const WeightedSample& sample, const KernelSpec& kernel, double b,
                           const Vector& grid) {
    check_sample(sample);
    check_grid(grid);
    check_bandwidth(b);
    CurveEstimate est;
    est.grid = grid;
    est.values = Vector::Zero(grid.size());
    est.bandwidth = b;
    est.kind = CurveKind::pdf;
    const Eigen::Index n = sample.points.size();
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            acc += sample.weights[i] * kernel.k((grid[j] - sample.points[i]) / b);
        est.values[j] = acc / b;
    }
    return est;
}

CurveEstimate weighted_kcdf(const WeightedSample& sample, const KernelSpec& kernel, double b,
                            const Vector& grid) {
    check_sample(sample);
    check_grid(grid);
    check_bandwidth(b);
    CurveEstimate est;
    est.grid = grid;
    est.values = Vector::Zero(grid.size());
    est.bandwidth = b;
    est.kind = CurveKind::cdf;
    const Eigen::Index n = sample.points.size();
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            acc += sample.weights[i] * kernel.K((grid[j] - sample.points[i]) / b);
        est.values[j] = acc;
    }
    return est;
}

CurveEstimate positive_part_normalize(const CurveEstimate& est) {
    if (est.kind != CurveKind::pdf)
        throw input_error("positive-part normalisation applies to pdf estimates only");

    auto mass_above = [&](double xi) {
        Vector clipped = (est.values.array() - xi).max(0.0);
        return trapezoid(est.grid, clipped);
    };

    const double m0 = mass_above(0.0);
    if (m0 < 0.5)
        throw support_error("positive part of the density carries mass " + std::to_string(m0) +
                            " (< 0.5); the grid is too narrow to normalise");

    CurveEstimate out = est;
    out.positive_part_applied = true;
    if (m0 > 1.0) {
        // mass_above is continuous and strictly decreasing until it hits zero,
        // with mass_above(max f) = 0 < 1 < m0: bisect.
        double lo = 0.0, hi = est.values.maxCoeff();
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mass_above(mid) > 1.0)
                lo = mid;
            else
                hi = mid;
            if (hi - lo < 1e-15 * std::max(1.0, hi)) break;
        }
        const double xi = 0.5 * (lo + hi);
        out.values = (est.values.array() - xi).max(0.0);
    } else {
        out.values = est.values.array().max(0.0) / m0;
    }
    return out;
}

CurveEstimate rearrange_cdf(const CurveEstimate& est) {
    if (est.kind != CurveKind::cdf)
        throw input_error("rearrangement applies to cdf estimates only");
    CurveEstimate out = est;
    std::sort(out.values.data(), out.values.data() + out.values.size());
    out.values = out.values.array().max(0.0).min(1.0);
    out.rearranged = true;
    return out;
}

namespace {

double factorial(int m) {
    double out = 1.0;
    for (int i = 2; i <= m; ++i) out *= i;
    return out;
}

}  // namespace

double amise_bandwidth_pdf(const KernelSpec& kernel, double roughness, long n) {
    if (!(roughness > 0.0))
        throw input_error("density derivative roughness must be positive, got " +
                          std::to_string(roughness));
    if (n < 2) throw input_error("bandwidth rule needs n >= 2");
    const int r = kernel.r();
    const double mu2r = kernel.mu[2 * r];
    const double f2r = factorial(2 * r);
    const double c =
        std::pow(f2r * f2r * kernel.roughness / (4.0 * r * mu2r * mu2r * roughness),
                 1.0 / (4.0 * r + 1.0));
    return c * std::pow(static_cast<double>(n), -1.0 / (4.0 * r + 1.0));
}

double amise_bandwidth_cdf(const KernelSpec& kernel, double roughness, long n) {
    if (!(kernel.psi > 0.0))
        throw input_error("distribution bandwidth rule needs psi > 0; the order-" +
                          std::to_string(kernel.order) + " kernel has psi = " +
                          std::to_string(kernel.psi));
    if (!(roughness > 0.0))
        throw input_error("density derivative roughness must be positive, got " +
                          std::to_string(roughness));
    if (n < 2) throw input_error("bandwidth rule needs n >= 2");
    const int r = kernel.r();
    const double mu2r = kernel.mu[2 * r];
    const double f2r = factorial(2 * r);
    const double s =
        std::pow(f2r * f2r * kernel.psi / (4.0 * r * mu2r * mu2r * roughness),
                 1.0 / (4.0 * r - 1.0));
    return s * std::pow(static_cast<double>(n), -1.0 / (4.0 * r - 1.0));
}

}  // namespace gelk
