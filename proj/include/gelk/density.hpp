#pragma once

#include <Eigen/Core>

#include "gelk/kernels.hpp"

namespace gelk {

using Vector = Eigen::VectorXd;

// A weighted point set (u_i, pi_i): the weights must sum to one (1e-8) but
// are allowed to be negative (raw implied probabilities).
struct WeightedSample {
    Vector points;
    Vector weights;
};

enum class CurveKind { pdf, cdf };

struct CurveEstimate {
    Vector grid;    // strictly increasing
    Vector values;  // same length
    double bandwidth = 0.0;
    CurveKind kind = CurveKind::pdf;
    // Correction flags, set by the operations that apply them.
    bool positive_part_applied = false;
    bool rearranged = false;
    bool bias_corrected = false;
};

// The evaluation grid used throughout: 1000 equispaced points on [-5, 5].
Vector default_grid();

// f(u) = sum_i pi_i k((u - u_i)/b) / b by direct summation on the grid.
CurveEstimate weighted_kde(const WeightedSample& sample, const KernelSpec& kernel, double b,
                           const Vector& grid);

// F(u) = sum_i pi_i K((u - u_i)/b).
CurveEstimate weighted_kcdf(const WeightedSample& sample, const KernelSpec& kernel, double b,
                            const Vector& grid);

// Density repair: when the positive part carries more than unit mass, shift
// down by the xi >= 0 solving  integral max(f - xi, 0) = 1  (bisection);
// when it carries less, rescale max(f, 0) multiplicatively.  Throws
// support_error when the positive part holds under half its mass, since
// normalising such a curve would distort rather than repair it.
CurveEstimate positive_part_normalize(const CurveEstimate& est);

// Monotone rearrangement of a distribution-function estimate: sort the grid
// values ascending, then clip into [0, 1].
CurveEstimate rearrange_cdf(const CurveEstimate& est);

// AMISE-optimal bandwidths for an order-2r kernel given the roughness of the
// relevant derivative of the target density:
//   pdf: c n^{-1/(4r+1)},  c = [(2r)!^2 R(k) / (4 r mu_{2r}^2 R(f^{(2r)}))]^{1/(4r+1)}
//   cdf: s n^{-1/(4r-1)},  s = [(2r)!^2 psi(k) / (4 r mu_{2r}^2 R(f^{(2r-1)}))]^{1/(4r-1)}
double amise_bandwidth_pdf(const KernelSpec& kernel, double roughness, long n);
double amise_bandwidth_cdf(const KernelSpec& kernel, double roughness, long n);

}  // namespace gelk
