#pragma once

#include <cmath>
#include <numbers>

namespace gelk {

inline constexpr double sqrt_2pi = 2.506628274631000502415765284811;

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / sqrt_2pi; }

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Survival function of Student's t with nu degrees of freedom.
double student_t_sf(double t, double nu);

// Survival function and upper quantile of the chi-square distribution.
double chi2_sf(double x, double dof);
double chi2_quantile(double p, double dof);

}  // namespace gelk
