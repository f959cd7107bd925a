#pragma once

#include <Eigen/Core>

#include "gelk/density.hpp"
#include "gelk/gel_core.hpp"
#include "gelk/kernels.hpp"

namespace gelk {

// The order-n^-1 bias coefficient curves.  delta corrects for parameter
// estimation in the residuals, delta_rho for the implied-probability
// weighting; Delta and Delta_rho are their running integrals, entering the
// distribution-function corrections.  Delta[j] is the cumulative trapezoid
// integral of delta up to grid[j] by construction (likewise Delta_rho).
struct BiasCurves {
    Vector grid;
    Vector delta;
    Vector delta_rho;
    Vector Delta;
    Vector Delta_rho;
    double pilot_b = 0.0;
};

// Sample analogue of d^d { E[v_i | u] f(u) } / du^d on the grid:
//   sum_i pi_i v_i k^{(d)}((u - u_i)/b) / b^{d+1},
// the building block of every bias-curve term.  d in {0, 1, 2}.
Vector smooth_conditional_product(const Vector& u_hat, const Vector& v, const Vector& pi,
                                  const KernelSpec& kernel, double pilot_b, const Vector& grid,
                                  int derivative_order);

// Estimation-effect bias curve
//   delta(u) = d{E[grad_u' H g | u] f}/du - zeta' H' d{E[grad_u | u] f}/du
//            + (1/2) tr(Sigma [ d^2{E[grad_u grad_u' | u] f}/du^2
//                              - d{E[hess_u | u] f}/du ]),
// which linearity collapses to four scalar smoother calls.
Vector delta_curve(const GelSolution& sol, const AsymptoticMatrices& matrices,
                   const MomentModel& model, const Dataset& data, const KernelSpec& kernel,
                   double pilot_b, const Vector& grid);

// Weighting-effect bias curve
//   delta_rho(u) = ( -c_rho E[g'Pg | u] + c_rho (d_g - d_beta)
//                    + zeta' P E[g | u] ) f(u),
// with the conditional expectations formed as ratio smoothers over f_hat
// (floored at 1e-3 of its maximum; the curve is zero where f_hat is below
// the floor).  Identically zero in the just-identified case.
Vector delta_rho_curve(const GelSolution& sol, const AsymptoticMatrices& matrices,
                       const Matrix& gmat, const Vector& u_hat, const KernelSpec& kernel,
                       double pilot_b, const Vector& grid, const Vector& f_hat);

// Known-beta variant of the weighting bias:
//   c_rho ( -E[g'Omega^-1 g | u] + E[g'Omega^-1 g g'] Omega^-1 E[g | u] + d_g ) f(u);
// identically zero whenever c_rho = 0 (e.g. the log carrier).
Vector known_beta_bias_curve(const AsymptoticMatrices& matrices, const Matrix& gmat,
                             const Vector& u_hat, const Vector& pi, const KernelSpec& kernel,
                             double pilot_b, const Vector& grid, const Vector& f_hat,
                             const CarrierFamily& family);

// f^bc = f - delta/n (- delta_rho/n when include_delta_rho), then repaired to
// a proper density via positive_part_normalize.
CurveEstimate bias_corrected_pdf(const CurveEstimate& f_rho_hat, const BiasCurves& curves, long n,
                                 bool include_delta_rho = true);

// F^bc = F - Delta/n (- Delta_rho/n), then monotone-rearranged and clipped.
CurveEstimate bias_corrected_cdf(const CurveEstimate& F_rho_hat, const BiasCurves& curves, long n,
                                 bool include_delta_rho = true);

// Assemble all four curves at once; f_hat is a corrected density on `grid`
// (used by the ratio smoothers), pilot_b the oversmoothed pilot bandwidth
// (the convention elsewhere in this library is twice the AMISE density
// bandwidth).
BiasCurves make_bias_curves(const GelSolution& sol, const AsymptoticMatrices& matrices,
                            const MomentModel& model, const Dataset& data,
                            const KernelSpec& kernel, double pilot_b, const Vector& grid,
                            const Vector& f_hat);

}  // namespace gelk
