#include "gelk/bias_correction.hpp"

#include <cmath>
#include <string>

#include <Eigen/Cholesky>

#include "gelk/errors.hpp"
#include "gelk/quadrature.hpp"

namespace gelk {

Vector smooth_conditional_product(const Vector& u_hat, const Vector& v, const Vector& pi,
                                  const KernelSpec& kernel, double pilot_b, const Vector& grid,
                                  int derivative_order) {
    if (derivative_order < 0 || derivative_order > 2)
        throw input_error("smoother derivative order " + std::to_string(derivative_order) +
                          " unsupported (0, 1, 2 only)");
    if (!(pilot_b > 0.0)) throw input_error("pilot bandwidth must be positive");
    if (u_hat.size() != v.size() || u_hat.size() != pi.size())
        throw input_error("smoother inputs have mismatched lengths");

    const double scale = std::pow(pilot_b, -(derivative_order + 1.0));
    Vector out = Vector::Zero(grid.size());
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < u_hat.size(); ++i)
            acc += pi[i] * v[i] * kernel.derivative((grid[j] - u_hat[i]) / pilot_b,
                                                    derivative_order);
        out[j] = acc * scale;
    }
    return out;
}

Vector delta_curve(const GelSolution& sol, const AsymptoticMatrices& matrices,
                   const MomentModel& model, const Dataset& data, const KernelSpec& kernel,
                   double pilot_b, const Vector& grid) {
    const Eigen::Index n = data.rows();
    const Vector ptil = shrink_probabilities(sol.pi);
    const Vector h_zeta = matrices.H_hat * matrices.zeta_lambda_hat;

    Vector u_hat(n), v1(n), v2(n), v3(n), v4(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector z = data.row(i).transpose();
        u_hat[i] = model.u(z, sol.beta_hat);
        const Vector gu = model.grad_u(z, sol.beta_hat);
        const Vector gi = model.g(z, sol.beta_hat);
        v1[i] = gu.dot(matrices.H_hat * gi);
        v2[i] = gu.dot(h_zeta);
        v3[i] = gu.dot(matrices.Sigma_hat * gu);
        v4[i] = (matrices.Sigma_hat * model.hess_u(z, sol.beta_hat)).trace();
    }

    Vector t1 = smooth_conditional_product(u_hat, v1, ptil, kernel, pilot_b, grid, 1);
    Vector t2 = smooth_conditional_product(u_hat, v2, ptil, kernel, pilot_b, grid, 1);
    Vector s1 = smooth_conditional_product(u_hat, v3, ptil, kernel, pilot_b, grid, 2);
    Vector s2 = smooth_conditional_product(u_hat, v4, ptil, kernel, pilot_b, grid, 1);
    return t1 - t2 + 0.5 * (s1 - s2);
}

Vector delta_rho_curve(const GelSolution& sol, const AsymptoticMatrices& matrices,
                       const Matrix& gmat, const Vector& u_hat, const KernelSpec& kernel,
                       double pilot_b, const Vector& grid, const Vector& f_hat) {
    const int dg = static_cast<int>(matrices.P_hat.rows());
    const int db = static_cast<int>(matrices.H_hat.rows());
    if (dg == db) return Vector::Zero(grid.size());  // P = 0: no weighting effect

    const Eigen::Index n = gmat.rows();
    const Vector ptil = shrink_probabilities(sol.pi);
    const double crho = c_rho(sol.family);
    const Vector pzeta = matrices.P_hat * matrices.zeta_lambda_hat;

    Vector q(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector gi = gmat.row(i).transpose();
        q[i] = gi.dot(matrices.P_hat * gi);  // g'Pg
        w[i] = gi.dot(pzeta);                // zeta'Pg
    }
    Vector num_q = smooth_conditional_product(u_hat, q, ptil, kernel, pilot_b, grid, 0);
    Vector num_w = smooth_conditional_product(u_hat, w, ptil, kernel, pilot_b, grid, 0);

    const double floor = 1e-3 * f_hat.maxCoeff();
    Vector out = Vector::Zero(grid.size());
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        if (f_hat[j] <= floor) continue;
        const double cond_q = num_q[j] / f_hat[j];
        const double cond_w = num_w[j] / f_hat[j];
        out[j] = (-crho * cond_q + crho * (dg - db) + cond_w) * f_hat[j];
    }
    return out;
}

Vector known_beta_bias_curve(const AsymptoticMatrices& matrices, const Matrix& gmat,
                             const Vector& u_hat, const Vector& pi, const KernelSpec& kernel,
                             double pilot_b, const Vector& grid, const Vector& f_hat,
                             const CarrierFamily& family) {
    const double crho = c_rho(family);
    if (crho == 0.0) return Vector::Zero(grid.size());

    const Eigen::Index n = gmat.rows();
    const int dg = static_cast<int>(gmat.cols());
    Eigen::LLT<Matrix> omega_llt(matrices.Omega_hat);

    // q_i = g_i' Omega^-1 g_i and the unconditional third-moment contraction
    // t = E[(g'Omega^-1 g) g].
    Vector q(n);
    Vector tvec = Vector::Zero(dg);
    Matrix oig = omega_llt.solve(gmat.transpose());  // dg x n, columns Omega^-1 g_i
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector gi = gmat.row(i).transpose();
        q[i] = gi.dot(oig.col(i));
        tvec += pi[i] * q[i] * gi;
    }
    const Vector t_oi = omega_llt.solve(tvec);  // Omega^-1 t
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = t_oi.dot(gmat.row(i).transpose());

    Vector num_q = smooth_conditional_product(u_hat, q, pi, kernel, pilot_b, grid, 0);
    Vector num_w = smooth_conditional_product(u_hat, w, pi, kernel, pilot_b, grid, 0);

    const double floor = 1e-3 * f_hat.maxCoeff();
    Vector out = Vector::Zero(grid.size());
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
        if (f_hat[j] <= floor) continue;
        out[j] = crho * (-num_q[j] / f_hat[j] + num_w[j] / f_hat[j] + dg) * f_hat[j];
    }
    return out;
}

namespace {

void check_same_grid(const Vector& a, const Vector& b) {
    if (a.size() != b.size() || (a - b).cwiseAbs().maxCoeff() > 1e-12)
        throw input_error("estimate and bias curves live on different grids");
}

}  // namespace

CurveEstimate bias_corrected_pdf(const CurveEstimate& f_rho_hat, const BiasCurves& curves, long n,
                                 bool include_delta_rho) {
    if (f_rho_hat.kind != CurveKind::pdf)
        throw input_error("bias_corrected_pdf expects a pdf estimate");
    check_same_grid(f_rho_hat.grid, curves.grid);
    CurveEstimate raw = f_rho_hat;
    raw.values -= curves.delta / static_cast<double>(n);
    if (include_delta_rho) raw.values -= curves.delta_rho / static_cast<double>(n);
    CurveEstimate out = positive_part_normalize(raw);
    out.bias_corrected = true;
    return out;
}

CurveEstimate bias_corrected_cdf(const CurveEstimate& F_rho_hat, const BiasCurves& curves, long n,
                                 bool include_delta_rho) {
    if (F_rho_hat.kind != CurveKind::cdf)
        throw input_error("bias_corrected_cdf expects a cdf estimate");
    check_same_grid(F_rho_hat.grid, curves.grid);
    CurveEstimate raw = F_rho_hat;
    raw.values -= curves.Delta / static_cast<double>(n);
    if (include_delta_rho) raw.values -= curves.Delta_rho / static_cast<double>(n);
    CurveEstimate out = rearrange_cdf(raw);
    out.bias_corrected = true;
    return out;
}

BiasCurves make_bias_curves(const GelSolution& sol, const AsymptoticMatrices& matrices,
                            const MomentModel& model, const Dataset& data,
                            const KernelSpec& kernel, double pilot_b, const Vector& grid,
                            const Vector& f_hat) {
    BiasCurves out;
    out.grid = grid;
    out.pilot_b = pilot_b;
    out.delta = delta_curve(sol, matrices, model, data, kernel, pilot_b, grid);

    const Eigen::Index n = data.rows();
    Vector u_hat(n);
    for (Eigen::Index i = 0; i < n; ++i)
        u_hat[i] = model.u(data.row(i).transpose(), sol.beta_hat);
    Matrix gmat = moment_matrix(model, data, sol.beta_hat);
    out.delta_rho =
        delta_rho_curve(sol, matrices, gmat, u_hat, kernel, pilot_b, grid, f_hat);

    out.Delta = cumulative_trapezoid(grid, out.delta);
    out.Delta_rho = cumulative_trapezoid(grid, out.delta_rho);
    return out;
}

}  // namespace gelk
