#pragma once

#include <functional>
#include <optional>

#include <Eigen/Core>

#include "gelk/carrier.hpp"

namespace gelk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Observations are rows of a dense matrix; each row is one z.
using Dataset = Eigen::MatrixXd;

// A moment restriction E[g(z, beta0)] = 0 together with the generalised
// residual u(z, beta) it is built around.  The five core evaluators are
// per-observation; the remaining hooks are optional accelerators or
// model-specific knowledge that the solvers exploit when present.
struct MomentModel {
    int d_g = 0;
    int d_beta = 0;

    std::function<Vector(const Vector& z, const Vector& beta)> g;        // d_g
    std::function<Matrix(const Vector& z, const Vector& beta)> G;        // d_g x d_beta
    std::function<double(const Vector& z, const Vector& beta)> u;
    std::function<Vector(const Vector& z, const Vector& beta)> grad_u;   // d_beta
    std::function<Matrix(const Vector& z, const Vector& beta)> hess_u;   // d_beta x d_beta

    // Optional vectorised evaluation of all n moment rows at once.
    std::function<Matrix(const Dataset& data, const Vector& beta)> g_all;
    // Optional analytic second derivative of moment coordinate j w.r.t. beta;
    // when absent it is recovered by central differences of G.
    std::function<Matrix(const Vector& z, const Vector& beta, int j)> hess_g;
    // Optional cheap consistent starting value (used when no explicit start
    // is supplied); the default is a generic two-step GMM pass.
    std::function<Vector(const Dataset& data)> init;
    // Optional identification normalisation mapping beta to its canonical
    // representative (applied to the final estimate only; it must not change
    // the criterion value).
    std::function<Vector(const Vector& beta)> canonicalize;
};

// Moment rows g(z_i, beta) stacked into an n x d_g matrix.
Matrix moment_matrix(const MomentModel& model, const Dataset& data, const Vector& beta);

struct GelSolution {
    Vector beta_hat;
    Vector lambda_hat;
    Vector pi;          // implied probabilities (may contain negatives)
    double criterion = 0.0;  // P_n(beta_hat, lambda_hat)
    int n = 0;
    bool converged = false;
    int inner_iterations = 0;  // largest inner Newton count encountered
    int outer_iterations = 0;
    CarrierFamily family = CarrierFamily::EL();
};

// Plug-in estimates of the matrices entering the second-order expansions.
// All expectations are shrunk-probability weighted sample means.
struct AsymptoticMatrices {
    Matrix Omega_hat;        // d_g x d_g
    Matrix G_hat;            // d_g x d_beta
    Matrix Sigma_hat;        // d_beta x d_beta, (G' Omega^-1 G)^-1
    Matrix H_hat;            // d_beta x d_g,    Sigma G' Omega^-1
    Matrix P_hat;            // d_g x d_g,       Omega^-1 - Omega^-1 G Sigma G' Omega^-1
    Vector a_hat;            // d_g
    Vector zeta_lambda_hat;  // d_g
};

struct GelOptions {
    std::optional<Vector> beta0;  // explicit start; default is two-step GMM
    double inner_tol = 1e-9;      // first-order-condition norm for lambda
    double outer_tol = 1e-6;      // gradient norm for the profile minimiser
    int inner_max_iter = 200;
    int outer_max_iter = 500;
};

struct InnerSolution {
    Vector lambda;
    double criterion = 0.0;  // P_n(beta, lambda) at the maximiser
    int iterations = 0;
    bool converged = false;
    double residual_norm = 0.0;
};

// Maximise the inner criterion n^-1 sum rho(lambda' g_i) - rho(0) over the
// feasible multipliers (damped Newton with a feasibility guard).  Throws
// singular_moment_error when gmat is numerically rank deficient and
// convergence_error when the iteration cap is reached.
InnerSolution solve_lambda(const Matrix& gmat, const CarrierFamily& family, double tol = 1e-9,
                           int max_iter = 200);

// Non-throwing variant used inside optimisation loops: reports failure in the
// returned flags instead.  warm, when given, seeds the iteration.
InnerSolution solve_lambda_status(const Matrix& gmat, const CarrierFamily& family, double tol,
                                  int max_iter, const Vector* warm = nullptr);

// pi_i = rho'(lambda' g_i) / sum_j rho'(lambda' g_j); sums to one exactly,
// equals 1/n at lambda = 0, may contain negative entries away from it.
Vector implied_probabilities(const Vector& lambda, const Matrix& gmat,
                             const CarrierFamily& family);

// Shift-and-renormalise correction (pi_i + eps) / (1 + n eps) with
// eps = -min(min_i pi_i, 0): nonnegative, sums to one, identity on
// already-nonnegative input.
Vector shrink_probabilities(const Vector& pi);

// Full saddle-point fit: beta minimises the profile beta -> sup_lambda P_n.
GelSolution gel_fit(const MomentModel& model, const Dataset& data, const CarrierFamily& family,
                    const GelOptions& options = {});

// Known-beta workflow: solve the inner problem at a fixed beta and package
// the result (no outer search).
GelSolution solve_at_beta(const MomentModel& model, const Dataset& data, const Vector& beta,
                          const CarrierFamily& family, const GelOptions& options = {});

struct OveridStatistic {
    double stat = 0.0;
    int dof = 0;
};

// 2 n P_n(beta_hat, lambda_hat), asymptotically chi-square with d_g - d_beta
// degrees of freedom under the moment restrictions.
OveridStatistic overid_statistic(const GelSolution& sol, const MomentModel& model);

// Plug-in second-order components at the fitted solution.  Expectations use
// shrunk implied probabilities; second derivatives of g come from hess_g or
// central differences of the Jacobian.
AsymptoticMatrices asymptotic_components(const GelSolution& sol, const MomentModel& model,
                                         const Dataset& data);

// Generic two-step GMM (identity weight, then inverse moment covariance)
// used to initialise gel_fit when the model offers nothing better.
Vector two_step_gmm(const MomentModel& model, const Dataset& data);

}  // namespace gelk
