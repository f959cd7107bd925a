#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gelk/carrier.hpp"
#include "gelk/density.hpp"
#include "gelk/gel_core.hpp"
#include "gelk/kernels.hpp"

namespace gelk {

// Inverse hyperbolic sine transform pair: ihs(theta, t) = sinh(theta t)/theta
// and ihs_inverse(theta, y) = arsinh(theta y)/theta, with series branches near
// theta = 0 (both tend to the identity).
double ihs(double theta, double t);
double ihs_inverse(double theta, double y);

struct MixtureComponent {
    double weight = 0.0;
    double mean = 0.0;
    double sd = 1.0;
};

struct GridSpec {
    int points = 1000;
    double lo = -5.0;
    double hi = 5.0;
    Vector make() const { return Vector::LinSpaced(points, lo, hi); }
};

// Full description of one Monte Carlo cell.
struct ScenarioConfig {
    int scenario = 1;  // 1: normal x,u; 2-3: u = w/x with mixture w, generalised-gamma x
    long n = 100;
    int d_g = 4;  // 3 (just identified), 4 or 5 polynomial instruments
    CarrierFamily family = CarrierFamily::EL();
    int replications = 2000;
    std::uint64_t master_seed = 20240816;
    Vector beta0;  // (delta, gamma, theta); set by defaults() to (1, 2, 0.08)
    GridSpec grid;
    int kernel_r = 2;
    double nu = 8.0;                        // x-tail parameter, scenarios 2-3
    std::vector<MixtureComponent> mixture;  // law of w, scenarios 2-3
    int threads = 0;                        // 0: hardware concurrency
    bool estimate_curves = true;  // false: fits and overid statistics only

    static ScenarioConfig defaults(int scenario);
    void validate() const;
};

struct Sample {
    Vector y;
    Vector x;
    Vector u;  // the true residual draws
};

// Deterministic per-replication stream: a counter-based split of the master
// seed, so any parallel schedule sees identical draws.
std::mt19937_64 replication_rng(std::uint64_t master_seed, int rep_index);

Sample sample_scenario(const ScenarioConfig& cfg, int rep_index);

// The IHS transformation model y <-> arsinh(theta y)/theta = delta + gamma x + u
// with polynomial instruments (1, x, ..., x^{d_g - 1}); analytic residual
// derivatives and a profiled two-step GMM starting-value hook.
MomentModel residual_map(int d_g);

// Marginal law of u implied by the scenario: standard normal for scenario 1,
// otherwise f_u(u) = int_0^inf x f_w(u x) f_x(x) dx by adaptive quadrature.
Vector true_density(const ScenarioConfig& cfg, const Vector& grid);
Vector true_cdf(const ScenarioConfig& cfg, const Vector& grid);

// Standard deviation of u (closed form: mixture and generalised-gamma moments).
double sigma_u(const ScenarioConfig& cfg);

// R(f^{(j)}) of the true u-marginal, j in {1,...,4}: closed form for scenario 1,
// high-order finite differences of the quadrature density otherwise.
double marginal_roughness(const ScenarioConfig& cfg, int derivative);

// R(f^{(j)})^{-1/(2j+1)} / sigma_u: the roughness constant of the unit-variance
// standardised marginal, the form quoted for the mixture scenarios.
double standardized_roughness_constant(const ScenarioConfig& cfg, int derivative);

// Calibration point for the scenario-1 analytic predictions.  The published
// constants correspond to the strong-signal benchmark gamma = 4 with the
// closed-form (probit-style) approximation of the conditional curve
// tau_{0|u}; both knobs are explicit so the design point (gamma = 2) and the
// exact-quadrature conditional remain available.
struct IvarCalibration {
    double delta = 1.0;
    double gamma = 4.0;
    double theta = 0.08;
    bool closed_form_conditional = true;
};

// tau' D tau: the quadratic form in tau_j = E[x^j s3(x)] with D built from
// normal moment matrices, entering the theta-direction efficiency bound.
double scenario1_tau_D_tau(int d_g, const IvarCalibration& cal = {});

// Predicted relative integrated variance of the estimated-residual density
// estimator: 1 - b/(4 sqrt(pi) R(k)) + b I_d / (tau'D tau R(k)) at the AMISE
// bandwidth for n.
double scenario1_relative_ivar_prediction(long n, int d_g, const KernelSpec& kernel,
                                          const IvarCalibration& cal = {});

struct EstimatorStats {
    std::string name;
    double isb = 0.0;
    double ivar = 0.0;
    double mise = 0.0;
    // Ratios against the matching infeasible baseline (f~ resp. F~).
    double ratio_isb = 1.0;
    double ratio_ivar = 1.0;
    double ratio_mise = 1.0;
    // Paired two-sided t-test of per-replication ISE against the baseline.
    double t_stat = 0.0;
    double p_value = 1.0;
    std::string p_category;  // "ns", "0.01-0.05", "<0.01"
    bool degenerate = false;
};

struct McReport {
    int scenario = 1;
    long n = 0;
    int d_g = 0;
    std::string family;
    std::uint64_t master_seed = 0;
    int replications_requested = 0;
    int replications_used = 0;
    int failures = 0;
    bool valid = true;  // false when more than 5% of replications failed
    double b_pdf = 0.0;
    double b_cdf = 0.0;
    Vector grid;
    Vector truth_pdf;
    Vector truth_cdf;
    double truncated_mass = 0.0;  // true probability mass outside the grid
    // Estimator order: f~, f~_rho, f^, f^_rho, F~, F~_rho, F^, F^_rho.
    std::vector<EstimatorStats> estimators;
    std::vector<Vector> mean_curves;
    std::vector<Vector> var_curves;
    // Overidentification test tracking (estimated-beta fit, 5% asymptotic level).
    int overid_dof = 0;
    double overid_critical = 0.0;
    double overid_mean_stat = 0.0;
    double overid_rejection_rate = 0.0;
};

McReport run_mc(const ScenarioConfig& cfg);

struct PairedTResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;
};

// Two-sided paired t-test for equal means of two ISE sequences.
PairedTResult paired_ise_ttest(const std::vector<double>& ise_a,
                               const std::vector<double>& ise_b);

}  // namespace gelk
