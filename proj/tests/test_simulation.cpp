#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include <gelk/density.hpp>
#include <gelk/gel_core.hpp>
#include <gelk/kernels.hpp>
#include <gelk/quadrature.hpp>
#include <gelk/simulation.hpp>
#include <gelk/stats.hpp>

using namespace gelk;

namespace {

const double kSqrtPi = std::sqrt(M_PI);

double wide_mass(const ScenarioConfig& cfg, double half) {
    double mass = 0.0;
    const int panels = static_cast<int>(2.0 * half);
    const double w = 2.0 * half / panels;
    for (int p = 0; p < panels; ++p) {
        QuadratureRule gl = gauss_legendre(24, -half + p * w, -half + (p + 1) * w);
        Vector d = true_density(cfg, gl.nodes);
        mass += (gl.weights.array() * d.array()).sum();
    }
    return mass;
}

}  // namespace

TEST_CASE("transform pair: identity limit and round trips") {
    CHECK(ihs_inverse(0.0, 3.7) == doctest::Approx(3.7).epsilon(1e-15));
    CHECK(ihs(0.0, 3.7) == doctest::Approx(3.7).epsilon(1e-15));
    CHECK(ihs(0.08, 0.0) == 0.0);
    CHECK(ihs_inverse(0.08, 0.0) == 0.0);
    for (double theta : {0.0, 1e-9, 1e-4, 0.01, 0.08, 0.5}) {
        for (double t : {-4.0, -1.0, 0.0, 0.3, 2.0, 5.0}) {
            CHECK(std::abs(ihs_inverse(theta, ihs(theta, t)) - t) <= 1e-12);
            CHECK(std::abs(ihs(theta, ihs_inverse(theta, t)) - t) <= 1e-12);
        }
    }
}

TEST_CASE("residual model: analytic derivatives match finite differences") {
    MomentModel model = residual_map(4);
    CHECK(model.d_g == 4);
    CHECK(model.d_beta == 3);
    std::mt19937_64 rng(314159);
    std::uniform_real_distribution<double> ux(-3.0, 3.0), uy(-30.0, 30.0);
    std::uniform_real_distribution<double> ud(0.5, 1.5), ug(1.0, 3.0), ut(0.02, 0.6);
    for (int probe = 0; probe < 20; ++probe) {
        Vector z(2);
        z << uy(rng), ux(rng);
        Vector beta(3);
        beta << ud(rng), ug(rng), ut(rng);

        Vector grad = model.grad_u(z, beta);
        Matrix hess = model.hess_u(z, beta);
        Matrix jac = model.G(z, beta);
        for (int l = 0; l < 3; ++l) {
            const double h = 1e-5 * std::max(1.0, std::abs(beta[l]));
            Vector bp = beta, bm = beta;
            bp[l] += h;
            bm[l] -= h;
            double fd = (model.u(z, bp) - model.u(z, bm)) / (2.0 * h);
            CHECK(std::abs(grad[l] - fd) / std::max(1.0, std::abs(fd)) <= 1e-6);
            Vector gfd = (model.g(z, bp) - model.g(z, bm)) / (2.0 * h);
            for (int j = 0; j < 4; ++j)
                CHECK(std::abs(jac(j, l) - gfd[j]) / std::max(1.0, std::abs(gfd[j])) <= 1e-6);
            Vector hfd = (model.grad_u(z, bp) - model.grad_u(z, bm)) / (2.0 * h);
            for (int m = 0; m < 3; ++m)
                CHECK(std::abs(hess(l, m) - hfd[m]) / std::max(1.0, std::abs(hfd[m])) <= 1e-6);
        }
    }
}

TEST_CASE("residual model: series branch near theta = 0") {
    MomentModel model = residual_map(4);
    Vector z(2);
    z << 7.3, 0.4;
    Vector beta(3);
    beta << 1.0, 2.0, 1e-4;
    // theta-derivative via the small-argument series vs a central difference.
    double analytic = model.grad_u(z, beta)[2];
    const double h = 1e-6;
    Vector bp = beta, bm = beta;
    bp[2] += h;
    bm[2] -= h;
    double fd = (model.u(z, bp) - model.u(z, bm)) / (2.0 * h);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-6));
    // Series structure at the origin: u(theta) - u(0) = -theta^2 y^3/6 + ...,
    // so the first derivative vanishes at theta = 0, behaves as -theta y^3/3
    // nearby, and the second derivative tends to -y^3/3.
    const double y3 = z[0] * z[0] * z[0];
    Vector b0(3);
    b0 << 1.0, 2.0, 0.0;
    double du = model.u(z, beta) - model.u(z, b0);
    CHECK(du / (beta[2] * beta[2]) == doctest::Approx(-y3 / 6.0).epsilon(1e-5));
    CHECK(model.grad_u(z, b0)[2] == 0.0);
    CHECK(analytic / beta[2] == doctest::Approx(-y3 / 3.0).epsilon(1e-5));
    CHECK(model.hess_u(z, b0)(2, 2) == doctest::Approx(-y3 / 3.0).epsilon(1e-10));
}

TEST_CASE("residual model: recovers the simulated residuals at the true parameter") {
    ScenarioConfig cfg = ScenarioConfig::defaults(1);
    cfg.n = 200;
    MomentModel model = residual_map(cfg.d_g);
    Sample s = sample_scenario(cfg, 3);
    for (int i = 0; i < 200; ++i) {
        Vector z(2);
        z << s.y[i], s.x[i];
        CHECK(std::abs(model.u(z, cfg.beta0) - s.u[i]) <= 1e-12);
    }
}

TEST_CASE("sampling: scenario moments") {
    const long n = 1000000;
    {
        ScenarioConfig cfg = ScenarioConfig::defaults(1);
        cfg.n = n;
        Sample s = sample_scenario(cfg, 0);
        const double band = 4.0 / std::sqrt(double(n));
        CHECK(std::abs(s.x.mean()) <= band);
        CHECK(std::abs(s.u.mean()) <= band);
        double corr = ((s.x.array() - s.x.mean()) * (s.u.array() - s.u.mean())).mean() /
                      (std::sqrt((s.x.array() - s.x.mean()).square().mean()) *
                       std::sqrt((s.u.array() - s.u.mean()).square().mean()));
        CHECK(std::abs(corr) <= band);
    }
    for (int scen : {2, 3}) {
        ScenarioConfig cfg = ScenarioConfig::defaults(scen);
        cfg.n = n;
        Sample s = sample_scenario(cfg, 1);
        auto x2 = s.x.array().square();
        double se = std::sqrt((x2 - x2.mean()).square().mean() / double(n));
        CHECK(std::abs(x2.mean() - 1.0) <= 5.0 * se);
        if (scen == 2) {
            for (int j = 0; j <= 2; ++j) {
                auto v = (s.u.array() * s.x.array().pow(j)).eval();
                double vse = std::sqrt((v - v.mean()).square().mean() / double(n));
                CHECK(std::abs(v.mean()) <= 5.0 * vse);
            }
        }
    }
}

TEST_CASE("true marginal law of the residual") {
    ScenarioConfig cfg1 = ScenarioConfig::defaults(1);
    Vector grid = cfg1.grid.make();
    Vector f = true_density(cfg1, grid);
    Vector F = true_cdf(cfg1, grid);
    for (int j : {0, 250, 500, 750, 999}) {
        CHECK(f[j] == doctest::Approx(norm_pdf(grid[j])).epsilon(1e-12));
        CHECK(F[j] == doctest::Approx(norm_cdf(grid[j])).epsilon(1e-10));
    }
    CHECK(std::abs(wide_mass(cfg1, 20.0) - 1.0) <= 1e-8);

    for (int scen : {2, 3}) {
        ScenarioConfig cfg = ScenarioConfig::defaults(scen);
        // The quadrature itself is far more accurate than the residual's own
        // polynomial tail mass beyond +-20 (about 3e-8 to 5e-8 for the default
        // mixtures), so the wide-interval check is the sharp one.
        WARN(std::abs(wide_mass(cfg, 20.0) - 1.0) <= 1e-8);
        CHECK(std::abs(wide_mass(cfg, 20.0) - 1.0) <= 1e-7);
        CHECK(std::abs(wide_mass(cfg, 80.0) - 1.0) <= 1e-10);
        Vector Fm = true_cdf(cfg, grid);
        for (int j = 1; j < grid.size(); ++j) CHECK(Fm[j] >= Fm[j - 1] - 1e-12);
        CHECK(Fm[0] >= 0.0);
        CHECK(Fm[grid.size() - 1] <= 1.0 + 1e-12);
    }
}

TEST_CASE("mixture scenarios: standardised roughness constants") {
    ScenarioConfig cfg2 = ScenarioConfig::defaults(2);
    CHECK(standardized_roughness_constant(cfg2, 4) == doctest::Approx(0.595872).epsilon(2e-3));
    CHECK(std::abs(standardized_roughness_constant(cfg2, 4) - 0.595872) <= 1e-3);
    CHECK(std::abs(standardized_roughness_constant(cfg2, 3) - 0.738786) <= 1e-3);
    ScenarioConfig cfg3 = ScenarioConfig::defaults(3);
    CHECK(std::abs(standardized_roughness_constant(cfg3, 4) - 0.372818) <= 1e-3);
    CHECK(std::abs(standardized_roughness_constant(cfg3, 3) - 0.499502) <= 1e-3);
}

TEST_CASE("analytic relative-variance prediction") {
    KernelSpec k2 = gaussian_kernel(2);
    CHECK(std::abs(scenario1_tau_D_tau(4) - 9.8092) <= 1e-3);
    CHECK(std::abs(scenario1_tau_D_tau(5) - 9.8514) <= 1e-3);
    const double targets[4] = {0.836, 0.863, 0.873, 0.882};
    const long ns[4] = {100, 500, 1000, 2000};
    for (int i = 0; i < 4; ++i) {
        double pred = scenario1_relative_ivar_prediction(ns[i], 4, k2);
        CHECK(std::abs(pred - targets[i]) <= 0.002);
    }
    // Leading term -b / (4 sqrt(pi) R(k)) = -0.321 n^{-1/9} for the
    // fourth-order kernel at the normal-target bandwidth.
    const double rough4 = 105.0 / (32.0 * kSqrtPi);
    for (long n : {100L, 1000L}) {
        double b = amise_bandwidth_pdf(k2, rough4, n);
        double lead = b / (4.0 * kSqrtPi * k2.roughness) * std::pow(double(n), 1.0 / 9.0);
        CHECK(std::abs(lead - 0.321) <= 5e-4);
    }
}

TEST_CASE("paired t-test on ISE sequences") {
    std::vector<double> a(50), b(50);
    std::mt19937_64 rng(99);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int i = 0; i < 50; ++i) a[i] = b[i] = 1.0 + 0.1 * nd(rng);
    PairedTResult same = paired_ise_ttest(a, b);
    CHECK(same.degenerate);

    // A clear mean shift drives the p-value to zero as R grows.
    double p_prev = 1.0;
    for (int R : {20, 80, 320}) {
        std::vector<double> c(R), d(R);
        for (int i = 0; i < R; ++i) {
            double base = std::abs(nd(rng));
            c[i] = base;
            d[i] = base + 0.1 + 0.02 * nd(rng);
        }
        PairedTResult shift = paired_ise_ttest(c, d);
        CHECK_FALSE(shift.degenerate);
        CHECK(shift.p <= p_prev + 1e-12);
        p_prev = shift.p;
    }
    CHECK(p_prev <= 1e-10);

    // Null calibration with permuted labels: rejection close to the level.
    int reject = 0;
    const int trials = 2000, R = 100;
    std::bernoulli_distribution flip(0.5);
    for (int t = 0; t < trials; ++t) {
        std::vector<double> c(R), d(R);
        for (int i = 0; i < R; ++i) {
            double base = std::abs(nd(rng));
            double e1 = 0.3 * nd(rng), e2 = 0.3 * nd(rng);
            if (flip(rng)) std::swap(e1, e2);
            c[i] = base + e1;
            d[i] = base + e2;
        }
        if (paired_ise_ttest(c, d).p < 0.05) ++reject;
    }
    double rate = double(reject) / trials;
    CHECK(rate >= 0.03);
    CHECK(rate <= 0.07);
}

TEST_CASE("single replication has zero integrated variance") {
    ScenarioConfig cfg = ScenarioConfig::defaults(1);
    cfg.n = 100;
    cfg.replications = 1;
    cfg.threads = 1;
    McReport rep = run_mc(cfg);
    REQUIRE(rep.estimators.size() == 8);
    for (const auto& est : rep.estimators) {
        CHECK(est.ivar == 0.0);
        CHECK(est.mise == doctest::Approx(est.isb).epsilon(1e-12));
    }
}

TEST_CASE("just-identified case: weighted estimators collapse onto the classical ones") {
    ScenarioConfig cfg = ScenarioConfig::defaults(1);
    cfg.n = 100;
    cfg.d_g = 3;
    cfg.replications = 200;
    cfg.threads = 1;
    McReport rep = run_mc(cfg);
    CHECK(rep.valid);
    // f^_rho vs f^ and F^_rho vs F^ coincide per replication (pi = 1/n at the
    // saddle point).  The fitted multipliers are zero only up to the outer
    // stopping rule, and the near-flat theta direction at n = 100 leaves
    // solver-scale discrepancies of order 1e-4 in the accumulated curves; the
    // machine-precision version of the identity is asserted on a
    // well-identified model in the core solver suite.
    for (auto [wi, ci] : {std::pair{3, 2}, std::pair{7, 6}}) {
        CHECK((rep.mean_curves[wi] - rep.mean_curves[ci]).cwiseAbs().maxCoeff() <= 2e-3);
        CHECK(rep.estimators[wi].mise ==
              doctest::Approx(rep.estimators[ci].mise).epsilon(2e-2));
        CHECK(std::abs(rep.estimators[wi].ratio_mise - rep.estimators[ci].ratio_mise) <= 2e-2);
        CHECK(std::abs(rep.estimators[wi].ratio_isb - rep.estimators[ci].ratio_isb) <= 2e-2);
    }
    // Decomposition holds for every estimator.
    for (const auto& est : rep.estimators) {
        CHECK(std::abs(est.mise - (est.isb + est.ivar)) <= 1e-10);
        CHECK(est.ratio_mise > 0.0);
    }
    // Residual mass outside the [-5,5] grid for the standard normal law.
    CHECK(rep.truncated_mass == doctest::Approx(2.0 * norm_cdf(-5.0)).epsilon(1e-6));
}

TEST_CASE("determinism: thread count does not change the report") {
    ScenarioConfig cfg = ScenarioConfig::defaults(1);
    cfg.n = 100;
    cfg.replications = 60;
    cfg.threads = 1;
    McReport r1 = run_mc(cfg);
    cfg.threads = 3;
    McReport r3 = run_mc(cfg);
    REQUIRE(r1.estimators.size() == r3.estimators.size());
    for (size_t e = 0; e < r1.estimators.size(); ++e) {
        CHECK(r1.estimators[e].isb == r3.estimators[e].isb);
        CHECK(r1.estimators[e].ivar == r3.estimators[e].ivar);
        CHECK(r1.estimators[e].mise == r3.estimators[e].mise);
        CHECK(r1.estimators[e].t_stat == r3.estimators[e].t_stat);
        CHECK((r1.mean_curves[e] - r3.mean_curves[e]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((r1.var_curves[e] - r3.var_curves[e]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(r1.overid_mean_stat == r3.overid_mean_stat);
    CHECK(r1.overid_rejection_rate == r3.overid_rejection_rate);
    CHECK(r1.b_pdf == r3.b_pdf);
    CHECK(r1.b_cdf == r3.b_cdf);
}

TEST_CASE("known-parameter weighting reduces the distribution-function variance") {
    // Single zero-mean moment g = u, n = 500: the weighted distribution
    // estimator has strictly smaller variance at an interior point.
    const int n = 500, reps = 2000;
    KernelSpec k2 = gaussian_kernel(2);
    const double rough3 = 15.0 / (16.0 * kSqrtPi);
    const double b = amise_bandwidth_cdf(k2, rough3, n);
    const double u0 = 0.0;
    CarrierFamily el = CarrierFamily::EL();
    double s1 = 0.0, s2 = 0.0, w1 = 0.0, w2 = 0.0;
    for (int r = 0; r < reps; ++r) {
        std::mt19937_64 rng = replication_rng(777, r);
        std::normal_distribution<double> nd(0.0, 1.0);
        Vector u(n);
        for (int i = 0; i < n; ++i) u[i] = nd(rng);
        Matrix gmat = u;
        InnerSolution inner = solve_lambda(gmat, el);
        Vector pi = implied_probabilities(inner.lambda, gmat, el);
        double Ft = 0.0, Fr = 0.0;
        for (int i = 0; i < n; ++i) {
            double Ki = k2.K((u0 - u[i]) / b);
            Ft += Ki / n;
            Fr += pi[i] * Ki;
        }
        s1 += Ft;
        s2 += Ft * Ft;
        w1 += Fr;
        w2 += Fr * Fr;
    }
    double var_plain = s2 / reps - (s1 / reps) * (s1 / reps);
    double var_weighted = w2 / reps - (w1 / reps) * (w1 / reps);
    CHECK(var_weighted < var_plain);
    // The reduction is first order, not marginal.
    CHECK(var_weighted / var_plain < 0.9);
}

TEST_CASE("integrated risk decreases from n = 100 to n = 1000") {
    ScenarioConfig cfg = ScenarioConfig::defaults(1);
    cfg.n = 100;
    cfg.replications = 2000;
    cfg.threads = 1;
    McReport small = run_mc(cfg);
    cfg.n = 1000;
    McReport large = run_mc(cfg);
    CHECK(small.valid);
    CHECK(large.valid);
    REQUIRE(small.estimators.size() == 8);
    REQUIRE(large.estimators.size() == 8);
    for (size_t e = 0; e < 8; ++e) {
        CHECK(large.estimators[e].mise < small.estimators[e].mise);
        CHECK(std::abs(small.estimators[e].mise -
                       (small.estimators[e].isb + small.estimators[e].ivar)) <= 1e-10);
        CHECK(std::abs(large.estimators[e].mise -
                       (large.estimators[e].isb + large.estimators[e].ivar)) <= 1e-10);
    }
    // Bandwidths follow the plug-in rules with the true roughness.
    KernelSpec k2 = gaussian_kernel(2);
    CHECK(large.b_pdf ==
          doctest::Approx(amise_bandwidth_pdf(k2, marginal_roughness(cfg, 4), 1000))
              .epsilon(1e-12));
    CHECK(large.b_cdf ==
          doctest::Approx(amise_bandwidth_cdf(k2, marginal_roughness(cfg, 3), 1000))
              .epsilon(1e-12));
}
