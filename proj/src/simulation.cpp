#include "gelk/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include "gelk/errors.hpp"
#include "gelk/quadrature.hpp"
#include "gelk/stats.hpp"

namespace gelk {

// ---------------------------------------------------------------------------
// IHS transform and its theta-derivatives
// ---------------------------------------------------------------------------

double ihs(double theta, double t) {
    const double w = theta * t;
    if (std::abs(w) < 1e-6) {
        const double s = w * w;
        return t * (1.0 + s / 6.0 + s * s / 120.0);
    }
    return std::sinh(w) / theta;
}

double ihs_inverse(double theta, double y) {
    const double w = theta * y;
    if (std::abs(w) < 1e-6) {
        const double s = w * w;
        return y * (1.0 - s / 6.0 + 3.0 * s * s / 40.0);
    }
    return std::asinh(w) / theta;
}

namespace {

// A(theta, y) = arsinh(theta y)/theta and its first two theta-derivatives.
// A is even in theta; near theta*y = 0 the direct forms lose ~t^2 significant
// digits to cancellation, so a matched series takes over at |theta y| <= 0.01.
double ihs_a(double theta, double y) {
    const double t = theta * y;
    if (std::abs(t) <= 0.01) {
        const double s = t * t;
        return y * (1.0 - s / 6.0 + 3.0 * s * s / 40.0 - 5.0 * s * s * s / 112.0);
    }
    return std::asinh(t) / theta;
}

double ihs_a_dtheta(double theta, double y) {
    const double t = theta * y;
    if (std::abs(t) <= 0.01) {
        const double y3 = y * y * y;
        const double th2 = theta * theta;
        return y3 * y * y * th2 * theta * (3.0 / 10.0 - 15.0 / 56.0 * th2 * y * y) -
               theta * y3 / 3.0;
    }
    const double s = std::sqrt(1.0 + t * t);
    return y / (theta * s) - std::asinh(t) / (theta * theta);
}

double ihs_a_dtheta2(double theta, double y) {
    const double t = theta * y;
    const double y3 = y * y * y;
    if (std::abs(t) <= 0.01) {
        const double y2 = y * y;
        const double th2 = theta * theta;
        return y3 * (-1.0 / 3.0 + 9.0 / 10.0 * th2 * y2 -
                     75.0 / 56.0 * th2 * th2 * y2 * y2);
    }
    const double s = std::sqrt(1.0 + t * t);
    return 2.0 * std::asinh(t) / (theta * theta * theta) - 2.0 * y / (theta * theta * s) -
           y3 / (s * s * s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Moment model: polynomial instruments on the IHS residual
// ---------------------------------------------------------------------------

namespace {

// Profiled two-step GMM start: for fixed theta the residual is linear in
// (delta, gamma), so those solve in closed form; theta is profiled on a
// coarse grid refined by golden section.
Vector ihs_gmm_start(const Dataset& data, int dg) {
    const Eigen::Index n = data.rows();
    const Vector y = data.col(0);
    const Vector x = data.col(1);

    Matrix X(n, dg);  // instruments x^j
    X.col(0).setOnes();
    for (int j = 1; j < dg; ++j) X.col(j) = X.col(j - 1).cwiseProduct(x);
    Matrix Z(n, 2);  // regressors of the linear part
    Z.col(0).setOnes();
    Z.col(1) = x;
    const Matrix A = X.transpose() * Z / static_cast<double>(n);  // dg x 2

    Matrix W = Matrix::Identity(dg, dg);
    Eigen::Vector2d p = Eigen::Vector2d::Zero();
    double theta = 0.0;

    auto crit = [&](double th) {
        Vector a(n);
        for (Eigen::Index i = 0; i < n; ++i) a[i] = ihs_a(th, y[i]);
        Vector c = X.transpose() * a / static_cast<double>(n);
        Eigen::Matrix2d M = A.transpose() * W * A;
        Eigen::Vector2d rhs = A.transpose() * (W * c);
        Eigen::Vector2d pl = M.ldlt().solve(rhs);
        Vector r = c - A * pl;
        p = pl;
        return r.dot(W * r);
    };

    for (int step = 0; step < 2; ++step) {
        // Coarse profile over theta >= 0, then golden-section refinement.
        double best_th = 0.0, best_q = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= 60; ++k) {
            const double th = 0.01 * k;
            const double q = crit(th);
            if (q < best_q) {
                best_q = q;
                best_th = th;
            }
        }
        double lo = std::max(0.0, best_th - 0.01), hi = best_th + 0.01;
        const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        double c1 = hi - gr * (hi - lo), c2 = lo + gr * (hi - lo);
        double f1 = crit(c1), f2 = crit(c2);
        for (int it = 0; it < 80 && hi - lo > 1e-10; ++it) {
            if (f1 < f2) {
                hi = c2, c2 = c1, f2 = f1;
                c1 = hi - gr * (hi - lo);
                f1 = crit(c1);
            } else {
                lo = c1, c1 = c2, f1 = f2;
                c2 = lo + gr * (hi - lo);
                f2 = crit(c2);
            }
        }
        theta = 0.5 * (lo + hi);
        crit(theta);  // refresh p at the chosen theta

        if (step == 0) {
            // Second-step weight: inverse moment second-moment matrix.
            Vector u(n);
            for (Eigen::Index i = 0; i < n; ++i)
                u[i] = ihs_a(theta, y[i]) - p[0] - p[1] * x[i];
            Matrix gmat = X.array().colwise() * u.array();
            Matrix omega = gmat.transpose() * gmat / static_cast<double>(n);
            omega.diagonal().array() += 1e-10 * std::max(1.0, omega.diagonal().maxCoeff());
            W = omega.llt().solve(Matrix::Identity(dg, dg));
        }
    }
    Vector beta(3);
    beta << p[0], p[1], theta;
    return beta;
}

}  // namespace

MomentModel residual_map(int d_g) {
    if (d_g < 3) throw input_error("residual_map needs d_g >= 3, got " + std::to_string(d_g));
    MomentModel m;
    m.d_g = d_g;
    m.d_beta = 3;

    m.u = [](const Vector& z, const Vector& beta) {
        return ihs_a(beta[2], z[0]) - beta[0] - beta[1] * z[1];
    };
    m.grad_u = [](const Vector& z, const Vector& beta) {
        Vector g(3);
        g << -1.0, -z[1], ihs_a_dtheta(beta[2], z[0]);
        return g;
    };
    m.hess_u = [](const Vector& z, const Vector& beta) {
        Matrix h = Matrix::Zero(3, 3);
        h(2, 2) = ihs_a_dtheta2(beta[2], z[0]);
        return h;
    };
    m.g = [d_g](const Vector& z, const Vector& beta) {
        const double u = ihs_a(beta[2], z[0]) - beta[0] - beta[1] * z[1];
        Vector out(d_g);
        double xp = 1.0;
        for (int j = 0; j < d_g; ++j) {
            out[j] = u * xp;
            xp *= z[1];
        }
        return out;
    };
    m.G = [d_g](const Vector& z, const Vector& beta) {
        Vector gu(3);
        gu << -1.0, -z[1], ihs_a_dtheta(beta[2], z[0]);
        Matrix out(d_g, 3);
        double xp = 1.0;
        for (int j = 0; j < d_g; ++j) {
            out.row(j) = xp * gu.transpose();
            xp *= z[1];
        }
        return out;
    };
    m.g_all = [d_g](const Dataset& data, const Vector& beta) {
        const Eigen::Index n = data.rows();
        Matrix out(n, d_g);
        Vector u(n);
        for (Eigen::Index i = 0; i < n; ++i)
            u[i] = ihs_a(beta[2], data(i, 0)) - beta[0] - beta[1] * data(i, 1);
        out.col(0) = u;
        for (int j = 1; j < d_g; ++j)
            out.col(j) = out.col(j - 1).cwiseProduct(data.col(1));
        return out;
    };
    m.hess_g = [](const Vector& z, const Vector& beta, int j) {
        Matrix h = Matrix::Zero(3, 3);
        h(2, 2) = ihs_a_dtheta2(beta[2], z[0]) * std::pow(z[1], j);
        return h;
    };
    m.init = [d_g](const Dataset& data) { return ihs_gmm_start(data, d_g); };
    m.canonicalize = [](const Vector& beta) {
        Vector out = beta;
        out[2] = std::abs(out[2]);  // the residual is even in theta
        return out;
    };
    return m;
}

// ---------------------------------------------------------------------------
// Scenario configuration and sampling
// ---------------------------------------------------------------------------

ScenarioConfig ScenarioConfig::defaults(int scenario) {
    ScenarioConfig cfg;
    cfg.scenario = scenario;
    cfg.beta0 = Vector(3);
    cfg.beta0 << 1.0, 2.0, 0.08;
    if (scenario == 2) {
        cfg.mixture = {{0.2, -0.75, 1.0}, {0.2, -0.25, 2.0 / 3.0}, {0.6, 1.0 / 3.0, 5.0 / 9.0}};
    } else if (scenario == 3) {
        cfg.mixture = {{0.75, -1.0 / 3.0, 1.0}, {0.25, 1.0, 1.0 / 3.0}};
    }
    return cfg;
}

void ScenarioConfig::validate() const {
    std::vector<std::string> bad;
    if (scenario < 1 || scenario > 3) bad.push_back("scenario (must be 1, 2 or 3)");
    if (d_g < 3 || d_g > 5) bad.push_back("d_g (must be 3, 4 or 5)");
    if (n <= d_g + 1) bad.push_back("n (must exceed d_g + 1)");
    if (replications < 1) bad.push_back("replications (must be >= 1)");
    if (beta0.size() != 3) bad.push_back("beta0 (needs 3 components)");
    if (kernel_r != 1 && kernel_r != 2) bad.push_back("kernel_r (must be 1 or 2)");
    if (grid.points < 2) bad.push_back("grid.points (must be >= 2)");
    if (!(grid.lo < grid.hi)) bad.push_back("grid range (lo must be < hi)");
    if (threads < 0) bad.push_back("threads (must be >= 0)");
    if (scenario != 1) {
        if (!(nu > 4.0)) bad.push_back("nu (must exceed 4)");
        if (mixture.empty()) bad.push_back("mixture (must be nonempty for scenarios 2-3)");
        double wsum = 0.0, wmean = 0.0;
        for (const auto& c : mixture) {
            wsum += c.weight;
            wmean += c.weight * c.mean;
            if (!(c.sd > 0.0)) bad.push_back("mixture sd (must be positive)");
            if (!(c.weight > 0.0)) bad.push_back("mixture weight (must be positive)");
        }
        if (!mixture.empty() && std::abs(wsum - 1.0) > 1e-10)
            bad.push_back("mixture weights (must sum to 1)");
        if (!mixture.empty() && std::abs(wmean) > 1e-12)
            bad.push_back("mixture means (must satisfy sum w_j mu_j = 0)");
    }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg << "invalid scenario config:";
        for (const auto& b : bad) msg << " " << b << ";";
        throw input_error(msg.str());
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

std::mt19937_64 replication_rng(std::uint64_t master_seed, int rep_index) {
    const std::uint64_t s =
        splitmix64(master_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(rep_index));
    return std::mt19937_64(s);
}

Sample sample_scenario(const ScenarioConfig& cfg, int rep_index) {
    std::mt19937_64 rng = replication_rng(cfg.master_seed, rep_index);
    const Eigen::Index n = cfg.n;
    Sample s;
    s.x.resize(n);
    s.u.resize(n);
    s.y.resize(n);

    if (cfg.scenario == 1) {
        std::normal_distribution<double> nx;
        for (Eigen::Index i = 0; i < n; ++i) s.x[i] = nx(rng);
        std::normal_distribution<double> nu_;
        for (Eigen::Index i = 0; i < n; ++i) s.u[i] = nu_(rng);
    } else {
        const double ascale = std::sqrt(2.0 / cfg.nu);
        std::gamma_distribution<double> gam(cfg.nu / 2.0, 1.0);
        for (Eigen::Index i = 0; i < n; ++i) s.x[i] = ascale * std::sqrt(gam(rng));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> nrm;
        for (Eigen::Index i = 0; i < n; ++i) {
            double pick = u01(rng);
            double w = 0.0;
            for (const auto& c : cfg.mixture) {
                pick -= c.weight;
                if (pick <= 0.0 || &c == &cfg.mixture.back()) {
                    w = c.mean + c.sd * nrm(rng);
                    break;
                }
            }
            s.u[i] = w / s.x[i];
        }
    }
    const double delta = cfg.beta0[0], gamma = cfg.beta0[1], theta = cfg.beta0[2];
    for (Eigen::Index i = 0; i < n; ++i)
        s.y[i] = ihs(theta, delta + gamma * s.x[i] + s.u[i]);
    return s;
}

// ---------------------------------------------------------------------------
// True marginal law of u
// ---------------------------------------------------------------------------

namespace {

// Quadrature machinery for the scenario 2-3 marginal: u = w/x with w a normal
// mixture and x generalised gamma (p=2, d=nu, a=sqrt(2/nu)), so
// f_u(u) = int_0^inf x f_w(u x) f_x(x) dx.
struct UMarginal {
    explicit UMarginal(const ScenarioConfig& cfg)
        : mixture(cfg.mixture), nu(cfg.nu), ascale(std::sqrt(2.0 / cfg.nu)) {
        log_coef = std::log(2.0) - nu * std::log(ascale) - std::lgamma(nu / 2.0);
        // Upper integration limit: generalised-gamma tail mass below 1e-12.
        const double gmax = boost::math::gamma_q_inv(nu / 2.0, 1e-12);
        x_max = ascale * std::sqrt(gmax);
    }

    double f_w(double t) const {
        double acc = 0.0;
        for (const auto& c : mixture) acc += c.weight * norm_pdf((t - c.mean) / c.sd) / c.sd;
        return acc;
    }
    double F_w(double t) const {
        double acc = 0.0;
        for (const auto& c : mixture) acc += c.weight * norm_cdf((t - c.mean) / c.sd);
        return acc;
    }
    double f_x(double x) const {
        if (x <= 0.0) return 0.0;
        const double z = x / ascale;
        return std::exp(log_coef + (nu - 1.0) * std::log(x) - z * z);
    }
    double pdf(double u) const {
        return adaptive_simpson([&](double x) { return x * f_w(u * x) * f_x(x); }, 0.0, x_max,
                                1e-11);
    }
    double cdf(double u) const {
        return adaptive_simpson([&](double x) { return F_w(u * x) * f_x(x); }, 0.0, x_max,
                                1e-11);
    }
    // Density from a fixed quadrature rule: the approximation error is then a
    // smooth function of u, which keeps finite differences of the evaluated
    // curve meaningful (an adaptive rule's subdivision pattern jumps with u
    // and the jumps get amplified by h^-4 in high-order stencils).
    void prepare_fixed_rule() {
        QuadratureRule gl = gauss_legendre(400, 0.0, x_max);
        fixed_nodes = gl.nodes;
        fixed_weights = gl.weights;
        for (Eigen::Index i = 0; i < fixed_nodes.size(); ++i)
            fixed_weights[i] *= fixed_nodes[i] * f_x(fixed_nodes[i]);
    }
    double pdf_fixed(double u) const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < fixed_nodes.size(); ++i)
            acc += fixed_weights[i] * f_w(u * fixed_nodes[i]);
        return acc;
    }

    std::vector<MixtureComponent> mixture;
    double nu, ascale, log_coef = 0.0, x_max = 0.0;
    Vector fixed_nodes, fixed_weights;
};

}  // namespace

Vector true_density(const ScenarioConfig& cfg, const Vector& grid) {
    Vector out(grid.size());
    if (cfg.scenario == 1) {
        for (Eigen::Index j = 0; j < grid.size(); ++j) out[j] = norm_pdf(grid[j]);
        return out;
    }
    UMarginal m(cfg);
    for (Eigen::Index j = 0; j < grid.size(); ++j) out[j] = m.pdf(grid[j]);
    return out;
}

Vector true_cdf(const ScenarioConfig& cfg, const Vector& grid) {
    Vector out(grid.size());
    if (cfg.scenario == 1) {
        for (Eigen::Index j = 0; j < grid.size(); ++j) out[j] = norm_cdf(grid[j]);
        return out;
    }
    UMarginal m(cfg);
    for (Eigen::Index j = 0; j < grid.size(); ++j) out[j] = m.cdf(grid[j]);
    return out;
}

double sigma_u(const ScenarioConfig& cfg) {
    if (cfg.scenario == 1) return 1.0;
    double ew2 = 0.0;
    for (const auto& c : cfg.mixture) ew2 += c.weight * (c.mean * c.mean + c.sd * c.sd);
    // E[x^-2] of the generalised gamma equals nu/(nu-2).
    return std::sqrt(ew2 * cfg.nu / (cfg.nu - 2.0));
}

double marginal_roughness(const ScenarioConfig& cfg, int derivative) {
    if (derivative < 1 || derivative > 4)
        throw input_error("marginal roughness supports derivative orders 1-4, got " +
                          std::to_string(derivative));
    if (cfg.scenario == 1) {
        // R(phi^{(j)}) = (2j)! / (2^{2j+1} j! sqrt(pi)).
        double fact2j = 1.0, factj = 1.0;
        for (int i = 2; i <= 2 * derivative; ++i) fact2j *= i;
        for (int i = 2; i <= derivative; ++i) factj *= i;
        return fact2j /
               (std::pow(2.0, 2.0 * derivative + 1.0) * factj * std::sqrt(std::numbers::pi));
    }

    // Quadrature density on a fine grid, then high-order finite differences.
    const double h = 1.0 / 128.0;
    const double lo = -12.0, hi = 12.0;
    const int m = static_cast<int>(std::lround((hi - lo) / h)) + 1;
    UMarginal marg(cfg);
    marg.prepare_fixed_rule();
    Vector f(m);
    for (int i = 0; i < m; ++i) f[i] = marg.pdf_fixed(lo + h * i);

    // O(h^4) central stencils.
    static const double s1[5] = {1.0 / 12, -2.0 / 3, 0.0, 2.0 / 3, -1.0 / 12};
    static const double s2[5] = {-1.0 / 12, 4.0 / 3, -5.0 / 2, 4.0 / 3, -1.0 / 12};
    static const double s3[7] = {1.0 / 8, -1.0, 13.0 / 8, 0.0, -13.0 / 8, 1.0, -1.0 / 8};
    static const double s4[7] = {-1.0 / 6, 2.0, -13.0 / 2, 28.0 / 3, -13.0 / 2, 2.0, -1.0 / 6};

    const int half = derivative <= 2 ? 2 : 3;
    const double* sten = derivative == 1 ? s1 : derivative == 2 ? s2 : derivative == 3 ? s3 : s4;
    const int width = 2 * half + 1;
    const double hpow = std::pow(h, derivative);

    const int trim = 3;
    std::vector<double> dsq;
    dsq.reserve(m);
    for (int i = trim + half; i < m - trim - half; ++i) {
        double acc = 0.0;
        for (int k = 0; k < width; ++k) acc += sten[k] * f[i - half + k];
        const double d = acc / hpow;
        dsq.push_back(d * d);
    }
    double integral = 0.0;
    for (size_t i = 1; i < dsq.size(); ++i) integral += 0.5 * h * (dsq[i - 1] + dsq[i]);
    return integral;
}

double standardized_roughness_constant(const ScenarioConfig& cfg, int derivative) {
    const double raw = marginal_roughness(cfg, derivative);
    return std::pow(raw, -1.0 / (2.0 * derivative + 1.0)) / sigma_u(cfg);
}

// ---------------------------------------------------------------------------
// Scenario-1 analytic predictions
// ---------------------------------------------------------------------------

namespace {

// Conditional mean curve tau_{0|u}(u) = E[du/dtheta | u] at the calibration
// point.  Closed form uses the probit-style smoothing of tanh over the x
// average; the exact variant integrates over x by Gauss-Hermite.
struct ConditionalCurve {
    IvarCalibration cal;
    QuadratureRule gh = gauss_hermite_normal(96);

    double operator()(double u) const {
        const double th = cal.theta;
        if (cal.closed_form_conditional) {
            const double scale =
                std::sqrt(1.0 + std::numbers::pi * th * th * cal.gamma * cal.gamma / 2.0);
            return std::tanh(th * (u + cal.delta) / scale) / (th * th) - (cal.delta + u) / th;
        }
        double acc = 0.0;
        for (Eigen::Index k = 0; k < gh.nodes.size(); ++k)
            acc += gh.weights[k] * std::tanh(th * (cal.delta + cal.gamma * gh.nodes[k] + u));
        return acc / (th * th) - (cal.delta + u) / th;
    }
};

double normal_moment(int k) {
    if (k % 2 == 1) return 0.0;
    double acc = 1.0;
    for (int i = k - 1; i >= 2; i -= 2) acc *= i;  // (k-1)!!
    return acc;
}

}  // namespace

double scenario1_tau_D_tau(int d_g, const IvarCalibration& cal) {
    if (d_g < 3) throw input_error("tau'Dtau needs d_g >= 3");
    QuadratureRule gh = gauss_hermite_normal(96);

    // tau_j = E[x^j s3(x)] with s3(x) = E_u[tanh(theta t)]/theta^2 - (delta+gamma x)/theta.
    Vector tau = Vector::Zero(d_g);
    const double th = cal.theta;
    for (Eigen::Index ix = 0; ix < gh.nodes.size(); ++ix) {
        const double x = gh.nodes[ix];
        double inner = 0.0;
        for (Eigen::Index iu = 0; iu < gh.nodes.size(); ++iu)
            inner += gh.weights[iu] * std::tanh(th * (cal.delta + cal.gamma * x + gh.nodes[iu]));
        const double s3 = inner / (th * th) - (cal.delta + cal.gamma * x) / th;
        double xp = 1.0;
        for (int j = 0; j < d_g; ++j) {
            tau[j] += gh.weights[ix] * xp * s3;
            xp *= x;
        }
    }

    Matrix M(d_g, d_g);
    for (int i = 0; i < d_g; ++i)
        for (int j = 0; j < d_g; ++j) M(i, j) = normal_moment(i + j);
    Matrix D = M.ldlt().solve(Matrix::Identity(d_g, d_g));
    D(0, 0) -= 1.0;
    D(1, 1) -= 1.0;
    return tau.dot(D * tau);
}

double scenario1_relative_ivar_prediction(long n, int d_g, const KernelSpec& kernel,
                                          const IvarCalibration& cal) {
    ScenarioConfig s1 = ScenarioConfig::defaults(1);
    const double rough = marginal_roughness(s1, 2 * kernel.r());
    const double b = amise_bandwidth_pdf(kernel, rough, n);

    const double sqrt_pi = std::sqrt(std::numbers::pi);
    const double first = 1.0 - b / (4.0 * sqrt_pi * kernel.roughness);

    ConditionalCurve curve{cal};
    QuadratureRule gh = gauss_hermite_normal(96);
    double tau0 = 0.0;
    for (Eigen::Index k = 0; k < gh.nodes.size(); ++k)
        tau0 += gh.weights[k] * curve(gh.nodes[k]);

    auto psi = [&](double u) { return (curve(u) - tau0) * norm_pdf(u); };
    const double hfd = 1e-4;
    auto dpsi_sq = [&](double u) {
        const double d = (psi(u + hfd) - psi(u - hfd)) / (2.0 * hfd);
        return d * d;
    };
    const double i_d = adaptive_simpson(dpsi_sq, -12.0, 12.0, 1e-10);

    const double tdt = scenario1_tau_D_tau(d_g, cal);
    return first + b * i_d / (tdt * kernel.roughness);
}

// ---------------------------------------------------------------------------
// Paired t-test
// ---------------------------------------------------------------------------

PairedTResult paired_ise_ttest(const std::vector<double>& ise_a,
                               const std::vector<double>& ise_b) {
    if (ise_a.size() != ise_b.size())
        throw input_error("paired t-test needs equal-length sequences");
    const size_t r = ise_a.size();
    if (r < 2) throw input_error("paired t-test needs at least 2 replications");

    double mean = 0.0;
    for (size_t i = 0; i < r; ++i) mean += ise_a[i] - ise_b[i];
    mean /= static_cast<double>(r);
    double ss = 0.0;
    for (size_t i = 0; i < r; ++i) {
        const double d = ise_a[i] - ise_b[i] - mean;
        ss += d * d;
    }
    const double var = ss / static_cast<double>(r - 1);

    PairedTResult out;
    if (var <= 0.0) {
        out.degenerate = true;
        out.t = 0.0;
        out.p = 1.0;
        return out;
    }
    out.t = mean / std::sqrt(var / static_cast<double>(r));
    out.p = 2.0 * student_t_sf(std::abs(out.t), static_cast<double>(r - 1));
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

namespace {

constexpr int kNumEstimators = 8;
const char* kEstimatorNames[kNumEstimators] = {"f_tilde", "f_tilde_rho", "f_hat", "f_hat_rho",
                                               "F_tilde", "F_tilde_rho", "F_hat", "F_hat_rho"};

struct RepOutcome {
    bool ok = false;
    double overid = 0.0;
    std::array<Vector, kNumEstimators> curves;
    std::array<double, kNumEstimators> ise{};
};

RepOutcome run_replication(const ScenarioConfig& cfg, const MomentModel& model,
                           const KernelSpec& kernel, const Vector& grid, double b_pdf,
                           double b_cdf, const Vector& truth_pdf, const Vector& truth_cdf,
                           int rep) {
    RepOutcome out;
    try {
        Sample s = sample_scenario(cfg, rep);
        const Eigen::Index n = cfg.n;
        Dataset data(n, 2);
        data.col(0) = s.y;
        data.col(1) = s.x;

        // Infeasible weights: multiplier solved at the true parameter.
        Matrix g0 = moment_matrix(model, data, cfg.beta0);
        InnerSolution inner0 = solve_lambda_status(g0, cfg.family, 1e-9, 200, nullptr);
        if (!inner0.converged) return out;
        Vector pi0 = shrink_probabilities(implied_probabilities(inner0.lambda, g0, cfg.family));

        // Feasible fit.
        GelSolution fit = gel_fit(model, data, cfg.family, GelOptions{});
        out.overid = 2.0 * static_cast<double>(n) * fit.criterion;

        if (cfg.estimate_curves) {
            Vector u_hat(n);
            for (Eigen::Index i = 0; i < n; ++i)
                u_hat[i] = model.u(data.row(i).transpose(), fit.beta_hat);
            Vector pi_hat = shrink_probabilities(fit.pi);
            Vector unif = Vector::Constant(n, 1.0 / static_cast<double>(n));

            const WeightedSample samples[4] = {
                {s.u, unif}, {s.u, pi0}, {u_hat, unif}, {u_hat, pi_hat}};
            for (int e = 0; e < 4; ++e) {
                out.curves[e] = weighted_kde(samples[e], kernel, b_pdf, grid).values;
                out.curves[e + 4] = weighted_kcdf(samples[e], kernel, b_cdf, grid).values;
            }
            for (int e = 0; e < kNumEstimators; ++e) {
                const Vector& truth = e < 4 ? truth_pdf : truth_cdf;
                Vector sq = (out.curves[e] - truth).array().square();
                out.ise[e] = trapezoid(grid, sq);
            }
        }
        out.ok = true;
    } catch (const std::exception&) {
        out.ok = false;
    }
    return out;
}

}  // namespace

McReport run_mc(const ScenarioConfig& cfg) {
    cfg.validate();
    const KernelSpec kernel = gaussian_kernel(cfg.kernel_r);
    const Vector grid = cfg.grid.make();
    const MomentModel model = residual_map(cfg.d_g);

    McReport rep;
    rep.scenario = cfg.scenario;
    rep.n = cfg.n;
    rep.d_g = cfg.d_g;
    rep.family = cfg.family.name();
    rep.master_seed = cfg.master_seed;
    rep.replications_requested = cfg.replications;
    rep.grid = grid;
    rep.truth_pdf = true_density(cfg, grid);
    rep.truth_cdf = true_cdf(cfg, grid);

    {
        ScenarioConfig endpoints = cfg;
        Vector edge(2);
        edge << grid[0], grid[grid.size() - 1];
        Vector fedge = true_cdf(endpoints, edge);
        rep.truncated_mass = fedge[0] + (1.0 - fedge[1]);
    }

    const int r2 = 2 * kernel.r();
    rep.b_pdf = amise_bandwidth_pdf(kernel, marginal_roughness(cfg, r2), cfg.n);
    rep.b_cdf = amise_bandwidth_cdf(kernel, marginal_roughness(cfg, r2 - 1), cfg.n);

    rep.overid_dof = cfg.d_g - 3;
    rep.overid_critical = rep.overid_dof > 0 ? chi2_quantile(0.95, rep.overid_dof) : 0.0;

    const int total = cfg.replications;
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    const int workers = std::max(1, std::min(cfg.threads > 0 ? cfg.threads : hw, total));

    // Workers fill a reorder buffer; the reduction consumes replications in
    // index order, so results are bit-identical for every worker count.
    std::map<int, RepOutcome> buffer;
    std::mutex mtx;
    std::condition_variable cv;
    std::atomic<int> next_rep{0};

    auto work = [&]() {
        while (true) {
            const int k = next_rep.fetch_add(1);
            if (k >= total) break;
            RepOutcome out = run_replication(cfg, model, kernel, grid, rep.b_pdf, rep.b_cdf,
                                             rep.truth_pdf, rep.truth_cdf, k);
            {
                std::lock_guard<std::mutex> lock(mtx);
                buffer.emplace(k, std::move(out));
            }
            cv.notify_one();
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);

    // Ordered reduction: Welford mean/M2 per estimator per grid point.
    const Eigen::Index m = grid.size();
    std::array<Vector, kNumEstimators> mean, m2;
    for (int e = 0; e < kNumEstimators; ++e) {
        mean[e] = Vector::Zero(m);
        m2[e] = Vector::Zero(m);
    }
    std::array<std::vector<double>, kNumEstimators> ise;
    std::vector<double> overid_stats;
    int used = 0, failures = 0;

    for (int k = 0; k < total; ++k) {
        RepOutcome out;
        {
            std::unique_lock<std::mutex> lock(mtx);
            cv.wait(lock, [&] { return buffer.count(k) > 0; });
            out = std::move(buffer.at(k));
            buffer.erase(k);
        }
        if (!out.ok) {
            ++failures;
            continue;
        }
        ++used;
        overid_stats.push_back(out.overid);
        if (cfg.estimate_curves) {
            for (int e = 0; e < kNumEstimators; ++e) {
                Vector delta = out.curves[e] - mean[e];
                mean[e] += delta / static_cast<double>(used);
                m2[e] += delta.cwiseProduct(out.curves[e] - mean[e]);
                ise[e].push_back(out.ise[e]);
            }
        }
    }
    for (auto& t : pool) t.join();

    rep.replications_used = used;
    rep.failures = failures;
    rep.valid = failures <= 0.05 * total && used > 0;

    if (used > 0) {
        double macc = 0.0;
        int nrej = 0;
        for (double s : overid_stats) {
            macc += s;
            if (rep.overid_dof > 0 && s > rep.overid_critical) ++nrej;
        }
        rep.overid_mean_stat = macc / static_cast<double>(used);
        rep.overid_rejection_rate =
            rep.overid_dof > 0 ? static_cast<double>(nrej) / static_cast<double>(used) : 0.0;
    }

    if (!cfg.estimate_curves || used == 0) return rep;

    rep.estimators.resize(kNumEstimators);
    rep.mean_curves.resize(kNumEstimators);
    rep.var_curves.resize(kNumEstimators);
    for (int e = 0; e < kNumEstimators; ++e) {
        EstimatorStats& es = rep.estimators[e];
        es.name = kEstimatorNames[e];
        const Vector& truth = e < 4 ? rep.truth_pdf : rep.truth_cdf;
        rep.mean_curves[e] = mean[e];
        rep.var_curves[e] = m2[e] / static_cast<double>(used);
        Vector bias_sq = (mean[e] - truth).array().square();
        es.isb = trapezoid(grid, bias_sq);
        es.ivar = trapezoid(grid, rep.var_curves[e]);
        es.mise = es.isb + es.ivar;
    }
    for (int e = 0; e < kNumEstimators; ++e) {
        EstimatorStats& es = rep.estimators[e];
        const EstimatorStats& base = rep.estimators[e < 4 ? 0 : 4];
        es.ratio_isb = base.isb > 0.0 ? es.isb / base.isb : 1.0;
        es.ratio_ivar = base.ivar > 0.0 ? es.ivar / base.ivar : 1.0;
        es.ratio_mise = base.mise > 0.0 ? es.mise / base.mise : 1.0;
        if (used >= 2) {
            PairedTResult t = paired_ise_ttest(ise[e], ise[e < 4 ? 0 : 4]);
            es.t_stat = t.t;
            es.p_value = t.p;
            es.degenerate = t.degenerate;
        } else {
            es.degenerate = true;
        }
        es.p_category = es.degenerate || es.p_value >= 0.05 ? "ns"
                        : es.p_value < 0.01               ? "<0.01"
                                                          : "0.01-0.05";
    }
    return rep;
}

}  // namespace gelk
