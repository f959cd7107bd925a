#include "gelk/gel_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "gelk/errors.hpp"

namespace gelk {

namespace {

constexpr double kFeasibilityMargin = 1e-10;

// Evaluate P_n(beta, lambda) = n^-1 sum_i [rho(v_i) - rho(0)] along with its
// gradient and Hessian in lambda.  Returns false (without touching the
// outputs beyond `value`) when any v_i leaves the domain of rho.  When
// `abs_scale` is given it receives n^-1 sum_i |rho(v_i) - rho(0)|, the scale
// that bounds the round-off noise of the objective evaluation itself.
bool inner_objective(const Matrix& gmat, const CarrierFamily& family, const Vector& lambda,
                     double* value, Vector* grad, Matrix* hess, double* abs_scale = nullptr) {
    const Eigen::Index n = gmat.rows();
    const Eigen::Index d = gmat.cols();
    Vector v = gmat * lambda;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!family.in_domain(v[i]) || family.boundary_gap(v[i]) < kFeasibilityMargin) {
            if (value != nullptr) *value = -std::numeric_limits<double>::infinity();
            return false;
        }
    }
    double sum = 0.0;
    double sum_abs = 0.0;
    if (grad != nullptr) grad->setZero(d);
    if (hess != nullptr) hess->setZero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r0 = carrier_derivative(family, v[i], 0);
        sum += r0;
        sum_abs += std::abs(r0);
        if (grad != nullptr || hess != nullptr) {
            const Vector gi = gmat.row(i).transpose();
            if (grad != nullptr) *grad += carrier_derivative(family, v[i], 1) * gi;
            if (hess != nullptr) *hess += carrier_derivative(family, v[i], 2) * (gi * gi.transpose());
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    if (value != nullptr) *value = sum * inv_n;
    if (grad != nullptr) *grad *= inv_n;
    if (hess != nullptr) *hess *= inv_n;
    if (abs_scale != nullptr) *abs_scale = sum_abs * inv_n;
    return true;
}

}  // namespace

Matrix moment_matrix(const MomentModel& model, const Dataset& data, const Vector& beta) {
    if (model.g_all) return model.g_all(data, beta);
    const Eigen::Index n = data.rows();
    Matrix out(n, model.d_g);
    for (Eigen::Index i = 0; i < n; ++i)
        out.row(i) = model.g(data.row(i).transpose(), beta).transpose();
    return out;
}

InnerSolution solve_lambda_status(const Matrix& gmat, const CarrierFamily& family, double tol,
                                  int max_iter, const Vector* warm) {
    const Eigen::Index d = gmat.cols();
    InnerSolution sol;
    sol.lambda = Vector::Zero(d);

    double value = 0.0;
    if (warm != nullptr && warm->size() == d) {
        double warm_value;
        if (inner_objective(gmat, family, *warm, &warm_value, nullptr, nullptr) &&
            warm_value >= 0.0) {
            // Only adopt a warm start that is feasible and at least as good as
            // the always-feasible origin.
            sol.lambda = *warm;
            value = warm_value;
        }
    }

    Vector grad(d);
    Matrix hess(d, d);
    for (int it = 0; it < max_iter; ++it) {
        if (!inner_objective(gmat, family, sol.lambda, &value, &grad, &hess)) {
            // Only reachable if a warm start slipped out of domain; restart.
            sol.lambda.setZero();
            inner_objective(gmat, family, sol.lambda, &value, &grad, &hess);
        }
        sol.residual_norm = grad.norm();
        if (sol.residual_norm <= tol) {
            sol.converged = true;
            break;
        }
        sol.iterations = it + 1;

        // Newton direction: hess is negative definite wherever rho'' < 0, so
        // solve -hess * step = grad for an ascent direction.  Ill-conditioned
        // moment matrices can leave -hess numerically indefinite; an escalating
        // ridge keeps a Newton-quality direction instead of falling back to raw
        // gradient ascent, whose iteration count scales with the condition
        // number.
        Vector step = grad;
        {
            const double scale = std::max(hess.cwiseAbs().maxCoeff(), 1e-300);
            double ridge = 0.0;
            for (int attempt = 0; attempt < 8; ++attempt) {
                Matrix shifted = -hess;
                if (ridge > 0.0) shifted.diagonal().array() += ridge;
                Eigen::LDLT<Matrix> ldlt(shifted);
                if (ldlt.info() == Eigen::Success) {
                    Vector cand = ldlt.solve(grad);
                    if (cand.allFinite() && cand.dot(grad) > 0.0) {
                        step = std::move(cand);
                        break;
                    }
                }
                ridge = ridge == 0.0 ? 1e-12 * scale : 100.0 * ridge;
            }
        }

        // Fraction-to-boundary cap: boundary_gap is linear along the ray
        // v + t*dv, so the largest feasible step solves gap_i(t) = margin per
        // observation.  Starting the backtracking just inside that cap keeps
        // the iterates from crawling against the domain boundary.
        if (std::isfinite(family.boundary_gap(0.0))) {
            const Vector v = gmat * sol.lambda;
            const Vector dv = gmat * step;
            double t_cap = std::numeric_limits<double>::infinity();
            for (Eigen::Index i = 0; i < gmat.rows(); ++i) {
                const double gap0 = family.boundary_gap(v[i]);
                const double dgap = family.boundary_gap(v[i] + dv[i]) - gap0;
                if (dgap < 0.0)
                    t_cap = std::min(t_cap, (gap0 - kFeasibilityMargin) / (-dgap));
            }
            if (t_cap < 1e-14) t_cap = 1e-14;
            if (std::isfinite(t_cap)) step *= std::min(1.0, 0.995 * t_cap);
        }

        // Backtrack until feasible and strictly ascending (Armijo).  The strict
        // inequality matters: near the optimum the attainable gain can drop
        // below the objective's round-off, and accepting equal-valued steps
        // would let the iteration orbit the optimum forever instead of
        // reporting the stall below.
        const double slope = grad.dot(step);
        double t = 1.0;
        bool moved = false;
        for (int bt = 0; bt < 60; ++bt) {
            Vector cand = sol.lambda + t * step;
            double cand_value;
            if (inner_objective(gmat, family, cand, &cand_value, nullptr, nullptr) &&
                cand_value >= value + 1e-4 * t * slope && cand_value > value) {
                sol.lambda = std::move(cand);
                value = cand_value;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if (!moved) break;  // no representable improvement from here
    }

    // Stagnation exit: the line search or the iteration budget ran out with the
    // first-order residual still above `tol`.  Whether that is a failure
    // depends on scale: once the achievable objective gain (about
    // ||grad||^2 / (2 sigma_max)) falls below the round-off noise of evaluating
    // the objective, no method computing in double precision can distinguish
    // nearby multipliers, so the iterate *is* the numerical optimum.  Accept it
    // in that case; anything coarser (e.g. a genuine stall against the domain
    // boundary) keeps converged = false.
    if (!sol.converged) {
        double term_scale = 0.0;
        if (inner_objective(gmat, family, sol.lambda, &value, &grad, &hess, &term_scale)) {
            sol.residual_norm = grad.norm();
            const double eps = std::numeric_limits<double>::epsilon();
            const double curv = std::max(hess.cwiseAbs().maxCoeff(), eps);
            const double noise = 64.0 * eps * term_scale;
            if (sol.residual_norm <= tol ||
                sol.residual_norm * sol.residual_norm <= 2.0 * curv * noise) {
                sol.converged = true;
            }
        }
    }
    sol.criterion = value;
    return sol;
}

InnerSolution solve_lambda(const Matrix& gmat, const CarrierFamily& family, double tol,
                           int max_iter) {
    Eigen::JacobiSVD<Matrix> svd(gmat);
    const auto& sv = svd.singularValues();
    if (gmat.rows() < gmat.cols() || sv.size() == 0 || sv(0) <= 0.0 ||
        sv(sv.size() - 1) < 1e-12 * sv(0)) {
        std::ostringstream msg;
        msg << "moment matrix is numerically rank deficient (singular values ";
        msg << (sv.size() > 0 ? sv(sv.size() - 1) : 0.0) << " .. " << (sv.size() > 0 ? sv(0) : 0.0)
            << ", " << gmat.rows() << " rows, " << gmat.cols() << " columns)";
        throw singular_moment_error(msg.str());
    }
    InnerSolution sol = solve_lambda_status(gmat, family, tol, max_iter, nullptr);
    if (!sol.converged) {
        std::ostringstream msg;
        msg << "inner multiplier solve for " << family.name() << " stopped after "
            << sol.iterations << " iterations with first-order residual " << sol.residual_norm;
        throw convergence_error(msg.str(), sol.lambda, sol.residual_norm);
    }
    return sol;
}

Vector implied_probabilities(const Vector& lambda, const Matrix& gmat,
                             const CarrierFamily& family) {
    const Eigen::Index n = gmat.rows();
    Vector v = gmat * lambda;
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = carrier_derivative(family, v[i], 1);
    const double total = w.sum();
    if (total == 0.0 || !std::isfinite(total))
        throw domain_violation("implied probabilities undefined: sum of rho'(lambda'g_i) is " +
                               std::to_string(total));
    return w / total;
}

Vector shrink_probabilities(const Vector& pi) {
    const double lo = pi.minCoeff();
    const double eps = -std::min(lo, 0.0);
    if (eps == 0.0) return pi;
    const double n = static_cast<double>(pi.size());
    return (pi.array() + eps) / (1.0 + n * eps);
}

namespace {

// Profile criterion Q(beta) = sup_lambda P_n(beta, lambda), +inf when the
// inner solve fails.  Tracks the warm-start multiplier across calls.
class ProfileObjective {
public:
    ProfileObjective(const MomentModel& model, const Dataset& data, const CarrierFamily& family,
                     const GelOptions& options)
        : model_(model), data_(data), family_(family), options_(options) {}

    double operator()(const Vector& beta) {
        Matrix gmat = moment_matrix(model_, data_, beta);
        if (!gmat.allFinite()) return std::numeric_limits<double>::infinity();
        InnerSolution inner = solve_lambda_status(gmat, family_, options_.inner_tol,
                                                  options_.inner_max_iter, &warm_);
        max_inner_iterations = std::max(max_inner_iterations, inner.iterations);
        if (!inner.converged) return std::numeric_limits<double>::infinity();
        warm_ = inner.lambda;
        return inner.criterion;
    }

    int max_inner_iterations = 0;

private:
    const MomentModel& model_;
    const Dataset& data_;
    const CarrierFamily& family_;
    const GelOptions& options_;
    Vector warm_;
};

// Central-difference gradient with one-sided fallback when a shifted point is
// infeasible.  Positions where no finite difference exists come back zero.
Vector fd_gradient(ProfileObjective& f, const Vector& beta, double f0) {
    const Eigen::Index p = beta.size();
    Vector grad = Vector::Zero(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(beta[j]));
        Vector bp = beta, bm = beta;
        bp[j] += h;
        bm[j] -= h;
        const double fp = f(bp);
        const double fm = f(bm);
        if (std::isfinite(fp) && std::isfinite(fm)) {
            grad[j] = (fp - fm) / (2.0 * h);
        } else if (std::isfinite(fp)) {
            grad[j] = (fp - f0) / h;
        } else if (std::isfinite(fm)) {
            grad[j] = (f0 - fm) / h;
        }
    }
    return grad;
}

struct NelderMeadResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
};

NelderMeadResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& x0,
                             double scale, double tol, int max_iter) {
    const Eigen::Index p = x0.size();
    const Eigen::Index m = p + 1;
    std::vector<Vector> xs(m, x0);
    std::vector<double> fs(m);
    for (Eigen::Index j = 0; j < p; ++j)
        xs[j + 1][j] += scale * std::max(1.0, std::abs(x0[j]));
    for (Eigen::Index i = 0; i < m; ++i) fs[i] = f(xs[i]);

    std::vector<Eigen::Index> order(m);
    NelderMeadResult out;
    int it = 0;
    for (; it < max_iter; ++it) {
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::sort(order.begin(), order.end(),
                  [&](Eigen::Index a, Eigen::Index b) { return fs[a] < fs[b]; });
        const Eigen::Index best = order[0], worst = order[m - 1], second = order[m - 2];
        if (std::isfinite(fs[worst]) && fs[worst] - fs[best] <= tol &&
            (xs[worst] - xs[best]).norm() <= tol * std::max(1.0, xs[best].norm()))
            break;

        Vector centroid = Vector::Zero(p);
        for (Eigen::Index i = 0; i < m; ++i)
            if (i != worst) centroid += xs[i];
        centroid /= static_cast<double>(p);

        Vector xr = centroid + (centroid - xs[worst]);
        double fr = f(xr);
        if (fr < fs[best]) {
            Vector xe = centroid + 2.0 * (centroid - xs[worst]);
            double fe = f(xe);
            if (fe < fr) {
                xs[worst] = std::move(xe);
                fs[worst] = fe;
            } else {
                xs[worst] = std::move(xr);
                fs[worst] = fr;
            }
        } else if (fr < fs[second]) {
            xs[worst] = std::move(xr);
            fs[worst] = fr;
        } else {
            const bool outside = fr < fs[worst];
            Vector xc = outside ? centroid + 0.5 * (xr - centroid)
                                : centroid + 0.5 * (xs[worst] - centroid);
            double fc = f(xc);
            if (fc < std::min(fr, fs[worst])) {
                xs[worst] = std::move(xc);
                fs[worst] = fc;
            } else {
                for (Eigen::Index i = 0; i < m; ++i) {
                    if (i == best) continue;
                    xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < m; ++i)
        if (fs[i] < fs[best]) best = i;
    out.x = xs[best];
    out.value = fs[best];
    out.iterations = it;
    return out;
}

}  // namespace

Vector two_step_gmm(const MomentModel& model, const Dataset& data) {
    auto gbar = [&](const Vector& beta) -> Vector {
        return moment_matrix(model, data, beta).colwise().mean().transpose();
    };
    auto q1 = [&](const Vector& beta) {
        Vector m = gbar(beta);
        return m.allFinite() ? m.squaredNorm() : std::numeric_limits<double>::infinity();
    };
    Vector start = Vector::Zero(model.d_beta);
    NelderMeadResult step1 = nelder_mead(q1, start, 0.5, 1e-10, 2000);

    Matrix gmat = moment_matrix(model, data, step1.x);
    Matrix omega = gmat.transpose() * gmat / static_cast<double>(gmat.rows());
    omega.diagonal().array() += 1e-10 * std::max(1.0, omega.diagonal().maxCoeff());
    Eigen::LDLT<Matrix> ldlt(omega);
    auto q2 = [&](const Vector& beta) {
        Vector m = gbar(beta);
        if (!m.allFinite()) return std::numeric_limits<double>::infinity();
        return m.dot(ldlt.solve(m));
    };
    NelderMeadResult step2 = nelder_mead(q2, step1.x, 0.1, 1e-12, 2000);
    return step2.x;
}

GelSolution gel_fit(const MomentModel& model, const Dataset& data, const CarrierFamily& family,
                    const GelOptions& options) {
    Vector beta;
    if (options.beta0.has_value()) {
        beta = *options.beta0;
    } else if (model.init) {
        beta = model.init(data);
    } else {
        beta = two_step_gmm(model, data);
    }
    if (beta.size() != model.d_beta)
        throw input_error("starting value has length " + std::to_string(beta.size()) +
                          ", model expects " + std::to_string(model.d_beta));

    ProfileObjective profile(model, data, family, options);

    // BFGS on the profile criterion with finite-difference gradients.
    const Eigen::Index p = beta.size();
    double fval = profile(beta);
    if (!std::isfinite(fval)) {
        // The start itself is infeasible for this carrier; let Nelder-Mead
        // crawl back into the feasible region before the gradient phase.
        NelderMeadResult rescue = nelder_mead([&](const Vector& b) { return profile(b); }, beta,
                                              0.2, 1e-10, 400);
        beta = rescue.x;
        fval = rescue.value;
        if (!std::isfinite(fval))
            throw convergence_error("could not find a feasible starting value for " +
                                        family.name() + " saddle-point fit",
                                    beta, std::numeric_limits<double>::infinity());
    }
    int outer_it = 0;
    auto bfgs_phase = [&](Vector& b, double& fv) -> bool {
        Matrix hinv_local = Matrix::Identity(p, p);
        Vector grad = fd_gradient(profile, b, fv);
        int line_failures = 0;
        bool reset_used = false;
        for (int it = 0; it < options.outer_max_iter; ++it, ++outer_it) {
            if (grad.norm() <= options.outer_tol) return true;
            Vector dir = -(hinv_local * grad);
            if (!dir.allFinite() || dir.dot(grad) >= 0.0) {
                hinv_local.setIdentity();
                dir = -grad;
            }
            const double slope = grad.dot(dir);
            double t = 1.0;
            bool moved = false;
            Vector beta_new;
            double f_new = 0.0;
            for (int bt = 0; bt < 40; ++bt) {
                beta_new = b + t * dir;
                f_new = profile(beta_new);
                if (std::isfinite(f_new) && f_new <= fv + 1e-4 * t * slope) {
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if (!moved) {
                ++line_failures;
                if (!reset_used) {
                    hinv_local.setIdentity();
                    reset_used = true;
                    continue;
                }
                if (line_failures >= 3) return false;
                continue;
            }
            line_failures = 0;

            Vector grad_new = fd_gradient(profile, beta_new, f_new);
            Vector s = beta_new - b;
            Vector y = grad_new - grad;
            const double sy = s.dot(y);
            if (sy > 1e-12 * s.norm() * y.norm()) {
                // Sherman-Morrison form of the inverse BFGS update.
                Matrix I = Matrix::Identity(p, p);
                Matrix left = I - s * y.transpose() / sy;
                hinv_local = left * hinv_local * left.transpose() + s * s.transpose() / sy;
            }
            b = std::move(beta_new);
            fv = f_new;
            grad = std::move(grad_new);
        }
        return grad.norm() <= options.outer_tol;
    };
    auto polish_phase = [&](Vector& b, double& fv) -> bool {
        // Gradient phase stalled (noisy finite differences near the optimum or
        // repeated line-search failures): polish with a direct search.
        NelderMeadResult polish = nelder_mead([&](const Vector& x) { return profile(x); }, b,
                                              0.02, 1e-11, 1500);
        if (polish.value <= fv) {
            b = polish.x;
            fv = polish.value;
        }
        return fd_gradient(profile, b, fv).norm() <= 1e2 * options.outer_tol;
    };

    bool converged = bfgs_phase(beta, fval);
    if (!converged) converged = polish_phase(beta, fval);

    // A vanishing gradient does not certify a minimum: profile criteria with a
    // symmetry (an even direction, say) have stationary saddles that both the
    // gradient test and a locally-seeded direct search can accept.  Probe a
    // deterministic stencil of displacements and restart the descent whenever
    // one finds a strictly lower value.
    for (int round = 0; round < 2; ++round) {
        Vector best = beta;
        double best_f = fval;
        for (Eigen::Index j = 0; j < p; ++j) {
            for (double rel : {0.1, 0.02}) {
                for (double sign : {1.0, -1.0}) {
                    Vector cand = beta;
                    cand[j] += sign * rel * std::max(1.0, std::abs(beta[j]));
                    const double fc = profile(cand);
                    if (std::isfinite(fc) && fc < best_f - 1e-12) {
                        best = std::move(cand);
                        best_f = fc;
                    }
                }
            }
        }
        if (best_f >= fval - 1e-12) break;
        beta = std::move(best);
        fval = best_f;
        converged = bfgs_phase(beta, fval);
        if (!converged) converged = polish_phase(beta, fval);
    }

    if (model.canonicalize) beta = model.canonicalize(beta);

    Matrix gmat = moment_matrix(model, data, beta);
    InnerSolution inner = solve_lambda_status(gmat, family, options.inner_tol,
                                              options.inner_max_iter, nullptr);

    GelSolution sol;
    sol.beta_hat = beta;
    sol.lambda_hat = inner.lambda;
    sol.pi = implied_probabilities(inner.lambda, gmat, family);
    sol.criterion = inner.criterion;
    sol.n = static_cast<int>(data.rows());
    sol.converged = converged && inner.converged;
    sol.inner_iterations = std::max(profile.max_inner_iterations, inner.iterations);
    sol.outer_iterations = outer_it;
    sol.family = family;
    if (!sol.converged) {
        throw convergence_error("saddle-point fit for " + family.name() +
                                    " did not reach tolerance (criterion " +
                                    std::to_string(fval) + ")",
                                sol.beta_hat,
                                fd_gradient(profile, beta, fval).norm());
    }
    return sol;
}

GelSolution solve_at_beta(const MomentModel& model, const Dataset& data, const Vector& beta,
                          const CarrierFamily& family, const GelOptions& options) {
    Matrix gmat = moment_matrix(model, data, beta);
    InnerSolution inner =
        solve_lambda(gmat, family, options.inner_tol, options.inner_max_iter);
    GelSolution sol;
    sol.beta_hat = beta;
    sol.lambda_hat = inner.lambda;
    sol.pi = implied_probabilities(inner.lambda, gmat, family);
    sol.criterion = inner.criterion;
    sol.n = static_cast<int>(data.rows());
    sol.converged = inner.converged;
    sol.inner_iterations = inner.iterations;
    sol.outer_iterations = 0;
    sol.family = family;
    return sol;
}

OveridStatistic overid_statistic(const GelSolution& sol, const MomentModel& model) {
    OveridStatistic out;
    out.stat = 2.0 * static_cast<double>(sol.n) * sol.criterion;
    out.dof = model.d_g - model.d_beta;
    return out;
}

namespace {

double condition_number(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

}  // namespace

AsymptoticMatrices asymptotic_components(const GelSolution& sol, const MomentModel& model,
                                         const Dataset& data) {
    const Eigen::Index n = data.rows();
    const int dg = model.d_g;
    const int db = model.d_beta;
    const Vector& beta = sol.beta_hat;
    Vector ptil = shrink_probabilities(sol.pi);

    Matrix gmat = moment_matrix(model, data, beta);

    AsymptoticMatrices am;
    am.Omega_hat = gmat.transpose() * ptil.asDiagonal() * gmat;
    const double cond_omega = condition_number(am.Omega_hat);
    if (!(cond_omega < 1e12))
        throw conditioning_error("weighted moment second-moment matrix has condition number " +
                                 std::to_string(cond_omega));
    Eigen::LLT<Matrix> omega_llt(am.Omega_hat);

    std::vector<Matrix> jacobians;
    jacobians.reserve(static_cast<size_t>(n));
    am.G_hat = Matrix::Zero(dg, db);
    for (Eigen::Index i = 0; i < n; ++i) {
        jacobians.push_back(model.G(data.row(i).transpose(), beta));
        am.G_hat += ptil[i] * jacobians.back();
    }

    Matrix omega_inv_g = omega_llt.solve(am.G_hat);
    Matrix sandwich = am.G_hat.transpose() * omega_inv_g;  // G' Omega^-1 G
    const double cond_sandwich = condition_number(sandwich);
    if (!(cond_sandwich < 1e12))
        throw conditioning_error("G'Omega^-1G has condition number " +
                                 std::to_string(cond_sandwich));
    Eigen::LLT<Matrix> sw_llt(sandwich);
    am.Sigma_hat = sw_llt.solve(Matrix::Identity(db, db));
    am.H_hat = am.Sigma_hat * omega_inv_g.transpose();
    am.P_hat = omega_llt.solve(Matrix::Identity(dg, dg)) -
               omega_inv_g * am.Sigma_hat * omega_inv_g.transpose();

    // a^j = tr(Sigma * E[d^2 g^j / d beta d beta']) with weighted expectation.
    am.a_hat = Vector::Zero(dg);
    if (model.hess_g) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector z = data.row(i).transpose();
            for (int j = 0; j < dg; ++j)
                am.a_hat[j] += ptil[i] * (am.Sigma_hat * model.hess_g(z, beta, j)).trace();
        }
    } else {
        // E[d^2 g^j] by central differences of the Jacobian columns, then
        // symmetrised; differentiating the weighted mean Jacobian directly is
        // equivalent and touches each observation only 2*d_beta times.
        std::vector<Matrix> hbar(static_cast<size_t>(dg), Matrix::Zero(db, db));
        for (int l = 0; l < db; ++l) {
            const double h = 1e-5 * std::max(1.0, std::abs(beta[l]));
            Vector bp = beta, bm = beta;
            bp[l] += h;
            bm[l] -= h;
            Matrix gp = Matrix::Zero(dg, db), gm = Matrix::Zero(dg, db);
            for (Eigen::Index i = 0; i < n; ++i) {
                const Vector z = data.row(i).transpose();
                gp += ptil[i] * model.G(z, bp);
                gm += ptil[i] * model.G(z, bm);
            }
            Matrix col = (gp - gm) / (2.0 * h);  // d/d beta_l of E[G]
            for (int j = 0; j < dg; ++j)
                for (int k = 0; k < db; ++k) hbar[static_cast<size_t>(j)](k, l) = col(j, k);
        }
        for (int j = 0; j < dg; ++j) {
            Matrix sym = 0.5 * (hbar[static_cast<size_t>(j)] +
                                hbar[static_cast<size_t>(j)].transpose());
            am.a_hat[j] = (am.Sigma_hat * sym).trace();
        }
    }

    // zeta_lambda = -a + E[G_i H g_i] + c_rho E[g_i g_i' P g_i].
    const double crho = c_rho(sol.family);
    Vector zeta = -am.a_hat;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector gi = gmat.row(i).transpose();
        zeta += ptil[i] * (jacobians[static_cast<size_t>(i)] * (am.H_hat * gi));
        zeta += ptil[i] * crho * gi * (gi.dot(am.P_hat * gi));
    }
    am.zeta_lambda_hat = zeta;
    return am;
}

}  // namespace gelk
