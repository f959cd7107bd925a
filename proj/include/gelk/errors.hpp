#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace gelk {

// Carrier argument left the domain of rho, or a weight vector violated its
// contract.  The message names the offending value.
class domain_violation : public std::runtime_error {
public:
    explicit domain_violation(const std::string& what) : std::runtime_error(what) {}
};

// Moment matrix numerically rank deficient (smallest singular value below
// 1e-12 times the largest).
class singular_moment_error : public std::runtime_error {
public:
    explicit singular_moment_error(const std::string& what) : std::runtime_error(what) {}
};

// An iterative solver hit its cap.  Carries the best iterate found and the
// residual norm there so callers can inspect or restart.
class convergence_error : public std::runtime_error {
public:
    convergence_error(const std::string& what, Eigen::VectorXd best, double residual)
        : std::runtime_error(what), best_iterate(std::move(best)), residual_norm(residual) {}

    Eigen::VectorXd best_iterate;
    double residual_norm;
};

// A matrix that must be inverted is too ill-conditioned; message reports the
// condition number estimate.
class conditioning_error : public std::runtime_error {
public:
    explicit conditioning_error(const std::string& what) : std::runtime_error(what) {}
};

// Adaptive quadrature failed to reach its tolerance.
class quadrature_error : public std::runtime_error {
public:
    explicit quadrature_error(const std::string& what) : std::runtime_error(what) {}
};

// Evaluation grid cannot support the requested correction (for instance the
// positive part of a density estimate carries less than half its mass).
class support_error : public std::runtime_error {
public:
    explicit support_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed user input: CSV rows, JSON configs, unknown flags.
class input_error : public std::runtime_error {
public:
    explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gelk
