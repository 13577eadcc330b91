#pragma once

// Internal quasi-Newton optimizer used for marginal-likelihood ascent.
// Not installed; the public surface is volcast::fit().

#include <Eigen/Core>
#include <functional>
#include <utility>

namespace volcast::detail {

struct LbfgsOptions {
    int max_iter = 200;
    double tol = 1e-6; // gradient infinity-norm at which we declare convergence
    int memory = 8;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    bool converged = false;
};

/// Objective evaluated as (value, gradient). Non-finite values are treated
/// as "step rejected", so objectives may return -inf instead of throwing.
using Objective =
    std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

/// Maximize `f` from `x0` with limited-memory BFGS and Armijo backtracking.
/// Deterministic; returns the best iterate seen when the line search stalls.
LbfgsResult lbfgs_maximize(const Objective& f, const Eigen::VectorXd& x0,
                           const LbfgsOptions& opts);

} // namespace volcast::detail
