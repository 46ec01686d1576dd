#pragma once

#include <vector>

#include <Eigen/Dense>

#include "oodno/pde.hpp"

namespace oodno::constraint {

inline constexpr double kDefaultSlack = 1e-9;

/// Linear constraint G u = b + sigma_g eps on a flattened [nt, nx] field.
struct ConstraintSystem {
    Eigen::MatrixXd G;  // [n_constraints, nt * nx]
    Eigen::VectorXd b;  // [n_constraints]
    double sigma_g = kDefaultSlack;
    std::vector<std::size_t> slices;  // time-slice index of each row (empty for free-form systems)
};

/// One trapezoid mass row per requested time, dx [1/2, 1, ..., 1, 1/2] on that
/// slice, with b = mass_target. Times must lie on the task grid.
ConstraintSystem build_constraint(const pde::PdeTask& task, double c, const std::vector<double>& times);

/// Every time slice of the task grid.
ConstraintSystem build_constraint(const pde::PdeTask& task, double c);

struct Update {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
};

/// Gaussian conditioning of N(mu, diag(var)) on the noisy constraint:
///   mu~ = mu - S G^T (G S G^T + sigma_g^2 I)^{-1} (G mu - b)
///   S~  = S - S G^T (G S G^T + sigma_g^2 I)^{-1} G S     (diagonal returned, clamped at 0)
Update probconserv_update(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance, const ConstraintSystem& cs);

}  // namespace oodno::constraint
