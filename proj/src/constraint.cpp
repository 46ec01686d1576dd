#include "oodno/constraint.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace oodno::constraint {

ConstraintSystem build_constraint(const pde::PdeTask& task, double c, const std::vector<double>& times) {
    const auto ts = task.grid_t();
    const std::size_t nx = task.nx;
    const double dx = task.dx();
    ConstraintSystem cs;
    cs.G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(times.size()), static_cast<Eigen::Index>(task.nt * nx));
    cs.b.resize(static_cast<Eigen::Index>(times.size()));
    const double tol = 1e-9 * std::max(task.final_time, 1.0);
    for (std::size_t r = 0; r < times.size(); ++r) {
        std::size_t j = ts.size();
        for (std::size_t k = 0; k < ts.size(); ++k) {
            if (std::abs(ts[k] - times[r]) <= tol) {
                j = k;
                break;
            }
        }
        if (j == ts.size()) {
            throw std::invalid_argument("constraint time " + std::to_string(times[r]) + " is not on the task grid");
        }
        const auto row = static_cast<Eigen::Index>(r);
        for (std::size_t l = 0; l < nx; ++l) {
            const double w = (l == 0 || l + 1 == nx) ? 0.5 * dx : dx;
            cs.G(row, static_cast<Eigen::Index>(j * nx + l)) = w;
        }
        cs.b(row) = pde::mass_target(task, c, ts[j]);
        cs.slices.push_back(j);
    }
    return cs;
}

ConstraintSystem build_constraint(const pde::PdeTask& task, double c) { return build_constraint(task, c, task.grid_t()); }

Update probconserv_update(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance, const ConstraintSystem& cs) {
    if (mean.size() != cs.G.cols() || variance.size() != mean.size()) {
        throw std::invalid_argument("probconserv: field of " + std::to_string(mean.size()) +
                                    " points does not match constraint with " + std::to_string(cs.G.cols()) +
                                    " columns");
    }
    if (!(cs.sigma_g > 0.0)) throw std::invalid_argument("probconserv: slack sigma_g must be positive");
    if ((variance.array() < 0.0).any()) throw std::invalid_argument("probconserv: negative variance");

    const Eigen::MatrixXd GS = cs.G * variance.asDiagonal();  // G Sigma
    Eigen::MatrixXd S = GS * cs.G.transpose();
    S.diagonal().array() += cs.sigma_g * cs.sigma_g;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw std::runtime_error("probconserv: Cholesky of the constraint system failed");

    Update u;
    const Eigen::VectorXd residual = cs.G * mean - cs.b;
    u.mean = mean - GS.transpose() * llt.solve(residual);
    // diag(Sigma G^T S^{-1} G Sigma) = column norms of L^{-1} G Sigma
    const Eigen::MatrixXd W = llt.matrixL().solve(GS);
    u.variance = variance - W.colwise().squaredNorm().transpose();
    u.variance = u.variance.cwiseMax(0.0);
    return u;
}

}  // namespace oodno::constraint
