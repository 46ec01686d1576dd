#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library's own solvers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Crank-Nicolson for u_t = k u_xx on [0, L] with u(0) = u(L) = 0 and
/// u(x, 0) = sin(x). Returns u at `n_out` equispaced nodes (including the
/// boundaries) at every time in `times`.
inline std::vector<std::vector<double>> heat_crank_nicolson(double k, double length, std::size_t intervals,
                                                            std::size_t steps_per_unit, const std::vector<double>& times,
                                                            std::size_t n_out) {
    const std::size_t n = intervals - 1;  // interior unknowns
    const double h = length / static_cast<double>(intervals);
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = std::sin(h * static_cast<double>(i + 1));
    std::vector<std::vector<double>> out;
    double t = 0.0;
    std::vector<double> rhs(n), c(n), d(n);
    for (double target : times) {
        const auto steps = static_cast<std::size_t>(std::ceil((target - t) * static_cast<double>(steps_per_unit) - 1e-9));
        if (steps > 0) {
            const double dt = (target - t) / static_cast<double>(steps);
            const double r = k * dt / (2.0 * h * h);
            for (std::size_t s = 0; s < steps; ++s) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double l = i > 0 ? u[i - 1] : 0.0, rr = i + 1 < n ? u[i + 1] : 0.0;
                    rhs[i] = r * l + (1.0 - 2.0 * r) * u[i] + r * rr;
                }
                // Thomas algorithm for (-r, 1 + 2r, -r).
                c[0] = -r / (1.0 + 2.0 * r);
                d[0] = rhs[0] / (1.0 + 2.0 * r);
                for (std::size_t i = 1; i < n; ++i) {
                    const double m = (1.0 + 2.0 * r) + r * c[i - 1];
                    c[i] = -r / m;
                    d[i] = (rhs[i] + r * d[i - 1]) / m;
                }
                u[n - 1] = d[n - 1];
                for (std::size_t i = n - 1; i-- > 0;) u[i] = d[i] - c[i] * u[i + 1];
            }
        }
        t = target;
        std::vector<double> row(n_out);
        const std::size_t stride = intervals / (n_out - 1);
        for (std::size_t j = 0; j < n_out; ++j) {
            const std::size_t node = j * stride;
            row[j] = (node == 0 || node == intervals) ? 0.0 : u[node - 1];
        }
        out.push_back(row);
    }
    return out;
}

/// Equality-constrained least squares min (x - mu)^T W (x - mu) s.t. G x = b,
/// W = diag(1 / var), solved through the full KKT system with a generic
/// full-pivot LU.
inline Eigen::VectorXd kkt_solve(const Eigen::VectorXd& mu, const Eigen::VectorXd& var, const Eigen::MatrixXd& G,
                                 const Eigen::VectorXd& b) {
    const Eigen::Index n = mu.size(), m = G.rows();
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
    Eigen::VectorXd rhs(n + m);
    for (Eigen::Index i = 0; i < n; ++i) K(i, i) = 2.0 / var(i);
    K.block(0, n, n, m) = G.transpose();
    K.block(n, 0, m, n) = G;
    rhs.head(n) = 2.0 * mu.cwiseQuotient(var);
    rhs.tail(m) = b;
    return K.fullPivLu().solve(rhs).head(n);
}

/// Composite Simpson quadrature on [a, b] with `n` (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
    if (n % 2) ++n;
    const double h = (b - a) / static_cast<double>(n);
    double s = f(a) + f(b);
    for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
    return s * h / 3.0;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// CRPS by direct quadrature of (F(x) - 1{x >= u})^2 for N(mu, sigma^2).
inline double crps_quadrature(double mu, double sigma, double u) {
    const double lo = std::min(mu - 12.0 * sigma, u), hi = std::max(mu + 12.0 * sigma, u);
    auto below = [&](double x) { const double F = normal_cdf((x - mu) / sigma); return F * F; };
    auto above = [&](double x) { const double F = normal_cdf((x - mu) / sigma); return (1.0 - F) * (1.0 - F); };
    return simpson(below, lo, u, 20000) + simpson(above, u, hi, 20000);
}

inline double gaussian_log_density(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return -std::log(sigma * std::sqrt(2.0 * std::numbers::pi)) - 0.5 * z * z;
}

/// Linear-interpolation percentile computed from a freshly sorted copy.
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = lo + 1 < v.size() ? lo + 1 : lo;
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace oracle
