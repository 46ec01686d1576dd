#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodno/tensor.hpp"

namespace oodno::constraint {
struct ConstraintSystem;
}

namespace oodno::metrics {

/// Linear-interpolation percentile (q in [0, 1]) between order statistics.
double percentile(std::vector<double> values, double q);

struct NmerciResult {
    double value = 0.0;
    double tau = 0.0;
    bool degenerate = false;  // max |err| == MAE; value forced to 0
};

inline constexpr double kStdFloor = 1e-12;

/// Normalized mean rescaled confidence interval over pooled points.
/// tau is the 95th percentile of |err_i| / sigma_i (sigma floored at 1e-12).
NmerciResult nmerci(std::span<const double> abs_errors, std::span<const double> stds);

/// Gaussian quantile function.
double normal_quantile(double p);

/// Central-coverage levels used by rmsce: p_j = (j - 1/2) / 100, j = 1..100.
std::vector<double> calibration_levels();

double rmsce(std::span<const double> means, std::span<const double> stds, std::span<const double> truths);

/// Closed-form Gaussian CRPS averaged over points.
double crps_gaussian(std::span<const double> means, std::span<const double> stds, std::span<const double> truths);
double crps_gaussian_point(double mean, double std, double truth);

double mse(std::span<const double> means, std::span<const double> truths);

/// Summed Gaussian negative log density (sigma floored at 1e-12).
double gaussian_nll(std::span<const double> means, std::span<const double> stds, std::span<const double> truths);

/// Mean over constraint rows of |G_row . field - b_row| for one flattened field.
double conservation_error(std::span<const double> field, const constraint::ConstraintSystem& cs);

struct MetricReport {
    double mse = 0.0;
    double nll = 0.0;
    double nmerci = 0.0;
    bool nmerci_degenerate = false;
    double rmsce = 0.0;
    double crps = 0.0;
    double conservation_error = 0.0;
    std::size_t n_points = 0;
    std::string method, task, split;
    std::uint64_t seed = 0;

    nlohmann::ordered_json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
};

/// Scores a batch of predictions [N, nt, nx] against truths of the same shape.
/// `constraints` holds one system per sample (empty skips CE).
MetricReport score(const Tensor& mean, const Tensor& std, const Tensor& truth,
                   const std::vector<constraint::ConstraintSystem>& constraints);

}  // namespace oodno::metrics
