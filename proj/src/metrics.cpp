#include "oodno/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "oodno/constraint.hpp"

namespace oodno::metrics {

namespace {

void require_equal_sizes(std::size_t a, std::size_t b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a) + " vs " + std::to_string(b));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty set");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("percentile level must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

NmerciResult nmerci(std::span<const double> abs_errors, std::span<const double> stds) {
    require_equal_sizes(abs_errors.size(), stds.size(), "nmerci");
    if (abs_errors.empty()) throw std::invalid_argument("nmerci of an empty set");
    const std::size_t n = abs_errors.size();
    std::vector<double> ratios(n);
    double mae = 0.0, max_err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::abs(abs_errors[i]);
        ratios[i] = e / std::max(stds[i], kStdFloor);
        mae += e;
        max_err = std::max(max_err, e);
    }
    mae /= static_cast<double>(n);
    NmerciResult r;
    r.tau = percentile(ratios, 0.95);
    if (max_err == mae) {
        r.degenerate = true;
        return r;
    }
    double interval = 0.0;
    for (std::size_t i = 0; i < n; ++i) interval += r.tau * std::max(stds[i], kStdFloor);
    interval /= static_cast<double>(n);
    r.value = (interval - mae) / (max_err - mae);
    return r;
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal quantile needs p in (0, 1)");
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> calibration_levels() {
    std::vector<double> p(100);
    for (std::size_t j = 0; j < p.size(); ++j) p[j] = (static_cast<double>(j) + 0.5) / 100.0;
    return p;
}

double rmsce(std::span<const double> means, std::span<const double> stds, std::span<const double> truths) {
    require_equal_sizes(means.size(), stds.size(), "rmsce");
    require_equal_sizes(means.size(), truths.size(), "rmsce");
    if (means.empty()) throw std::invalid_argument("rmsce of an empty set");
    const std::size_t n = means.size();
    // Standardized errors sorted once; coverage at z is the count of |e|/sigma <= z.
    std::vector<double> ratios(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double e = std::abs(truths[i] - means[i]);
        ratios[i] = stds[i] > 0.0 ? e / stds[i] : (e == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    }
    std::sort(ratios.begin(), ratios.end());
    double acc = 0.0;
    const auto levels = calibration_levels();
    for (double p : levels) {
        const double z = normal_quantile(0.5 * (1.0 + p));
        const auto covered = static_cast<double>(std::upper_bound(ratios.begin(), ratios.end(), z) - ratios.begin());
        const double d = p - covered / static_cast<double>(n);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(levels.size()));
}

double crps_gaussian_point(double mean, double std, double truth) {
    const double s = std::max(std, kStdFloor);
    const double z = (truth - mean) / s;
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return s * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * pdf - 1.0 / std::sqrt(std::numbers::pi));
}

double crps_gaussian(std::span<const double> means, std::span<const double> stds, std::span<const double> truths) {
    require_equal_sizes(means.size(), stds.size(), "crps");
    require_equal_sizes(means.size(), truths.size(), "crps");
    if (means.empty()) throw std::invalid_argument("crps of an empty set");
    double acc = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) acc += crps_gaussian_point(means[i], stds[i], truths[i]);
    return acc / static_cast<double>(means.size());
}

double mse(std::span<const double> means, std::span<const double> truths) {
    require_equal_sizes(means.size(), truths.size(), "mse");
    if (means.empty()) throw std::invalid_argument("mse of an empty set");
    double acc = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) acc += (means[i] - truths[i]) * (means[i] - truths[i]);
    return acc / static_cast<double>(means.size());
}

double gaussian_nll(std::span<const double> means, std::span<const double> stds, std::span<const double> truths) {
    require_equal_sizes(means.size(), stds.size(), "gaussian_nll");
    require_equal_sizes(means.size(), truths.size(), "gaussian_nll");
    const double log2pi = std::log(2.0 * std::numbers::pi);
    double acc = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
        const double s = std::max(stds[i], kStdFloor);
        const double z = (truths[i] - means[i]) / s;
        acc += 0.5 * (log2pi + 2.0 * std::log(s) + z * z);
    }
    return acc;
}

double conservation_error(std::span<const double> field, const constraint::ConstraintSystem& cs) {
    require_equal_sizes(field.size(), static_cast<std::size_t>(cs.G.cols()), "conservation_error");
    if (cs.G.rows() == 0) return 0.0;
    const Eigen::Map<const Eigen::VectorXd> u(field.data(), static_cast<Eigen::Index>(field.size()));
    return (cs.G * u - cs.b).cwiseAbs().mean();
}

nlohmann::ordered_json MetricReport::to_json() const {
    return {{"method", method},
            {"task", task},
            {"split", split},
            {"seed", seed},
            {"n_points", n_points},
            {"mse", mse},
            {"nll", nll},
            {"nmerci", nmerci},
            {"nmerci_degenerate", nmerci_degenerate},
            {"rmsce", rmsce},
            {"crps", crps},
            {"conservation_error", conservation_error}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.method = j.value("method", "");
    r.task = j.value("task", "");
    r.split = j.value("split", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.n_points = j.value("n_points", std::size_t{0});
    r.mse = j.value("mse", 0.0);
    r.nll = j.value("nll", 0.0);
    r.nmerci = j.value("nmerci", 0.0);
    r.nmerci_degenerate = j.value("nmerci_degenerate", false);
    r.rmsce = j.value("rmsce", 0.0);
    r.crps = j.value("crps", 0.0);
    r.conservation_error = j.value("conservation_error", 0.0);
    return r;
}

MetricReport score(const Tensor& mean, const Tensor& std, const Tensor& truth,
                   const std::vector<constraint::ConstraintSystem>& constraints) {
    require_same_shape(mean, std, "score");
    require_same_shape(mean, truth, "score");
    const auto m = mean.data();
    const auto s = std.data();
    const auto u = truth.data();
    std::vector<double> err(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) err[i] = std::abs(m[i] - u[i]);
    MetricReport r;
    r.n_points = m.size();
    r.mse = metrics::mse(m, u);
    r.nll = gaussian_nll(m, s, u);
    const auto nm = metrics::nmerci(err, s);
    r.nmerci = nm.value;
    r.nmerci_degenerate = nm.degenerate;
    r.rmsce = metrics::rmsce(m, s, u);
    r.crps = crps_gaussian(m, s, u);
    if (!constraints.empty()) {
        const std::size_t n = mean.dim(0);
        if (constraints.size() != n) throw std::invalid_argument("score: need one constraint system per sample");
        const std::size_t stride = mean.numel() / n;
        double ce = 0.0;
        for (std::size_t k = 0; k < n; ++k) ce += conservation_error(m.subspan(k * stride, stride), constraints[k]);
        r.conservation_error = ce / static_cast<double>(n);
    }
    return r;
}

}  // namespace oodno::metrics
