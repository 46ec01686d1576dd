#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "oodno/fno.hpp"
#include "oodno/trainer.hpp"

namespace oodno::uq {

enum class Method { Fno, Ensemble, Diverse, Variance, McDropout, Bayesian };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Per-point predictive mean and standard deviation for a batch of inputs.
struct PosteriorSummary {
    Tensor mean;  // [N, nt, nx]
    Tensor std;   // [N, nt, nx], >= 0
    Method method = Method::Fno;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

/// `<stem>.mean.bin`, `<stem>.std.bin` (with sidecars) and `<stem>.summary.json`.
void save_summary(const std::filesystem::path& stem, const PosteriorSummary& s);
PosteriorSummary load_summary(const std::filesystem::path& stem);

/// All head outputs [N, M, nt, nx] for channel-first inputs [N, C, nt, nx],
/// evaluated in batches without recording.
Tensor predict_heads(const fno::FnoParams& params, const Tensor& inputs, Rng* dropout_rng = nullptr,
                     std::size_t batch = 20);

/// Sample mean and unbiased (K - 1) standard deviation of K samples [N, nt, nx].
PosteriorSummary summarize(const std::vector<Tensor>& samples);

PosteriorSummary ensemble_predict(const std::vector<fno::FnoParams>& models, const Tensor& inputs);
PosteriorSummary diverse_predict(const fno::FnoParams& model, const Tensor& inputs);
/// Two-head model (mean, log variance); std = exp(log_var / 2) floored at 1e-6.
PosteriorSummary variance_predict(const fno::FnoParams& model, const Tensor& inputs);
PosteriorSummary mc_dropout_predict(const fno::FnoParams& model, const Tensor& inputs, std::size_t n_masks,
                                    std::uint64_t seed);

inline constexpr double kVarianceStdFloor = 1e-6;
inline constexpr std::array<double, 4> kLaplaceAlphas{0.1, 1.0, 10.0, 100.0};

/// Gaussian posterior over the last linear layer (head weights and bias) of a
/// single-head model.
struct LaplacePosterior {
    double alpha = 1.0;
    Eigen::VectorXd map_weights;  // [hidden + 1]
    Eigen::MatrixXd precision;    // alpha^2 I + sum_i Phi_i^T Phi_i / s_i^2
    Eigen::MatrixXd covariance;   // precision^{-1}
    bool jittered = false;
};

/// Noise scale per example: s_i^2 = ||u_i||^2 / alpha^2.
LaplacePosterior laplace_fit(const fno::FnoParams& model, const train::BatchSource& train_set, double alpha);

/// Mean = MAP prediction; variance = phi^T Lambda^{-1} phi + ||mean||^2 / alpha^2 per point.
PosteriorSummary laplace_predict(const LaplacePosterior& posterior, const fno::FnoParams& model, const Tensor& inputs);

/// Fits at every alpha and keeps the one with the lowest summed validation NLL.
LaplacePosterior laplace_select(const fno::FnoParams& model, const train::BatchSource& train_set,
                                const train::BatchSource& val_set, std::vector<double> alphas = {kLaplaceAlphas.begin(), kLaplaceAlphas.end()});

/// First-layer spectral weight magnitudes [width_in, 2 * modes_t * modes_x],
/// averaged over output channels.
Tensor spectral_magnitude_map(const fno::FnoParams& model, std::size_t layer = 0);

/// Elementwise std / mean across members (unbiased std); zero where the mean is zero.
Tensor coefficient_of_variation(const std::vector<Tensor>& maps);

}  // namespace oodno::uq
