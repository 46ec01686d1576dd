#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodno/autodiff.hpp"
#include "oodno/fno.hpp"
#include "oodno/pde.hpp"

namespace oodno::train {

inline constexpr std::array<double, 3> kLearningRates{1e-4, 1e-3, 1e-2};
inline constexpr std::array<double, 5> kLambdaGrid{1e-2, 1e-1, 1.0, 1e1, 1e2};

enum class LossKind { RelL2, NLL, DiverseRelL2 };
enum class DiversityKind { Weights, Outputs, Gradients };

std::string to_string(LossKind k);
std::string to_string(DiversityKind k);
LossKind loss_from_string(const std::string& s);
DiversityKind diversity_from_string(const std::string& s);

struct TrainConfig {
    std::size_t batch_size = 20;
    double lr = 1e-3;
    std::size_t max_epochs = 500;
    std::size_t patience = 50;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::RelL2;
    double lambda_diverse = 0.0;
    DiversityKind diversity_kind = DiversityKind::Weights;
    bool standardized = false;
    /// Hard cap on optimizer steps (0 = none); the step that hits it ends training.
    std::size_t max_steps = 0;

    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// ---- losses -------------------------------------------------------------

/// preds [B, M, nt, nx], targets [B, nt, nx]:
///   (1/(B M)) sum_b sum_m ||p_bm - u_b||^2 / ||u_b||^2.
ad::Var rel_l2_loss(const ad::Var& preds, const Tensor& targets);
double rel_l2(const Tensor& preds, const Tensor& targets);

/// Sum over head pairs m < k of ||r_m - r_k||^2, where x is [B, M, ...] and
/// r_m gathers x[:, m, ...]. With `standardize`, each r_m is z-scored over its
/// own entries first.
ad::Var pairwise_head_distance(const ad::Var& x, bool standardize);

/// [1, M, hidden + 1]: head m's last-layer parameters (weights column, bias).
ad::Var head_parameter_rows(const ad::Var& head_weight, const ad::Var& head_bias);

/// [1, M, hidden + 1]: gradient of head m's relative-L2 loss with respect to its
/// own last-layer parameters, as a differentiable function of the predictions
/// [B, M, nt, nx] and penultimate features [B, hidden, nt, nx].
ad::Var head_loss_gradients(const ad::Var& preds, const ad::Var& features, const Tensor& targets);

/// Relative L2 minus (2 lambda / (M (M-1))) times the pairwise distance of the
/// head parameter rows.
ad::Var diverse_loss(const ad::Var& preds, const Tensor& targets, const ad::Var& head_weight,
                     const ad::Var& head_bias, double lambda);

/// Same objective with an arbitrary [B, M, ...] diversity quantity.
ad::Var diverse_loss_rows(const ad::Var& preds, const Tensor& targets, const ad::Var& rows, double lambda,
                          bool standardize);

/// Mean over entries of 0.5 (log s2 + (u - mu)^2 / s2 + log 2 pi), s2 = max(exp(log_var), 1e-12).
ad::Var nll_loss(const ad::Var& mean, const ad::Var& log_var, const Tensor& targets);

// ---- optimizer ----------------------------------------------------------

class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<ad::Var> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

// ---- training -------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mse = 0.0;
};

struct Checkpoint {
    fno::FnoParams params;
    TrainConfig train_config;
    std::size_t epoch = 0;      // epoch of the best validation loss (0 = initialization)
    std::size_t steps = 0;      // optimizer steps taken in total
    double val_loss = 0.0;
    double val_mse = 0.0;
    std::vector<EpochLog> log;
    nlohmann::ordered_json meta;  // free-form provenance (task, method, ...)
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, fno::FnoParams last_finite)
        : std::runtime_error(what), last_finite_(std::move(last_finite)) {}
    const fno::FnoParams& last_finite() const { return last_finite_; }

private:
    fno::FnoParams last_finite_;
};

/// Samples [N, nt, nx, C] laid out channel-first once for batching.
struct BatchSource {
    Tensor inputs;   // [N, C, nt, nx]
    Tensor targets;  // [N, nt, nx]
    std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }

    static BatchSource from(const pde::Dataset& data);
    Tensor gather_inputs(const std::vector<std::size_t>& idx) const;
    Tensor gather_targets(const std::vector<std::size_t>& idx) const;
};

/// Loss of one batch for the configured objective. `ood_inputs` feeds the
/// output-diversity variant and is ignored otherwise.
ad::Var batch_loss(const fno::FnoParams& params, const Tensor& inputs, const Tensor& targets, const TrainConfig& cfg,
                   Rng* dropout_rng, const Tensor* ood_inputs);

/// Validation loss (objective without the diversity term) and MSE of the
/// head-mean prediction; evaluated without dropout.
std::pair<double, double> evaluate(const fno::FnoParams& params, const BatchSource& data, const TrainConfig& cfg);

/// Adam with shuffled mini-batches and early stopping on validation loss.
/// Returns the best-validation parameters. Throws DivergenceError when the
/// loss or a gradient becomes non-finite.
Checkpoint train(const fno::FnoParams& init, const pde::Dataset& train_set, const pde::Dataset& val_set,
                 const TrainConfig& cfg, const pde::Dataset* ood_unlabeled = nullptr);

/// Largest lambda whose validation MSE is within 10% of the best.
double select_lambda(const std::vector<double>& candidates, const std::vector<double>& val_mse);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace oodno::train
