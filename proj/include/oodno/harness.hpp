#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodno/constraint.hpp"
#include "oodno/fno.hpp"
#include "oodno/metrics.hpp"
#include "oodno/pde.hpp"
#include "oodno/trainer.hpp"
#include "oodno/uq.hpp"

namespace oodno::harness {

struct ExperimentConfig {
    pde::Family task = pde::Family::Heat;
    std::vector<uq::Method> methods{uq::Method::Ensemble, uq::Method::Diverse, uq::Method::Variance,
                                    uq::Method::McDropout, uq::Method::Bayesian};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::vector<pde::Split> splits{pde::Split::OodSmall, pde::Split::OodMedium, pde::Split::OodLarge};
    std::size_t nt = 64;
    std::size_t nx = 64;
    std::size_t n_train = 400;  // before the validation hold-out
    double val_fraction = 0.2;
    std::size_t n_test = 100;   // per OOD split
    std::size_t n_ood_unlabeled = 100;
    std::uint64_t data_seed = 0;

    fno::FnoConfig model;
    train::TrainConfig train;

    std::size_t ensemble_size = 10;
    std::size_t n_heads = 10;
    std::vector<double> lambda_grid{train::kLambdaGrid.begin(), train::kLambdaGrid.end()};
    std::vector<double> dropout_grid{0.1, 0.25};
    std::size_t n_masks = 10;
    std::vector<double> laplace_alphas{uq::kLaplaceAlphas.begin(), uq::kLaplaceAlphas.end()};
    /// Hyperparameter grids searched on the first seed only; later seeds reuse the choice.
    bool select_on_first_seed = false;

    std::size_t workers = 1;
    /// Also write every trained method to `<out_dir>/models/<method>_seed<k>`.
    bool save_models = false;
    std::filesystem::path out_dir = "oodno_out";
    std::filesystem::path data_dir;  // empty: generate in memory

    nlohmann::ordered_json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    void validate() const;
    /// Short stable hash of to_json(), used as provenance.
    std::string hash() const;
};

/// Train/val/test datasets of one experiment.
struct ExperimentData {
    pde::PdeTask task;
    pde::Dataset train, val;
    pde::Dataset ood_unlabeled;  // parameter fields only matter; targets unused
    std::map<pde::Split, pde::Dataset> test;
    std::string content_hash;    // over every tensor payload
};

ExperimentData prepare_data(const ExperimentConfig& cfg);

/// One labeled split: read from cfg.data_dir when set (error if absent),
/// otherwise generated in memory. Train holds n_train samples, the rest n_test.
pde::Dataset split_dataset(const ExperimentConfig& cfg, pde::Split split);

/// Selected hyperparameters shared across seeds when select_on_first_seed is set.
struct Selection {
    std::optional<double> lambda;
    std::optional<double> dropout_p;
};

/// A trained UQ method for one seed.
struct TrainedMethod {
    uq::Method method = uq::Method::Fno;
    std::uint64_t seed = 0;
    std::vector<fno::FnoParams> models;
    std::vector<train::Checkpoint> checkpoints;  // training record of each model
    std::optional<uq::LaplacePosterior> laplace;
    double lambda = 0.0;
    double dropout_p = 0.0;
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

/// Seed of ensemble member k (member 0 is also the plain FNO and the Laplace MAP).
std::uint64_t member_seed(std::uint64_t seed, std::size_t k);

/// Trains (or selects and trains) one method. `cache` holds models already
/// trained for this seed so the plain FNO / ensemble member 0 / Laplace MAP
/// share one training run.
TrainedMethod train_method(const ExperimentConfig& cfg, uq::Method method, std::uint64_t seed, const ExperimentData& data,
                           Selection& selection, std::map<std::string, train::Checkpoint>* cache = nullptr);

/// `<dir>/method.json`, one checkpoint directory `model<k>/` per model and,
/// for the Bayesian method, the Laplace posterior tensors.
void save_trained(const std::filesystem::path& dir, const TrainedMethod& m);
TrainedMethod load_trained(const std::filesystem::path& dir);

uq::PosteriorSummary predict_method(const TrainedMethod& m, const Tensor& inputs, std::uint64_t seed, std::size_t n_masks);

/// Applies ProbConserv per sample with one constraint system per sample.
uq::PosteriorSummary apply_probconserv(const uq::PosteriorSummary& s,
                                       const std::vector<constraint::ConstraintSystem>& systems);

std::vector<constraint::ConstraintSystem> constraints_for(const pde::PdeTask& task, const pde::Dataset& data);

struct ResultRow {
    uq::Method method;
    pde::Split split;
    std::uint64_t seed;
    metrics::MetricReport before;
    metrics::MetricReport after;
    double mse_ratio = 1.0;  // before / after ProbConserv
    nlohmann::ordered_json provenance;
};

nlohmann::ordered_json to_json(const ResultRow& r);
ResultRow result_row_from_json(const nlohmann::json& j);

struct Job {
    std::uint64_t seed;
    uq::Method method;
    std::string describe() const;
};

std::vector<Job> plan_experiment(const ExperimentConfig& cfg);

struct ExperimentResult {
    std::vector<Job> plan;
    std::vector<ResultRow> rows;
    std::vector<std::filesystem::path> files;
};

/// Runs every (seed, method) job through a bounded worker pool; results are
/// written by a single writer in plan order. With dry_run only the plan is
/// produced (and written to plan.json).
ExperimentResult run_experiment(const ExperimentConfig& cfg, bool dry_run = false);

/// Mean (std) table per (method, split) over seeds, columns before/after ProbConserv.
std::string report_csv(const std::vector<ResultRow>& rows);
/// Rows merged from per-row JSON files.
std::string report_csv_from_json(const std::vector<nlohmann::json>& rows);

// ---- diagnostics -------------------------------------------------------------

struct DiversityTables {
    std::vector<Tensor> magnitude_maps;  // per member/head source, [width, modes]
    Tensor cov;                          // coefficient of variation across members
    Tensor head_distances;               // [M, M] pairwise ||theta_m - theta_k|| (diverse models)
};

/// Ensemble members (>= 2) give magnitude maps and the CoV matrix; a single
/// multi-head model gives pairwise head distances.
DiversityTables diversity_report(const std::vector<fno::FnoParams>& models);
Tensor head_distance_matrix(const fno::FnoParams& model);
double mean_head_distance(const fno::FnoParams& model);

/// Writes `cov_layer<l>.csv`, `member<k>_layer<l>.csv` and `head_distances.csv`.
void write_diversity_report(const std::filesystem::path& dir, const std::vector<fno::FnoParams>& models);

struct AblationRow {
    train::DiversityKind kind;
    bool standardized;
    double lambda;
    std::uint64_t seed;
    double mse;
    double nmerci;
    double head_distance;
};

struct AblationConfig {
    ExperimentConfig base;
    std::vector<train::DiversityKind> kinds{train::DiversityKind::Weights, train::DiversityKind::Outputs,
                                            train::DiversityKind::Gradients};
    std::vector<double> lambdas{0.0, 1e-2, 1e-1, 1.0, 1e1, 1e2};
    pde::Split eval_split = pde::Split::OodMedium;
};

std::vector<AblationRow> ablate_diversity(const AblationConfig& cfg);
std::string ablation_csv(const std::vector<AblationRow>& rows);

struct CostRow {
    uq::Method method;
    std::size_t width;
    std::uint64_t seed;
    double flops;
    std::size_t params;
    double mse;
    double nmerci;
};

struct CostConfig {
    ExperimentConfig base;
    std::vector<std::size_t> widths{8, 16, 32};
    pde::Split eval_split = pde::Split::OodMedium;
    /// Diverse widths considered when matching each ensemble's FLOP budget.
    std::vector<std::size_t> diverse_widths{8, 12, 16, 24, 32, 48, 64};
    bool match_flops = true;
};

/// EnsembleNO at each width and the widest DiverseNO whose FLOPs do not exceed it
/// (or the same width when match_flops is false).
std::vector<CostRow> cost_sweep(const CostConfig& cfg);
std::string cost_csv(const std::vector<CostRow>& rows);
/// Total FLOPs of K independent members or one M-head model.
double method_flops(uq::Method method, const fno::FnoConfig& config, std::size_t nt, std::size_t nx, std::size_t members);

/// Gnuplot script stub plotting the cost CSV.
std::string gnuplot_stub(const std::string& csv_name);

/// Order-preserving worker pool: fn(i) for i in [0, n), at most `workers` at once.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// FNV-1a 64-bit digest, hex encoded.
std::string content_hash(std::span<const double> data, std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace oodno::harness
