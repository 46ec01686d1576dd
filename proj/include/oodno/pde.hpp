#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodno/tensor.hpp"

namespace oodno::pde {

enum class Family { Heat, PME, Stefan, Advection };
enum class Split { Train, Val, OodSmall, OodMedium, OodLarge };

std::string to_string(Family f);
std::string to_string(Split s);
Family family_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool contains(double v) const { return v >= lo && v <= hi; }
    /// True when the interiors overlap; shared endpoints do not count.
    bool overlaps(const Range& o) const { return lo < o.hi && o.lo < hi; }
};

struct PdeTask {
    Family family = Family::Heat;
    double x_lo = 0.0;
    double x_hi = 1.0;
    double final_time = 1.0;
    std::size_t nt = 64;
    std::size_t nx = 64;
    Range train;
    std::map<Split, Range> ood;

    /// Benchmark definition of a family with its training and OOD parameter ranges.
    static PdeTask standard(Family family, std::size_t nt = 64, std::size_t nx = 64);

    Range range(Split split) const;
    double dx() const { return (x_hi - x_lo) / static_cast<double>(nx - 1); }
    double dt() const { return nt > 1 ? final_time / static_cast<double>(nt - 1) : 0.0; }
    std::vector<double> grid_x() const;
    std::vector<double> grid_t() const;

    nlohmann::ordered_json to_json() const;
};

struct SolutionField {
    Tensor values;  // [nt, nx]
    Tensor grid_x;  // [nx]
    Tensor grid_t;  // [nt]
    double param = 0.0;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, std::vector<double> trace)
        : std::runtime_error(what), trace_(std::move(trace)) {}
    /// Residual norms of the failing Newton solve, one per iteration.
    const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

// Closed-form solutions on the task grid.
SolutionField solve_heat(double k, const PdeTask& task);
SolutionField solve_advection(double beta, const PdeTask& task);
SolutionField solve_pme_exact(double m, const PdeTask& task);
SolutionField solve_stefan_exact(double u_star, const PdeTask& task);

double heat_exact(double k, double x, double t);
double advection_exact(double beta, double x, double t);
double pme_exact(double m, double x, double t);

/// Similarity solution u = 1 - beta erf(x / (2 sqrt t)) behind the front
/// x*(t) = 2 alpha sqrt t, zero ahead of it.
struct StefanSimilarity {
    double u_star = 0.0;
    double alpha = 0.0;
    double beta = 0.0;

    static StefanSimilarity solve(double u_star);
    double value(double x, double t) const;
    double front(double t) const { return 2.0 * alpha * std::sqrt(t); }
    double mass(double t) const;
};

struct FvOptions {
    std::size_t cells = 256;
    std::size_t min_steps = 2048;  // dt <= T / min_steps
    double newton_tol = 1e-10;
    std::size_t max_newton = 100;
};

struct FvStepRecord {
    double time = 0.0;
    double mass = 0.0;          // sum of cell values times h after the step
    double boundary_flux = 0.0; // net flux into the domain over the step (dt * (F_left - F_right))
    std::size_t newton_iterations = 0;
};

struct FvSolution {
    std::vector<double> centers;        // cell centers
    std::vector<double> record_times;
    Tensor cell_values;                 // [record_times, cells]
    std::vector<FvStepRecord> steps;
    double initial_mass = 0.0;
};

/// Backward-Euler finite-volume solve of u_t = (k(u) u_x)_x in flux form with
/// face flux -(K(u_R) - K(u_L)) / h, K the antiderivative of k. Dirichlet data
/// enter through half-cell boundary faces.
FvSolution run_gpme_fv(Family family, double c, const PdeTask& task, const FvOptions& opts,
                       const std::vector<double>& record_times);

/// FV solution linearly resampled to the task grid (boundary nodes take the
/// Dirichlet data).
SolutionField solve_gpme_fv(Family family, double c, const PdeTask& task, const FvOptions& opts = {});

/// Exact field for any family (the dataset generator).
SolutionField solve_exact(Family family, double c, const PdeTask& task);

/// Dirichlet values (left, right) at time t.
std::pair<double, double> boundary_values(Family family, double c, double t);

std::vector<double> sample_task_params(const PdeTask& task, Split split, std::size_t n, std::uint64_t seed);

/// Total mass b(t) of the true solution over the task domain.
double mass_target(const PdeTask& task, double c, double t);

struct Dataset {
    Tensor inputs;   // [N, nt, nx, 3]: parameter field, x, t
    Tensor targets;  // [N, nt, nx]
    std::vector<double> params;
    Split split = Split::Train;
    std::uint64_t seed = 0;

    std::size_t size() const { return params.size(); }
};

Dataset build_dataset(const PdeTask& task, Split split, std::size_t n, std::uint64_t seed);

/// Deterministic hold-out: a seeded permutation moves `fraction` of the samples
/// into a validation set. Returns (train, val).
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed);

/// Subset of samples by index, preserving order.
Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

/// `dir/<split>/{inputs.bin, targets.bin, manifest.json}`.
void save_dataset(const std::filesystem::path& dir, const PdeTask& task, const Dataset& data);
std::pair<PdeTask, Dataset> load_dataset(const std::filesystem::path& split_dir);

}  // namespace oodno::pde
