#include "oodno/pde.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "oodno/rng.hpp"
#include "oodno/tensor_io.hpp"

namespace oodno::pde {

namespace {

constexpr std::pair<Family, const char*> kFamilyNames[] = {
    {Family::Heat, "heat"}, {Family::PME, "pme"}, {Family::Stefan, "stefan"}, {Family::Advection, "advection"}};
constexpr std::pair<Split, const char*> kSplitNames[] = {{Split::Train, "train"},
                                                         {Split::Val, "val"},
                                                         {Split::OodSmall, "ood_small"},
                                                         {Split::OodMedium, "ood_medium"},
                                                         {Split::OodLarge, "ood_large"}};

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + " must be positive, got " + std::to_string(v));
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    if (n > 1) v.back() = hi;
    return v;
}

template <class F>
SolutionField tabulate(const PdeTask& task, double param, F&& f) {
    SolutionField s;
    s.param = param;
    const auto xs = task.grid_x();
    const auto ts = task.grid_t();
    s.grid_x = Tensor({task.nx}, xs);
    s.grid_t = Tensor({task.nt}, ts);
    s.values = Tensor({task.nt, task.nx});
    for (std::size_t j = 0; j < task.nt; ++j)
        for (std::size_t l = 0; l < task.nx; ++l) s.values[j * task.nx + l] = f(xs[l], ts[j]);
    return s;
}

void check_param(Family family, double c) {
    switch (family) {
        case Family::Heat: require_positive(c, "heat conductivity k"); break;
        case Family::Advection: require_positive(c, "advection speed beta"); break;
        case Family::PME:
            if (!(c >= 1.0)) throw std::invalid_argument("PME degree m must be >= 1, got " + std::to_string(c));
            break;
        case Family::Stefan:
            if (!(c > 0.0 && c < 1.0)) {
                throw std::invalid_argument("Stefan threshold u* must lie in (0, 1), got " + std::to_string(c));
            }
            break;
    }
}

}  // namespace

std::string to_string(Family f) {
    for (auto [k, v] : kFamilyNames)
        if (k == f) return v;
    return "unknown";
}

std::string to_string(Split s) {
    for (auto [k, v] : kSplitNames)
        if (k == s) return v;
    return "unknown";
}

Family family_from_string(const std::string& s) {
    for (auto [k, v] : kFamilyNames)
        if (s == v) return k;
    throw std::invalid_argument("unknown task family '" + s + "' (expected heat, pme, stefan or advection)");
}

Split split_from_string(const std::string& s) {
    for (auto [k, v] : kSplitNames)
        if (s == v) return k;
    throw std::invalid_argument("unknown split '" + s + "' (expected train, val, ood_small, ood_medium or ood_large)");
}

PdeTask PdeTask::standard(Family family, std::size_t nt, std::size_t nx) {
    PdeTask t;
    t.family = family;
    t.nt = nt;
    t.nx = nx;
    switch (family) {
        case Family::Heat:
            t.x_hi = 2.0 * std::numbers::pi;
            t.train = {1.0, 5.0};
            t.ood = {{Split::OodSmall, {5.0, 6.0}}, {Split::OodMedium, {6.0, 7.0}}, {Split::OodLarge, {7.0, 8.0}}};
            break;
        case Family::PME:
            t.train = {2.0, 3.0};
            t.ood = {{Split::OodSmall, {1.0, 2.0}}, {Split::OodMedium, {4.0, 5.0}}, {Split::OodLarge, {5.0, 6.0}}};
            break;
        case Family::Stefan:
            t.final_time = 0.1;
            t.train = {0.6, 0.65};
            t.ood = {{Split::OodSmall, {0.55, 0.6}},
                     {Split::OodMedium, {0.7, 0.75}},
                     {Split::OodLarge, {0.5, 0.55}}};
            break;
        case Family::Advection:
            t.train = {1.0, 2.0};
            t.ood = {{Split::OodSmall, {0.5, 1.0}}, {Split::OodMedium, {2.5, 3.0}}, {Split::OodLarge, {3.0, 3.5}}};
            break;
    }
    return t;
}

Range PdeTask::range(Split split) const {
    if (split == Split::Train || split == Split::Val) return train;
    auto it = ood.find(split);
    if (it == ood.end()) throw std::invalid_argument("split " + pde::to_string(split) + " not defined for task");
    return it->second;
}

std::vector<double> PdeTask::grid_x() const { return linspace(x_lo, x_hi, nx); }
std::vector<double> PdeTask::grid_t() const { return linspace(0.0, final_time, nt); }

nlohmann::ordered_json PdeTask::to_json() const {
    nlohmann::ordered_json ranges;
    ranges["train"] = {train.lo, train.hi};
    for (const auto& [s, r] : ood) ranges[pde::to_string(s)] = {r.lo, r.hi};
    return {{"family", pde::to_string(family)},
            {"grid", {{"nt", nt}, {"nx", nx}, {"x_lo", x_lo}, {"x_hi", x_hi}, {"final_time", final_time}}},
            {"ranges", ranges}};
}

double heat_exact(double k, double x, double t) { return std::exp(-k * t) * std::sin(x); }

double advection_exact(double beta, double x, double t) { return x <= 0.5 + beta * t ? 1.0 : 0.0; }

double pme_exact(double m, double x, double t) {
    const double s = m * (t - x);
    return s > 0.0 ? std::pow(s, 1.0 / m) : 0.0;
}

SolutionField solve_heat(double k, const PdeTask& task) {
    require_positive(k, "heat conductivity k");
    return tabulate(task, k, [k](double x, double t) { return heat_exact(k, x, t); });
}

SolutionField solve_advection(double beta, const PdeTask& task) {
    require_positive(beta, "advection speed beta");
    return tabulate(task, beta, [beta](double x, double t) { return advection_exact(beta, x, t); });
}

SolutionField solve_pme_exact(double m, const PdeTask& task) {
    check_param(Family::PME, m);
    return tabulate(task, m, [m](double x, double t) { return pme_exact(m, x, t); });
}

StefanSimilarity StefanSimilarity::solve(double u_star) {
    check_param(Family::Stefan, u_star);
    // Front condition u(x*) = u* gives beta = (1 - u*) / erf(alpha); the flux
    // balance -u_x = u* dx*/dt at the front gives
    //   u* alpha = (1 - u*) exp(-alpha^2) / (sqrt(pi) erf(alpha)).
    auto g = [u_star](double a) {
        return u_star * a - (1.0 - u_star) * std::exp(-a * a) / (std::sqrt(std::numbers::pi) * std::erf(a));
    };
    double lo = 1e-12, hi = 1.0;
    while (g(hi) < 0.0) hi *= 2.0;
    for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    StefanSimilarity s;
    s.u_star = u_star;
    s.alpha = 0.5 * (lo + hi);
    s.beta = (1.0 - u_star) / std::erf(s.alpha);
    return s;
}

double StefanSimilarity::value(double x, double t) const {
    if (t <= 0.0) return x <= 0.0 ? 1.0 : 0.0;
    if (x >= front(t)) return 0.0;
    return 1.0 - beta * std::erf(x / (2.0 * std::sqrt(t)));
}

double StefanSimilarity::mass(double t) const {
    if (t <= 0.0) return 0.0;
    const double a = front(t);
    const double s = 2.0 * std::sqrt(t);
    const double erf_integral = a * std::erf(a / s) + s / std::sqrt(std::numbers::pi) * (std::exp(-a * a / (s * s)) - 1.0);
    return a - beta * erf_integral;
}

SolutionField solve_stefan_exact(double u_star, const PdeTask& task) {
    const auto sim = StefanSimilarity::solve(u_star);
    return tabulate(task, u_star, [&sim](double x, double t) {
        if (x <= 0.0) return 1.0;
        return sim.value(x, t);
    });
}

SolutionField solve_exact(Family family, double c, const PdeTask& task) {
    switch (family) {
        case Family::Heat: return solve_heat(c, task);
        case Family::Advection: return solve_advection(c, task);
        case Family::PME: return solve_pme_exact(c, task);
        case Family::Stefan: return solve_stefan_exact(c, task);
    }
    throw std::logic_error("unhandled family");
}

std::pair<double, double> boundary_values(Family family, double c, double t) {
    switch (family) {
        case Family::Heat: return {0.0, 0.0};
        case Family::Advection: return {1.0, 0.0};
        case Family::PME: return {t > 0.0 ? std::pow(c * t, 1.0 / c) : 0.0, 0.0};
        case Family::Stefan: return {1.0, 0.0};
    }
    throw std::logic_error("unhandled family");
}

namespace {

// Kirchhoff potential K(u) = integral of k and its (generalized) derivative.
struct Diffusivity {
    Family family;
    double c;

    double potential(double u) const {
        switch (family) {
            case Family::Heat: return c * u;
            case Family::PME: {
                const double v = std::max(u, 0.0);
                return std::pow(v, c + 1.0) / (c + 1.0);
            }
            case Family::Stefan: return std::max(u - c, 0.0);
            default: throw std::invalid_argument("finite-volume solver supports heat, PME and Stefan only");
        }
    }

    double slope(double u) const {
        switch (family) {
            case Family::Heat: return c;
            case Family::PME: return u > 0.0 ? std::pow(u, c) : 0.0;
            case Family::Stefan: return u >= c ? 1.0 : 0.0;
            default: return 0.0;
        }
    }
};

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

// Solves a tridiagonal system in place (Thomas algorithm); the rhs becomes the solution.
void thomas(std::vector<double> lower, std::vector<double> diag, std::vector<double> upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

class FvStepper {
public:
    FvStepper(Diffusivity k, std::size_t cells, double h, const FvOptions& opts)
        : k_(k), n_(cells), h_(h), opts_(opts), kv_(cells), res_(cells) {}

    // Interface fluxes F_{i-1/2}, i = 0..n, for state u and boundary data.
    std::vector<double> fluxes(const std::vector<double>& u, double gl, double gr) const {
        std::vector<double> f(n_ + 1);
        for (std::size_t i = 0; i < n_; ++i) kv_[i] = k_.potential(u[i]);
        f[0] = -(kv_[0] - k_.potential(gl)) / (0.5 * h_);
        for (std::size_t i = 1; i < n_; ++i) f[i] = -(kv_[i] - kv_[i - 1]) / h_;
        f[n_] = -(k_.potential(gr) - kv_[n_ - 1]) / (0.5 * h_);
        return f;
    }

    double residual(const std::vector<double>& u, const std::vector<double>& u_old, double dt, double gl, double gr) {
        const auto f = fluxes(u, gl, gr);
        for (std::size_t i = 0; i < n_; ++i) res_[i] = u[i] - u_old[i] + dt / h_ * (f[i + 1] - f[i]);
        return max_abs(res_);
    }

    // Backward-Euler step from u (updated in place). Returns Newton iterations.
    std::size_t step(std::vector<double>& u, double dt, double gl, double gr) {
        const std::vector<double> u_old = u;
        std::vector<double> trace;
        double norm = residual(u, u_old, dt, gl, gr);
        trace.push_back(norm);
        const double r = dt / (h_ * h_);
        std::vector<double> lower(n_), diag(n_), upper(n_), trial(n_);
        for (std::size_t it = 0; it < opts_.max_newton; ++it) {
            if (norm < opts_.newton_tol) return it;
            for (std::size_t i = 0; i < n_; ++i) {
                const double s = k_.slope(u[i]);
                const double edge = (i == 0 ? 1.0 : 0.0) + (i + 1 == n_ ? 1.0 : 0.0);
                diag[i] = 1.0 + r * (2.0 + edge) * s;
                if (i + 1 < n_) lower[i + 1] = -r * s;
                if (i > 0) upper[i - 1] = -r * s;
            }
            std::vector<double> delta(res_.begin(), res_.end());
            thomas(lower, diag, upper, delta);
            double step_len = 1.0;
            double trial_norm = norm;
            for (int ls = 0; ls < 30; ++ls) {
                for (std::size_t i = 0; i < n_; ++i) trial[i] = u[i] - step_len * delta[i];
                trial_norm = residual(trial, u_old, dt, gl, gr);
                if (trial_norm < (1.0 - 1e-4 * step_len) * norm || trial_norm < opts_.newton_tol) break;
                step_len *= 0.5;
            }
            u = trial;
            norm = residual(u, u_old, dt, gl, gr);
            trace.push_back(norm);
        }
        if (norm < opts_.newton_tol) return opts_.max_newton;
        throw SolverError("Newton iteration did not converge (residual " + std::to_string(norm) + " after " +
                              std::to_string(opts_.max_newton) + " iterations)",
                          std::move(trace));
    }

private:
    Diffusivity k_;
    std::size_t n_;
    double h_;
    FvOptions opts_;
    mutable std::vector<double> kv_;
    std::vector<double> res_;
};

}  // namespace

FvSolution run_gpme_fv(Family family, double c, const PdeTask& task, const FvOptions& opts,
                       const std::vector<double>& record_times) {
    if (family != Family::PME && family != Family::Stefan && family != Family::Heat) {
        throw std::invalid_argument("finite-volume solver supports heat, PME and Stefan only");
    }
    check_param(family, c);
    if (opts.cells < 2 || opts.min_steps < 1) throw std::invalid_argument("finite-volume grid too small");
    for (std::size_t i = 0; i < record_times.size(); ++i) {
        const double t = record_times[i];
        if (t < 0.0 || t > task.final_time + 1e-12 || (i > 0 && t < record_times[i - 1])) {
            throw std::invalid_argument("record times must be sorted within [0, T]");
        }
    }
    const std::size_t n = opts.cells;
    const double h = (task.x_hi - task.x_lo) / static_cast<double>(n);
    FvSolution sol;
    sol.centers.resize(n);
    for (std::size_t i = 0; i < n; ++i) sol.centers[i] = task.x_lo + (static_cast<double>(i) + 0.5) * h;
    sol.record_times = record_times;
    sol.cell_values = Tensor({record_times.size(), n});

    std::vector<double> u(n, 0.0);
    if (family == Family::Heat) {
        for (std::size_t i = 0; i < n; ++i) u[i] = std::sin(sol.centers[i]);
    }
    sol.initial_mass = std::accumulate(u.begin(), u.end(), 0.0) * h;

    FvStepper stepper({family, c}, n, h, opts);
    const double dt_max = task.final_time / static_cast<double>(opts.min_steps);
    double t = 0.0;
    double mass = sol.initial_mass;
    for (std::size_t r = 0; r < record_times.size(); ++r) {
        const double target = record_times[r];
        const double span = target - t;
        if (span > 0.0) {
            const auto substeps = static_cast<std::size_t>(std::ceil(span / dt_max - 1e-9));
            const double dt = span / static_cast<double>(substeps);
            for (std::size_t s = 0; s < substeps; ++s) {
                const double t_next = s + 1 == substeps ? target : t + dt;
                const auto [gl, gr] = boundary_values(family, c, t_next);
                FvStepRecord rec;
                rec.newton_iterations = stepper.step(u, dt, gl, gr);
                const auto f = stepper.fluxes(u, gl, gr);
                rec.boundary_flux = dt * (f.front() - f.back());
                rec.time = t_next;
                mass = std::accumulate(u.begin(), u.end(), 0.0) * h;
                rec.mass = mass;
                sol.steps.push_back(rec);
                t = t_next;
            }
        }
        std::copy(u.begin(), u.end(), sol.cell_values.data().begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    return sol;
}

SolutionField solve_gpme_fv(Family family, double c, const PdeTask& task, const FvOptions& opts) {
    const auto ts = task.grid_t();
    const auto xs = task.grid_x();
    const FvSolution fv = run_gpme_fv(family, c, task, opts, ts);
    const std::size_t n = opts.cells;
    SolutionField s;
    s.param = c;
    s.grid_x = Tensor({task.nx}, xs);
    s.grid_t = Tensor({task.nt}, ts);
    s.values = Tensor({task.nt, task.nx});
    for (std::size_t j = 0; j < task.nt; ++j) {
        const auto [gl, gr] = boundary_values(family, c, ts[j]);
        const double* row = fv.cell_values.data().data() + j * n;
        // Node values: boundary data at the ends, linear interpolation between
        // cell centers (and the boundary points) inside.
        for (std::size_t l = 0; l < task.nx; ++l) {
            double v;
            const double x = xs[l];
            if (l == 0) {
                v = gl;
            } else if (l + 1 == task.nx) {
                v = gr;
            } else if (x <= fv.centers.front()) {
                const double w = (x - task.x_lo) / (fv.centers.front() - task.x_lo);
                v = gl + w * (row[0] - gl);
            } else if (x >= fv.centers.back()) {
                const double w = (x - fv.centers.back()) / (task.x_hi - fv.centers.back());
                v = row[n - 1] + w * (gr - row[n - 1]);
            } else {
                const double pos = (x - fv.centers.front()) / (fv.centers[1] - fv.centers[0]);
                const auto i = std::min(static_cast<std::size_t>(pos), n - 2);
                const double w = pos - static_cast<double>(i);
                v = row[i] + w * (row[i + 1] - row[i]);
            }
            s.values[j * task.nx + l] = v;
        }
    }
    return s;
}

std::vector<double> sample_task_params(const PdeTask& task, Split split, std::size_t n, std::uint64_t seed) {
    const Range r = task.range(split);
    Rng rng(derive_seed(seed, 0x7a5c00 + static_cast<std::uint64_t>(split)));
    std::vector<double> out(n);
    for (double& v : out) v = rng.uniform(r.lo, r.hi);
    return out;
}

double mass_target(const PdeTask& task, double c, double t) {
    if (t < 0.0 || t > task.final_time + 1e-12) throw std::invalid_argument("mass target time outside [0, T]");
    switch (task.family) {
        case Family::Heat: return 0.0;
        case Family::Advection: return std::min(0.5 + c * t, 1.0) - task.x_lo;
        case Family::PME: {
            // Closed-form integral, valid while the front m t stays inside the domain.
            const double front = std::min(t, task.x_hi);
            if (front <= 0.0) return 0.0;
            const double m = c;
            return std::pow(m, 1.0 / m) * (m / (m + 1.0)) *
                   (std::pow(t, (m + 1.0) / m) - std::pow(std::max(t - task.x_hi, 0.0), (m + 1.0) / m));
        }
        case Family::Stefan: return StefanSimilarity::solve(c).mass(t);
    }
    throw std::logic_error("unhandled family");
}

Dataset build_dataset(const PdeTask& task, Split split, std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.split = split;
    d.seed = seed;
    d.params = sample_task_params(task, split, n, seed);
    const std::size_t nt = task.nt, nx = task.nx;
    d.inputs = Tensor({n, nt, nx, 3});
    d.targets = Tensor({n, nt, nx});
    const auto xs = task.grid_x();
    const auto ts = task.grid_t();
    for (std::size_t i = 0; i < n; ++i) {
        const SolutionField f = solve_exact(task.family, d.params[i], task);
        std::copy(f.values.data().begin(), f.values.data().end(),
                  d.targets.data().begin() + static_cast<std::ptrdiff_t>(i * nt * nx));
        for (std::size_t j = 0; j < nt; ++j) {
            for (std::size_t l = 0; l < nx; ++l) {
                double* p = d.inputs.data().data() + ((i * nt + j) * nx + l) * 3;
                p[0] = d.params[i];
                p[1] = xs[l];
                p[2] = ts[j];
            }
        }
    }
    return d;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
    Dataset d;
    d.split = data.split;
    d.seed = data.seed;
    const std::size_t n = indices.size();
    const std::size_t in_stride = data.size() ? data.inputs.numel() / data.size() : 0;
    const std::size_t out_stride = data.size() ? data.targets.numel() / data.size() : 0;
    Shape in_shape = data.inputs.shape();
    Shape out_shape = data.targets.shape();
    in_shape[0] = n;
    out_shape[0] = n;
    d.inputs = Tensor(in_shape);
    d.targets = Tensor(out_shape);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = indices[k];
        if (i >= data.size()) throw std::out_of_range("dataset index out of range");
        d.params.push_back(data.params[i]);
        std::copy_n(data.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * in_stride), in_stride,
                    d.inputs.data().begin() + static_cast<std::ptrdiff_t>(k * in_stride));
        std::copy_n(data.targets.data().begin() + static_cast<std::ptrdiff_t>(i * out_stride), out_stride,
                    d.targets.data().begin() + static_cast<std::ptrdiff_t>(k * out_stride));
    }
    return d;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction >= 1.0) throw std::invalid_argument("validation fraction must lie in [0, 1)");
    const std::size_t n = data.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, 0x5917));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> val(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_val), perm.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    Dataset tr = subset(data, train);
    Dataset va = subset(data, val);
    va.split = Split::Val;
    return {std::move(tr), std::move(va)};
}

void save_dataset(const std::filesystem::path& dir, const PdeTask& task, const Dataset& data) {
    const auto split_dir = dir / pde::to_string(data.split);
    std::filesystem::create_directories(split_dir);
    io::write_tensor(split_dir / "inputs.bin", data.inputs, "inputs", "dataset_inputs");
    io::write_tensor(split_dir / "targets.bin", data.targets, "targets", "dataset_targets");
    nlohmann::ordered_json m = task.to_json();
    m["split"] = pde::to_string(data.split);
    m["seed"] = data.seed;
    m["n"] = data.size();
    m["params"] = data.params;
    std::ofstream out(split_dir / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed to write dataset manifest in " + split_dir.string());
}

std::pair<PdeTask, Dataset> load_dataset(const std::filesystem::path& split_dir) {
    const auto manifest_path = split_dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("missing dataset manifest " + manifest_path.string());
    const auto m = nlohmann::json::parse(in);
    const auto& g = m.at("grid");
    PdeTask task = PdeTask::standard(family_from_string(m.at("family")), g.at("nt"), g.at("nx"));
    task.x_lo = g.at("x_lo");
    task.x_hi = g.at("x_hi");
    task.final_time = g.at("final_time");
    Dataset d;
    d.split = split_from_string(m.at("split"));
    d.seed = m.at("seed");
    d.params = m.at("params").get<std::vector<double>>();
    d.inputs = io::read_tensor(split_dir / "inputs.bin");
    d.targets = io::read_tensor(split_dir / "targets.bin");
    if (d.inputs.rank() != 4 || d.targets.rank() != 3 || d.inputs.dim(0) != d.params.size() ||
        d.targets.dim(0) != d.params.size()) {
        throw std::runtime_error("dataset in " + split_dir.string() + " has inconsistent shapes");
    }
    return {task, d};
}

}  // namespace oodno::pde
