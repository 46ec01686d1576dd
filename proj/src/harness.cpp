#include "oodno/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "oodno/tensor_io.hpp"

namespace oodno::harness {

namespace {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h) {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_bytes(const std::string& s) {
    return hex64(fnv1a(reinterpret_cast<const unsigned char*>(s.data()), s.size(), 0xcbf29ce484222325ull));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6e", v);
    return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

Tensor channel_first(const pde::Dataset& d) { return fno::to_channel_first(d.inputs, 0, d.size()); }

}  // namespace

std::string content_hash(std::span<const double> data, std::uint64_t seed) {
    return hex64(fnv1a(reinterpret_cast<const unsigned char*>(data.data()), data.size() * sizeof(double), seed));
}

// ---- config -----------------------------------------------------------------

nlohmann::ordered_json ExperimentConfig::to_json() const {
    nlohmann::ordered_json j;
    j["task"] = pde::to_string(task);
    j["methods"] = nlohmann::ordered_json::array();
    for (auto m : methods) j["methods"].push_back(uq::to_string(m));
    j["seeds"] = seeds;
    j["splits"] = nlohmann::ordered_json::array();
    for (auto s : splits) j["splits"].push_back(pde::to_string(s));
    j["nt"] = nt;
    j["nx"] = nx;
    j["n_train"] = n_train;
    j["val_fraction"] = val_fraction;
    j["n_test"] = n_test;
    j["n_ood_unlabeled"] = n_ood_unlabeled;
    j["data_seed"] = data_seed;
    j["model"] = model.to_json();
    j["train"] = train.to_json();
    j["ensemble_size"] = ensemble_size;
    j["n_heads"] = n_heads;
    j["lambda_grid"] = lambda_grid;
    j["dropout_grid"] = dropout_grid;
    j["n_masks"] = n_masks;
    j["laplace_alphas"] = laplace_alphas;
    j["select_on_first_seed"] = select_on_first_seed;
    j["workers"] = workers;
    j["save_models"] = save_models;
    j["out_dir"] = out_dir.string();
    j["data_dir"] = data_dir.string();
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    if (j.contains("task")) c.task = pde::family_from_string(j.at("task"));
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& m : j.at("methods")) c.methods.push_back(uq::method_from_string(m));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("splits")) {
        c.splits.clear();
        for (const auto& s : j.at("splits")) c.splits.push_back(pde::split_from_string(s));
    }
    c.nt = j.value("nt", c.nt);
    c.nx = j.value("nx", c.nx);
    c.n_train = j.value("n_train", c.n_train);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.n_test = j.value("n_test", c.n_test);
    c.n_ood_unlabeled = j.value("n_ood_unlabeled", c.n_ood_unlabeled);
    c.data_seed = j.value("data_seed", c.data_seed);
    if (j.contains("model")) c.model = fno::FnoConfig::from_json(j.at("model"));
    if (j.contains("train")) c.train = train::TrainConfig::from_json(j.at("train"));
    c.ensemble_size = j.value("ensemble_size", c.ensemble_size);
    c.n_heads = j.value("n_heads", c.n_heads);
    if (j.contains("lambda_grid")) c.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
    if (j.contains("dropout_grid")) c.dropout_grid = j.at("dropout_grid").get<std::vector<double>>();
    c.n_masks = j.value("n_masks", c.n_masks);
    if (j.contains("laplace_alphas")) c.laplace_alphas = j.at("laplace_alphas").get<std::vector<double>>();
    c.select_on_first_seed = j.value("select_on_first_seed", c.select_on_first_seed);
    c.workers = j.value("workers", c.workers);
    c.save_models = j.value("save_models", c.save_models);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("data_dir")) c.data_dir = j.at("data_dir").get<std::string>();
    return c;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw std::invalid_argument("experiment needs at least one seed");
    if (methods.empty()) throw std::invalid_argument("experiment needs at least one method");
    if (splits.empty()) throw std::invalid_argument("experiment needs at least one evaluation split");
    if (n_train < 2) throw std::invalid_argument("experiment needs at least two training samples");
    model.resolved(nt, nx).validate(nt, nx);
    for (auto m : methods) {
        if (m == uq::Method::Ensemble && ensemble_size < 2) throw std::invalid_argument("ensemble size must be >= 2");
        if (m == uq::Method::Diverse && (n_heads < 2 || lambda_grid.empty())) {
            throw std::invalid_argument("diverse method needs >= 2 heads and a nonempty lambda grid");
        }
        if (m == uq::Method::McDropout) {
            if (dropout_grid.empty()) throw std::invalid_argument("MC dropout needs a nonempty dropout grid");
            for (double p : dropout_grid)
                if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("dropout probabilities must lie in (0, 1)");
        }
        if (m == uq::Method::Bayesian && laplace_alphas.empty()) throw std::invalid_argument("Laplace needs alphas");
    }
}

std::string ExperimentConfig::hash() const {
    auto j = to_json();
    j.erase("workers");
    j.erase("save_models");
    j.erase("out_dir");
    return hash_bytes(j.dump());
}

// ---- data -------------------------------------------------------------------

pde::Dataset split_dataset(const ExperimentConfig& cfg, pde::Split split) {
    const std::size_t n = split == pde::Split::Train ? cfg.n_train : cfg.n_test;
    if (cfg.data_dir.empty()) return pde::build_dataset(pde::PdeTask::standard(cfg.task, cfg.nt, cfg.nx), split, n, cfg.data_seed);
    const auto dir = cfg.data_dir / pde::to_string(cfg.task) / pde::to_string(split);
    if (!std::filesystem::exists(dir / "manifest.json")) {
        throw std::runtime_error("missing dataset " + (dir / "manifest.json").string());
    }
    auto [task, data] = pde::load_dataset(dir);
    if (task.nt != cfg.nt || task.nx != cfg.nx || data.size() != n || data.seed != cfg.data_seed) {
        throw std::runtime_error("dataset " + dir.string() + " does not match the experiment grid, size or seed");
    }
    return data;
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    d.task = pde::PdeTask::standard(cfg.task, cfg.nt, cfg.nx);
    const pde::Dataset all = split_dataset(cfg, pde::Split::Train);
    std::tie(d.train, d.val) = pde::split_validation(all, cfg.val_fraction, cfg.data_seed);
    for (auto s : cfg.splits) d.test[s] = split_dataset(cfg, s);
    // Unlabeled OOD parameter fields for the output-diversity variant, drawn
    // from the first evaluation split with an independent stream.
    d.ood_unlabeled = pde::build_dataset(d.task, cfg.splits.front(), cfg.n_ood_unlabeled, derive_seed(cfg.data_seed, 77));

    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](const Tensor& t) {
        h = fnv1a(reinterpret_cast<const unsigned char*>(t.data().data()), t.data().size() * sizeof(double), h);
    };
    mix(d.train.inputs);
    mix(d.train.targets);
    mix(d.val.inputs);
    mix(d.val.targets);
    for (const auto& [s, t] : d.test) {
        mix(t.inputs);
        mix(t.targets);
    }
    d.content_hash = hex64(h);
    return d;
}

// ---- training ---------------------------------------------------------------

std::uint64_t member_seed(std::uint64_t seed, std::size_t k) { return derive_seed(seed, 1000 + k); }

namespace {

train::Checkpoint train_model(const ExperimentConfig& cfg, const fno::FnoConfig& model, train::TrainConfig tc,
                              std::uint64_t run_seed, const ExperimentData& data) {
    tc.seed = run_seed;
    const auto init = fno::FnoParams::init(model.resolved(cfg.nt, cfg.nx), derive_seed(run_seed, 1));
    return train::train(init, data.train, data.val, tc, &data.ood_unlabeled);
}

fno::FnoConfig single_head(const ExperimentConfig& cfg) {
    fno::FnoConfig c = cfg.model;
    c.n_heads = 1;
    c.dropout_p = 0.0;
    return c;
}

train::Checkpoint member(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t k, const ExperimentData& data,
                         std::map<std::string, train::Checkpoint>* cache) {
    const std::string key = "member" + std::to_string(k);
    if (cache) {
        auto it = cache->find(key);
        if (it != cache->end()) return it->second;
    }
    train::TrainConfig tc = cfg.train;
    tc.loss = train::LossKind::RelL2;
    auto ck = train_model(cfg, single_head(cfg), tc, member_seed(seed, k), data);
    if (cache) cache->emplace(key, ck);
    return ck;
}

void keep(TrainedMethod& t, train::Checkpoint ck) {
    t.models.push_back(ck.params);
    t.checkpoints.push_back(std::move(ck));
}

}  // namespace

TrainedMethod train_method(const ExperimentConfig& cfg, uq::Method method, std::uint64_t seed, const ExperimentData& data,
                           Selection& selection, std::map<std::string, train::Checkpoint>* cache) {
    TrainedMethod t;
    t.method = method;
    t.seed = seed;
    const train::BatchSource tr = train::BatchSource::from(data.train);
    const train::BatchSource va = train::BatchSource::from(data.val);
    switch (method) {
        case uq::Method::Fno: keep(t, member(cfg, seed, 0, data, cache)); break;
        case uq::Method::Ensemble:
            for (std::size_t k = 0; k < cfg.ensemble_size; ++k) keep(t, member(cfg, seed, k, data, cache));
            t.meta["K"] = cfg.ensemble_size;
            break;
        case uq::Method::Bayesian: {
            keep(t, member(cfg, seed, 0, data, cache));
            t.laplace = uq::laplace_select(t.models.front(), tr, va, cfg.laplace_alphas);
            t.meta["alpha"] = t.laplace->alpha;
            break;
        }
        case uq::Method::Diverse: {
            fno::FnoConfig mc = single_head(cfg);
            mc.n_heads = cfg.n_heads;
            train::TrainConfig tc = cfg.train;
            tc.loss = train::LossKind::DiverseRelL2;
            const std::uint64_t run_seed = derive_seed(seed, 2000);
            std::vector<double> grid = cfg.lambda_grid;
            if (selection.lambda && cfg.select_on_first_seed) grid = {*selection.lambda};
            std::vector<double> mses;
            std::vector<train::Checkpoint> models;
            for (double lam : grid) {
                tc.lambda_diverse = lam;
                models.push_back(train_model(cfg, mc, tc, run_seed, data));
                mses.push_back(models.back().val_mse);
            }
            std::vector<double> distances;
            for (const auto& m : models) distances.push_back(mean_head_distance(m.params));
            t.lambda = train::select_lambda(grid, mses);
            const auto idx = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), t.lambda) - grid.begin());
            keep(t, std::move(models[idx]));
            if (cfg.select_on_first_seed && !selection.lambda) selection.lambda = t.lambda;
            t.meta["lambda"] = t.lambda;
            t.meta["M"] = cfg.n_heads;
            t.meta["lambda_val_mse"] = mses;
            t.meta["lambda_grid"] = grid;
            t.meta["lambda_head_distance"] = distances;
            break;
        }
        case uq::Method::Variance: {
            fno::FnoConfig mc = single_head(cfg);
            mc.n_heads = 2;
            train::TrainConfig tc = cfg.train;
            tc.loss = train::LossKind::NLL;
            keep(t, train_model(cfg, mc, tc, derive_seed(seed, 3000), data));
            break;
        }
        case uq::Method::McDropout: {
            std::vector<double> grid = cfg.dropout_grid;
            if (selection.dropout_p && cfg.select_on_first_seed) grid = {*selection.dropout_p};
            train::TrainConfig tc = cfg.train;
            tc.loss = train::LossKind::RelL2;
            double best_mse = std::numeric_limits<double>::infinity();
            std::vector<double> mses;
            for (double p : grid) {
                fno::FnoConfig mc = single_head(cfg);
                mc.dropout_p = p;
                auto ck = train_model(cfg, mc, tc, derive_seed(seed, 4000), data);
                mses.push_back(ck.val_mse);
                if (ck.val_mse < best_mse) {
                    best_mse = ck.val_mse;
                    t.models.assign(1, ck.params);
                    t.checkpoints.assign(1, ck);
                    t.dropout_p = p;
                }
            }
            if (t.models.empty()) throw std::runtime_error("MC dropout selection produced no finite validation MSE");
            if (cfg.select_on_first_seed && !selection.dropout_p) selection.dropout_p = t.dropout_p;
            t.meta["dropout_p"] = t.dropout_p;
            t.meta["dropout_val_mse"] = mses;
            break;
        }
    }
    return t;
}

uq::PosteriorSummary predict_method(const TrainedMethod& m, const Tensor& inputs, std::uint64_t seed, std::size_t n_masks) {
    uq::PosteriorSummary s;
    switch (m.method) {
        case uq::Method::Fno: {
            const Tensor heads = uq::predict_heads(m.models.front(), inputs);
            s.mean = heads.reshaped({heads.dim(0), heads.dim(2), heads.dim(3)});
            s.std = Tensor::zeros_like(s.mean);
            break;
        }
        case uq::Method::Ensemble: s = uq::ensemble_predict(m.models, inputs); break;
        case uq::Method::Diverse: s = uq::diverse_predict(m.models.front(), inputs); break;
        case uq::Method::Variance: s = uq::variance_predict(m.models.front(), inputs); break;
        case uq::Method::McDropout: s = uq::mc_dropout_predict(m.models.front(), inputs, n_masks, derive_seed(seed, 4002)); break;
        case uq::Method::Bayesian:
            if (!m.laplace) throw std::invalid_argument("Bayesian method has no fitted Laplace posterior");
            s = uq::laplace_predict(*m.laplace, m.models.front(), inputs);
            break;
    }
    s.method = m.method;
    for (const auto& [k, v] : m.meta.items()) s.meta[k] = v;
    s.meta["seed"] = seed;
    return s;
}

void save_trained(const std::filesystem::path& dir, const TrainedMethod& m) {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j{{"method", uq::to_string(m.method)}, {"seed", m.seed}, {"n_models", m.models.size()},
                             {"lambda", m.lambda}, {"dropout_p", m.dropout_p}, {"meta", m.meta}};
    for (std::size_t k = 0; k < m.models.size(); ++k) {
        train::Checkpoint ck;
        if (k < m.checkpoints.size()) ck = m.checkpoints[k];
        ck.params = m.models[k];
        ck.meta = {{"method", uq::to_string(m.method)}, {"seed", m.seed}, {"member", k}};
        train::save_checkpoint(dir / ("model" + std::to_string(k)), ck);
    }
    if (m.laplace) {
        const auto& lp = *m.laplace;
        j["laplace"] = {{"alpha", lp.alpha}, {"jittered", lp.jittered}};
        auto to_tensor = [](const Eigen::MatrixXd& a) {
            Tensor t({static_cast<std::size_t>(a.rows()), static_cast<std::size_t>(a.cols())});
            for (Eigen::Index r = 0; r < a.rows(); ++r)
                for (Eigen::Index c = 0; c < a.cols(); ++c) t[static_cast<std::size_t>(r * a.cols() + c)] = a(r, c);
            return t;
        };
        io::write_tensor(dir / "laplace_map.bin", to_tensor(lp.map_weights), "map_weights", "laplace");
        io::write_tensor(dir / "laplace_precision.bin", to_tensor(lp.precision), "precision", "laplace");
        io::write_tensor(dir / "laplace_covariance.bin", to_tensor(lp.covariance), "covariance", "laplace");
    }
    write_text(dir / "method.json", j.dump(2) + "\n");
}

TrainedMethod load_trained(const std::filesystem::path& dir) {
    std::ifstream in(dir / "method.json");
    if (!in) throw std::runtime_error("missing checkpoint " + (dir / "method.json").string());
    const auto j = nlohmann::json::parse(in);
    TrainedMethod m;
    m.method = uq::method_from_string(j.at("method"));
    m.seed = j.at("seed");
    m.lambda = j.value("lambda", 0.0);
    m.dropout_p = j.value("dropout_p", 0.0);
    if (j.contains("meta")) m.meta = j.at("meta");
    const std::size_t n = j.at("n_models");
    for (std::size_t k = 0; k < n; ++k) {
        auto ck = train::load_checkpoint(dir / ("model" + std::to_string(k)));
        m.models.push_back(ck.params);
        m.checkpoints.push_back(std::move(ck));
    }
    if (j.contains("laplace")) {
        auto to_matrix = [&](const char* name) {
            const auto path = dir / name;
            if (!std::filesystem::exists(path)) throw std::runtime_error("missing checkpoint " + path.string());
            const Tensor t = io::read_tensor(path);
            Eigen::MatrixXd a(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
            for (Eigen::Index r = 0; r < a.rows(); ++r)
                for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = t[static_cast<std::size_t>(r * a.cols() + c)];
            return a;
        };
        uq::LaplacePosterior lp;
        lp.alpha = j.at("laplace").at("alpha");
        lp.jittered = j.at("laplace").value("jittered", false);
        lp.map_weights = to_matrix("laplace_map.bin").col(0);
        lp.precision = to_matrix("laplace_precision.bin");
        lp.covariance = to_matrix("laplace_covariance.bin");
        m.laplace = std::move(lp);
    }
    return m;
}

std::vector<constraint::ConstraintSystem> constraints_for(const pde::PdeTask& task, const pde::Dataset& data) {
    std::vector<constraint::ConstraintSystem> out;
    out.reserve(data.size());
    for (double c : data.params) out.push_back(constraint::build_constraint(task, c));
    return out;
}

uq::PosteriorSummary apply_probconserv(const uq::PosteriorSummary& s, const std::vector<constraint::ConstraintSystem>& systems) {
    if (s.mean.rank() != 3 || systems.size() != s.mean.dim(0)) {
        throw std::invalid_argument("probconserv: need one constraint system per summary sample");
    }
    const std::size_t n = s.mean.dim(0), P = s.mean.dim(1) * s.mean.dim(2);
    uq::PosteriorSummary out = s;
    out.meta["probconserv"] = true;
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd mu(static_cast<Eigen::Index>(P)), var(static_cast<Eigen::Index>(P));
        for (std::size_t p = 0; p < P; ++p) {
            mu(static_cast<Eigen::Index>(p)) = s.mean[i * P + p];
            var(static_cast<Eigen::Index>(p)) = s.std[i * P + p] * s.std[i * P + p];
        }
        const auto u = constraint::probconserv_update(mu, var, systems[i]);
        for (std::size_t p = 0; p < P; ++p) {
            out.mean[i * P + p] = u.mean(static_cast<Eigen::Index>(p));
            out.std[i * P + p] = std::sqrt(u.variance(static_cast<Eigen::Index>(p)));
        }
    }
    return out;
}

// ---- experiment ---------------------------------------------------------------

nlohmann::ordered_json to_json(const ResultRow& r) {
    return {{"method", uq::to_string(r.method)},
            {"split", pde::to_string(r.split)},
            {"seed", r.seed},
            {"before", r.before.to_json()},
            {"after", r.after.to_json()},
            {"mse_ratio", r.mse_ratio},
            {"provenance", r.provenance}};
}

std::string Job::describe() const { return "seed " + std::to_string(seed) + " method " + uq::to_string(method); }

std::vector<Job> plan_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    std::vector<Job> jobs;
    for (auto s : cfg.seeds)
        for (auto m : cfg.methods) jobs.push_back({s, m});
    return jobs;
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

namespace {

std::vector<ResultRow> run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const ExperimentData& data,
                                Selection& selection, const std::map<pde::Split, std::vector<constraint::ConstraintSystem>>& cs) {
    std::map<std::string, train::Checkpoint> cache;
    std::vector<ResultRow> rows;
    for (auto method : cfg.methods) {
        const TrainedMethod tm = train_method(cfg, method, seed, data, selection, &cache);
        if (cfg.save_models) save_trained(cfg.out_dir / "models" / (uq::to_string(method) + "_seed" + std::to_string(seed)), tm);
        for (auto split : cfg.splits) {
            const auto& test = data.test.at(split);
            const Tensor inputs = channel_first(test);
            const auto summary = predict_method(tm, inputs, seed, cfg.n_masks);
            const auto corrected = apply_probconserv(summary, cs.at(split));
            ResultRow row;
            row.method = method;
            row.split = split;
            row.seed = seed;
            row.before = metrics::score(summary.mean, summary.std, test.targets, cs.at(split));
            row.after = metrics::score(corrected.mean, corrected.std, test.targets, cs.at(split));
            for (auto* r : {&row.before, &row.after}) {
                r->method = uq::to_string(method);
                r->task = pde::to_string(cfg.task);
                r->split = pde::to_string(split);
                r->seed = seed;
            }
            row.mse_ratio = row.after.mse > 0.0 ? row.before.mse / row.after.mse : 1.0;
            row.provenance = {{"seed", seed}, {"config_hash", cfg.hash()}, {"data_hash", data.content_hash}};
            row.provenance["meta"] = summary.meta;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, bool dry_run) {
    ExperimentResult res;
    res.plan = plan_experiment(cfg);
    nlohmann::ordered_json plan{{"config", cfg.to_json()}, {"config_hash", cfg.hash()}, {"jobs", nlohmann::ordered_json::array()}};
    for (const auto& j : res.plan) plan["jobs"].push_back({{"seed", j.seed}, {"method", uq::to_string(j.method)}});
    const auto plan_path = cfg.out_dir / "plan.json";
    write_text(plan_path, plan.dump(2) + "\n");
    res.files.push_back(plan_path);
    if (dry_run) return res;

    const ExperimentData data = prepare_data(cfg);
    std::map<pde::Split, std::vector<constraint::ConstraintSystem>> cs;
    for (const auto& [s, d] : data.test) cs[s] = constraints_for(data.task, d);

    Selection selection;
    std::vector<std::vector<ResultRow>> per_seed(cfg.seeds.size());
    std::size_t first = 0;
    if (cfg.select_on_first_seed) {
        per_seed[0] = run_seed(cfg, cfg.seeds[0], data, selection, cs);
        first = 1;
    }
    parallel_for(cfg.seeds.size() - first, cfg.workers, [&](std::size_t i) {
        Selection local = selection;
        per_seed[first + i] = run_seed(cfg, cfg.seeds[first + i], data, local, cs);
    });

    // Single writer, plan order.
    for (auto& rows : per_seed)
        for (auto& r : rows) res.rows.push_back(std::move(r));
    nlohmann::ordered_json all = nlohmann::ordered_json::array();
    for (const auto& r : res.rows) all.push_back(to_json(r));
    const auto rows_path = cfg.out_dir / "rows.json";
    write_text(rows_path, all.dump(2) + "\n");
    const auto report_path = cfg.out_dir / "report.csv";
    write_text(report_path, report_csv(res.rows));
    res.files.push_back(rows_path);
    res.files.push_back(report_path);
    return res;
}

ResultRow result_row_from_json(const nlohmann::json& j) {
    ResultRow r;
    r.method = uq::method_from_string(j.at("method"));
    r.split = pde::split_from_string(j.at("split"));
    r.seed = j.at("seed");
    r.before = metrics::MetricReport::from_json(j.at("before"));
    r.after = metrics::MetricReport::from_json(j.at("after"));
    r.mse_ratio = j.value("mse_ratio", 1.0);
    if (j.contains("provenance")) r.provenance = j.at("provenance");
    return r;
}

std::string report_csv_from_json(const std::vector<nlohmann::json>& rows) {
    std::vector<ResultRow> parsed;
    for (const auto& j : rows) parsed.push_back(result_row_from_json(j));
    return report_csv(parsed);
}

std::string report_csv(const std::vector<ResultRow>& rows) {
    using Getter = double (*)(const metrics::MetricReport&);
    const std::vector<std::pair<const char*, Getter>> cols{
        {"mse", [](const metrics::MetricReport& r) { return r.mse; }},
        {"nll", [](const metrics::MetricReport& r) { return r.nll; }},
        {"nmerci", [](const metrics::MetricReport& r) { return r.nmerci; }},
        {"rmsce", [](const metrics::MetricReport& r) { return r.rmsce; }},
        {"crps", [](const metrics::MetricReport& r) { return r.crps; }},
        {"ce", [](const metrics::MetricReport& r) { return r.conservation_error; }}};
    std::ostringstream out;
    out << "method,split,n_seeds";
    for (const char* phase : {"", "pc_"})
        for (const auto& c : cols) out << ',' << phase << c.first << "_mean," << phase << c.first << "_std";
    out << ",mse_ratio_mean,mse_ratio_std\n";

    std::vector<std::pair<uq::Method, pde::Split>> keys;
    for (const auto& r : rows) {
        const std::pair k{r.method, r.split};
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    for (const auto& [m, s] : keys) {
        std::vector<const ResultRow*> sel;
        for (const auto& r : rows)
            if (r.method == m && r.split == s) sel.push_back(&r);
        out << uq::to_string(m) << ',' << pde::to_string(s) << ',' << sel.size();
        for (int phase = 0; phase < 2; ++phase) {
            for (const auto& c : cols) {
                std::vector<double> v;
                for (const auto* r : sel) v.push_back(c.second(phase == 0 ? r->before : r->after));
                const auto [mu, sd] = mean_std(v);
                out << ',' << fmt(mu) << ',' << fmt(sd);
            }
        }
        std::vector<double> ratio;
        for (const auto* r : sel) ratio.push_back(r->mse_ratio);
        const auto [mu, sd] = mean_std(ratio);
        out << ',' << fmt(mu) << ',' << fmt(sd) << '\n';
    }
    return out.str();
}

// ---- diagnostics --------------------------------------------------------------

Tensor head_distance_matrix(const fno::FnoParams& model) {
    const std::size_t M = model.config.n_heads, H = model.config.hidden;
    const Tensor& w = model.head_weight.value();
    const Tensor& b = model.head_bias.value();
    Tensor d({M, M});
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < M; ++k) {
            double s = (b[m] - b[k]) * (b[m] - b[k]);
            for (std::size_t h = 0; h < H; ++h) s += (w[h * M + m] - w[h * M + k]) * (w[h * M + m] - w[h * M + k]);
            d[m * M + k] = std::sqrt(s);
        }
    return d;
}

double mean_head_distance(const fno::FnoParams& model) {
    const std::size_t M = model.config.n_heads;
    if (M < 2) throw std::invalid_argument("head distances need at least two heads");
    const Tensor d = head_distance_matrix(model);
    double s = 0.0;
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = m + 1; k < M; ++k) s += d[m * M + k];
    return s / static_cast<double>(M * (M - 1) / 2);
}

DiversityTables diversity_report(const std::vector<fno::FnoParams>& models) {
    DiversityTables t;
    if (models.size() >= 2) {
        for (const auto& m : models) t.magnitude_maps.push_back(uq::spectral_magnitude_map(m, 0));
        t.cov = uq::coefficient_of_variation(t.magnitude_maps);
    } else if (models.size() == 1 && models.front().config.n_heads >= 2) {
        t.head_distances = head_distance_matrix(models.front());
    } else {
        throw std::invalid_argument("diversity report needs at least two members or a multi-head model");
    }
    return t;
}

namespace {

std::string matrix_csv(const Tensor& t) {
    std::ostringstream out;
    const std::size_t rows = t.dim(0), cols = t.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << fmt(t[r * cols + c]);
        out << '\n';
    }
    return out.str();
}

}  // namespace

void write_diversity_report(const std::filesystem::path& dir, const std::vector<fno::FnoParams>& models) {
    diversity_report(models);  // validates the member count
    if (models.size() >= 2) {
        for (std::size_t l = 0; l < models.front().layers.size(); ++l) {
            std::vector<Tensor> maps;
            for (std::size_t k = 0; k < models.size(); ++k) {
                maps.push_back(uq::spectral_magnitude_map(models[k], l));
                write_text(dir / ("member" + std::to_string(k) + "_layer" + std::to_string(l) + ".csv"), matrix_csv(maps.back()));
            }
            write_text(dir / ("cov_layer" + std::to_string(l) + ".csv"), matrix_csv(uq::coefficient_of_variation(maps)));
        }
    }
    for (std::size_t k = 0; k < models.size(); ++k) {
        if (models[k].config.n_heads >= 2) {
            const std::string name = models.size() == 1 ? "head_distances.csv" : "head_distances_" + std::to_string(k) + ".csv";
            write_text(dir / name, matrix_csv(head_distance_matrix(models[k])));
        }
    }
}

// ---- ablation ---------------------------------------------------------------------

std::vector<AblationRow> ablate_diversity(const AblationConfig& cfg) {
    ExperimentConfig base = cfg.base;
    base.splits = {cfg.eval_split};
    base.validate();
    const ExperimentData data = prepare_data(base);
    const pde::Dataset& test = data.test.at(cfg.eval_split);
    const Tensor inputs = channel_first(test);

    struct Variant {
        train::DiversityKind kind;
        bool standardized;
        double lambda;
        std::uint64_t seed;
    };
    std::vector<Variant> variants;
    for (auto seed : base.seeds)
        for (auto kind : cfg.kinds)
            for (bool st : {false, true})
                for (double lam : cfg.lambdas) variants.push_back({kind, st, lam, seed});

    std::vector<AblationRow> rows(variants.size());
    std::map<std::uint64_t, fno::FnoParams> unregularized;
    std::mutex mu;
    auto fit = [&](const Variant& v) {
        fno::FnoConfig mc = base.model;
        mc.n_heads = base.n_heads;
        mc.dropout_p = 0.0;
        train::TrainConfig tc = base.train;
        tc.loss = train::LossKind::DiverseRelL2;
        tc.lambda_diverse = v.lambda;
        tc.diversity_kind = v.kind;
        tc.standardized = v.standardized;
        return train_model(base, mc, tc, derive_seed(v.seed, 2000), data).params;
    };
    // lambda = 0 is the same model for every kind; train it once per seed.
    for (auto seed : base.seeds) unregularized.emplace(seed, fit({train::DiversityKind::Weights, false, 0.0, seed}));
    parallel_for(variants.size(), base.workers, [&](std::size_t i) {
        const Variant& v = variants[i];
        fno::FnoParams model = v.lambda == 0.0 ? unregularized.at(v.seed) : fit(v);
        const auto s = uq::diverse_predict(model, inputs);
        std::vector<double> err(s.mean.numel());
        for (std::size_t p = 0; p < err.size(); ++p) err[p] = std::abs(s.mean[p] - test.targets[p]);
        AblationRow r{v.kind, v.standardized, v.lambda, v.seed, metrics::mse(s.mean.data(), test.targets.data()),
                      metrics::nmerci(err, s.std.data()).value, mean_head_distance(model)};
        std::lock_guard lock(mu);
        rows[i] = r;
    });
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "kind,standardized,lambda,seed,mse,nmerci,head_distance\n";
    for (const auto& r : rows) {
        out << train::to_string(r.kind) << ',' << (r.standardized ? 1 : 0) << ',' << fmt(r.lambda) << ',' << r.seed << ','
            << fmt(r.mse) << ',' << fmt(r.nmerci) << ',' << fmt(r.head_distance) << '\n';
    }
    return out.str();
}

// ---- cost sweep -----------------------------------------------------------------

double method_flops(uq::Method method, const fno::FnoConfig& config, std::size_t nt, std::size_t nx, std::size_t members) {
    fno::FnoConfig c = config.resolved(nt, nx);
    if (method == uq::Method::Diverse) return fno::count_flops(c, nt, nx);
    c.n_heads = 1;
    return static_cast<double>(members) * fno::count_flops(c, nt, nx);
}

std::vector<CostRow> cost_sweep(const CostConfig& cfg) {
    ExperimentConfig base = cfg.base;
    base.splits = {cfg.eval_split};
    base.methods = {uq::Method::Ensemble, uq::Method::Diverse};
    base.validate();
    const ExperimentData data = prepare_data(base);
    const pde::Dataset& test = data.test.at(cfg.eval_split);
    const Tensor inputs = channel_first(test);

    struct Point {
        uq::Method method;
        std::size_t width;
        std::uint64_t seed;
    };
    std::vector<Point> points;
    for (auto seed : base.seeds) {
        for (std::size_t w : cfg.widths) {
            points.push_back({uq::Method::Ensemble, w, seed});
            std::size_t dw = w;
            if (cfg.match_flops) {
                fno::FnoConfig ec = base.model;
                ec.width = w;
                const double budget = method_flops(uq::Method::Ensemble, ec, base.nt, base.nx, base.ensemble_size);
                dw = 0;
                for (std::size_t cand : cfg.diverse_widths) {
                    fno::FnoConfig dc = base.model;
                    dc.width = cand;
                    dc.n_heads = base.n_heads;
                    if (method_flops(uq::Method::Diverse, dc, base.nt, base.nx, 1) <= budget) dw = std::max(dw, cand);
                }
                if (dw == 0) throw std::invalid_argument("no diverse width fits the ensemble FLOP budget at width " + std::to_string(w));
            }
            points.push_back({uq::Method::Diverse, dw, seed});
        }
    }

    // With select_on_first_seed, the first seed picks lambda per diverse width
    // and later seeds reuse it.
    std::map<std::size_t, Selection> chosen;
    std::mutex chosen_mutex;
    std::vector<CostRow> rows(points.size());
    auto run_point = [&](std::size_t i) {
        const Point& pt = points[i];
        ExperimentConfig c = base;
        c.model.width = pt.width;
        Selection sel;
        if (base.select_on_first_seed && pt.seed != base.seeds.front()) {
            std::lock_guard<std::mutex> lock(chosen_mutex);
            sel = chosen[pt.width];
        }
        const auto tm = train_method(c, pt.method, pt.seed, data, sel);
        if (base.select_on_first_seed && pt.seed == base.seeds.front() && pt.method == uq::Method::Diverse) {
            std::lock_guard<std::mutex> lock(chosen_mutex);
            chosen[pt.width] = sel;
        }
        const auto s = predict_method(tm, inputs, pt.seed, c.n_masks);
        std::vector<double> err(s.mean.numel());
        for (std::size_t p = 0; p < err.size(); ++p) err[p] = std::abs(s.mean[p] - test.targets[p]);
        CostRow r;
        r.method = pt.method;
        r.width = pt.width;
        r.seed = pt.seed;
        r.params = 0;
        for (const auto& m : tm.models) r.params += m.parameter_count();
        r.flops = method_flops(pt.method, tm.models.front().config, c.nt, c.nx, tm.models.size());
        r.mse = metrics::mse(s.mean.data(), test.targets.data());
        r.nmerci = metrics::nmerci(err, s.std.data()).value;
        rows[i] = r;
    };
    const std::size_t n_first = base.select_on_first_seed ? 2 * cfg.widths.size() : 0;
    parallel_for(n_first, base.workers, run_point);
    parallel_for(points.size() - n_first, base.workers, [&](std::size_t i) { run_point(n_first + i); });
    return rows;
}

std::string cost_csv(const std::vector<CostRow>& rows) {
    std::ostringstream out;
    out << "method,width,seed,flops,params,mse,nmerci\n";
    for (const auto& r : rows) {
        out << uq::to_string(r.method) << ',' << r.width << ',' << r.seed << ',' << fmt(r.flops) << ',' << r.params << ','
            << fmt(r.mse) << ',' << fmt(r.nmerci) << '\n';
    }
    return out.str();
}

std::string gnuplot_stub(const std::string& csv_name) {
    return "set datafile separator ','\n"
           "set logscale xy\n"
           "set xlabel 'FLOPs'\n"
           "set ylabel 'MSE'\n"
           "plot '" + csv_name + "' using ($1 eq 'ensemble' ? $4 : 1/0):6 every ::1 with points title 'ensemble', \\\n"
           "     '" + csv_name + "' using ($1 eq 'diverse' ? $4 : 1/0):6 every ::1 with points title 'diverse'\n";
}

}  // namespace oodno::harness
