// oodno command-line interface.
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "oodno/harness.hpp"
#include "oodno/tensor_io.hpp"

using namespace oodno;

namespace {

struct Common {
    std::string config;
    std::string task;
    std::vector<std::uint64_t> seeds;
    std::size_t nt = 0, nx = 0, workers = 0;
    std::string data_dir;
    std::string out;

    void add(CLI::App* app, bool with_out = true) {
        app->add_option("--config", config, "experiment config JSON")->check(CLI::ExistingFile);
        app->add_option("--task", task, "heat | pme | stefan | advection");
        app->add_option("--seed,--seeds", seeds, "seed(s)");
        app->add_option("--nt", nt, "time grid points");
        app->add_option("--nx", nx, "space grid points");
        app->add_option("--workers", workers, "worker threads");
        app->add_option("--data-dir", data_dir, "dataset root (default: $OODNO_DATA_DIR)");
        if (with_out) app->add_option("--out", out, "output path");
    }

    harness::ExperimentConfig resolve() const {
        harness::ExperimentConfig cfg;
        if (!config.empty()) {
            std::ifstream in(config);
            cfg = harness::ExperimentConfig::from_json(nlohmann::json::parse(in));
        }
        if (!task.empty()) cfg.task = pde::family_from_string(task);
        if (!seeds.empty()) cfg.seeds = seeds;
        if (nt) cfg.nt = nt;
        if (nx) cfg.nx = nx;
        if (workers) cfg.workers = workers;
        if (!data_dir.empty()) {
            cfg.data_dir = data_dir;
        } else if (const char* env = std::getenv("OODNO_DATA_DIR"); env && *env && cfg.data_dir.empty()) {
            cfg.data_dir = env;
        }
        if (!out.empty()) cfg.out_dir = out;
        return cfg;
    }
};

void write_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::filesystem::path summary_stem(std::string path) {
    for (const std::string suffix : {".summary.json", ".mean.bin", ".bin"}) {
        if (path.size() > suffix.size() && path.ends_with(suffix)) return path.substr(0, path.size() - suffix.size());
    }
    return path;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-operator uncertainty quantification under out-of-domain shift"};
    app.require_subcommand(1);

    // generate-data
    Common gen;
    std::string gen_split = "train";
    std::size_t gen_n = 0;
    auto* c_gen = app.add_subcommand("generate-data", "generate one dataset split");
    gen.add(c_gen);
    c_gen->add_option("--split", gen_split, "train | ood_small | ood_medium | ood_large");
    c_gen->add_option("--n", gen_n, "number of samples (default: n_train or n_test)");

    // train
    Common tr;
    std::string tr_method;
    auto* c_train = app.add_subcommand("train", "train one UQ method for one seed");
    tr.add(c_train);
    c_train->add_option("--method", tr_method, "fno | ensemble | diverse | variance | mcdropout | bayesian")->required();

    // predict
    Common pr;
    std::string pr_ckpt, pr_split = "ood_medium";
    auto* c_pred = app.add_subcommand("predict", "posterior summary of a trained method on a split");
    pr.add(c_pred);
    c_pred->add_option("--method", tr_method, "checked against the checkpoint when given");
    c_pred->add_option("--checkpoint", pr_ckpt, "directory written by train")->required();
    c_pred->add_option("--split", pr_split, "evaluation split");

    // probconserv
    Common pc;
    std::string pc_summary, pc_split;
    std::optional<double> pc_param;
    auto* c_pc = app.add_subcommand("probconserv", "apply the conservation update to a summary");
    pc.add(c_pc);
    c_pc->add_option("--summary", pc_summary, "summary stem")->required();
    c_pc->add_option("--param", pc_param, "PDE parameter shared by every sample");
    c_pc->add_option("--split", pc_split, "take per-sample parameters from this split");

    // evaluate
    Common ev;
    std::string ev_summary, ev_split, ev_truth;
    bool ev_no_constraint = false;
    auto* c_eval = app.add_subcommand("evaluate", "score a summary against ground truth");
    ev.add(c_eval);
    c_eval->add_option("--summary", ev_summary, "summary stem")->required();
    c_eval->add_option("--split", ev_split, "split providing truth and constraint parameters")->required();
    c_eval->add_option("--truth", ev_truth, "target tensor file (default: the split's targets)");
    c_eval->add_flag("--no-constraint", ev_no_constraint, "skip the conservation error");

    // report
    std::vector<std::string> rep_rows;
    std::string rep_out;
    auto* c_rep = app.add_subcommand("report", "merge metric rows into a CSV table");
    c_rep->add_option("rows", rep_rows, "row JSON files (objects or arrays)")->required()->check(CLI::ExistingFile);
    c_rep->add_option("--out", rep_out, "CSV path (default: stdout)");

    // ablate
    Common ab;
    std::vector<std::string> ab_kinds;
    std::string ab_split = "ood_medium";
    auto* c_ab = app.add_subcommand("ablate", "diversity-penalty ablation over kinds and lambda");
    ab.add(c_ab);
    c_ab->add_option("--kinds", ab_kinds, "weights | outputs | gradients");
    c_ab->add_option("--split", ab_split, "evaluation split");

    // cost-sweep
    Common cs;
    std::vector<std::size_t> cs_widths;
    std::string cs_split = "ood_medium";
    bool cs_same_width = false;
    auto* c_cs = app.add_subcommand("cost-sweep", "ensemble vs diverse cost-performance sweep");
    cs.add(c_cs);
    c_cs->add_option("--widths", cs_widths, "ensemble widths");
    c_cs->add_option("--split", cs_split, "evaluation split");
    c_cs->add_flag("--same-width", cs_same_width, "compare at equal width instead of matched FLOPs");

    // diversity-report
    std::vector<std::string> dv_ckpts;
    std::string dv_out = "diversity";
    auto* c_dv = app.add_subcommand("diversity-report", "weight-diversity tables of trained checkpoints");
    c_dv->add_option("--checkpoint", dv_ckpts, "method directories written by train")->required();
    c_dv->add_option("--out", dv_out, "output directory");

    // run
    Common rn;
    bool rn_dry = false;
    auto* c_run = app.add_subcommand("run", "end-to-end experiment: train, predict, ProbConserv, evaluate");
    rn.add(c_run);
    c_run->add_flag("--dry-run", rn_dry, "write the job plan only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*c_gen) {
            auto cfg = gen.resolve();
            const auto split = pde::split_from_string(gen_split);
            const std::size_t n = gen_n ? gen_n : (split == pde::Split::Train ? cfg.n_train : cfg.n_test);
            const std::uint64_t seed = gen.seeds.empty() ? cfg.data_seed : gen.seeds.front();
            std::filesystem::path out = gen.out;
            if (out.empty()) {
                if (cfg.data_dir.empty()) throw std::invalid_argument("generate-data needs --out or OODNO_DATA_DIR");
                out = cfg.data_dir / pde::to_string(cfg.task);
            }
            const auto task = pde::PdeTask::standard(cfg.task, cfg.nt, cfg.nx);
            pde::save_dataset(out, task, pde::build_dataset(task, split, n, seed));
            std::cout << (out / pde::to_string(split)).string() << '\n';
        } else if (*c_train) {
            auto cfg = tr.resolve();
            const auto method = uq::method_from_string(tr_method);
            const std::uint64_t seed = cfg.seeds.front();
            const auto data = harness::prepare_data(cfg);
            harness::Selection sel;
            const auto tm = harness::train_method(cfg, method, seed, data, sel);
            const std::filesystem::path out = tr.out.empty() ? cfg.out_dir / (tr_method + "_seed" + std::to_string(seed)) : std::filesystem::path(tr.out);
            harness::save_trained(out, tm);
            std::cout << out.string() << '\n';
        } else if (*c_pred) {
            auto cfg = pr.resolve();
            const auto tm = harness::load_trained(pr_ckpt);
            if (!tr_method.empty() && uq::method_from_string(tr_method) != tm.method) {
                throw std::invalid_argument("checkpoint holds method " + uq::to_string(tm.method) + ", not " + tr_method);
            }
            const auto split = pde::split_from_string(pr_split);
            const auto data = harness::split_dataset(cfg, split);
            auto s = harness::predict_method(tm, fno::to_channel_first(data.inputs, 0, data.size()), tm.seed, cfg.n_masks);
            s.meta["task"] = pde::to_string(cfg.task);
            s.meta["split"] = pr_split;
            const std::filesystem::path stem = pr.out.empty() ? std::filesystem::path(pr_ckpt) / pr_split : summary_stem(pr.out);
            uq::save_summary(stem, s);
            std::cout << stem.string() << '\n';
        } else if (*c_pc) {
            auto cfg = pc.resolve();
            const auto stem = summary_stem(pc_summary);
            const auto s = uq::load_summary(stem);
            const auto task = pde::PdeTask::standard(cfg.task, s.mean.dim(1), s.mean.dim(2));
            std::vector<constraint::ConstraintSystem> systems;
            if (pc_param) {
                systems.assign(s.mean.dim(0), constraint::build_constraint(task, *pc_param));
            } else if (!pc_split.empty()) {
                systems = harness::constraints_for(task, harness::split_dataset(cfg, pde::split_from_string(pc_split)));
            } else {
                throw std::invalid_argument("probconserv needs --param or --split");
            }
            const auto out = harness::apply_probconserv(s, systems);
            const std::filesystem::path out_stem = pc.out.empty() ? std::filesystem::path(stem.string() + ".pc") : summary_stem(pc.out);
            uq::save_summary(out_stem, out);
            std::cout << out_stem.string() << '\n';
        } else if (*c_eval) {
            auto cfg = ev.resolve();
            const auto s = uq::load_summary(summary_stem(ev_summary));
            const auto split = pde::split_from_string(ev_split);
            const auto data = harness::split_dataset(cfg, split);
            const Tensor truth = ev_truth.empty() ? data.targets : io::read_tensor(ev_truth);
            std::vector<constraint::ConstraintSystem> systems;
            if (!ev_no_constraint) systems = harness::constraints_for(pde::PdeTask::standard(cfg.task, cfg.nt, cfg.nx), data);
            auto r = metrics::score(s.mean, s.std, truth, systems);
            r.method = uq::to_string(s.method);
            r.task = pde::to_string(cfg.task);
            r.split = ev_split;
            r.seed = s.meta.value("seed", std::uint64_t{0});
            const std::string text = r.to_json().dump(2) + "\n";
            if (ev.out.empty()) std::cout << text;
            else write_file(ev.out, text);
        } else if (*c_rep) {
            std::vector<nlohmann::json> rows;
            for (const auto& path : rep_rows) {
                std::ifstream in(path);
                const auto j = nlohmann::json::parse(in);
                if (j.is_array()) {
                    for (const auto& r : j) rows.push_back(r);
                } else if (j.contains("before")) {
                    rows.push_back(j);
                } else {
                    // A bare evaluate row: no post-ProbConserv counterpart.
                    rows.push_back({{"method", j.at("method")}, {"split", j.at("split")}, {"seed", j.value("seed", 0)},
                                    {"before", j}, {"after", j}, {"mse_ratio", 1.0}});
                }
            }
            const std::string csv = harness::report_csv_from_json(rows);
            if (rep_out.empty()) std::cout << csv;
            else write_file(rep_out, csv);
        } else if (*c_ab) {
            harness::AblationConfig ac;
            ac.base = ab.resolve();
            ac.eval_split = pde::split_from_string(ab_split);
            if (!ab_kinds.empty()) {
                ac.kinds.clear();
                for (const auto& k : ab_kinds) ac.kinds.push_back(train::diversity_from_string(k));
            }
            const auto path = ac.base.out_dir / "ablation.csv";
            write_file(path, harness::ablation_csv(harness::ablate_diversity(ac)));
            std::cout << path.string() << '\n';
        } else if (*c_cs) {
            harness::CostConfig cc;
            cc.base = cs.resolve();
            cc.eval_split = pde::split_from_string(cs_split);
            cc.match_flops = !cs_same_width;
            if (!cs_widths.empty()) cc.widths = cs_widths;
            const auto path = cc.base.out_dir / "cost.csv";
            write_file(path, harness::cost_csv(harness::cost_sweep(cc)));
            write_file(cc.base.out_dir / "cost.gp", harness::gnuplot_stub("cost.csv"));
            std::cout << path.string() << '\n';
        } else if (*c_dv) {
            std::vector<fno::FnoParams> models;
            for (const auto& d : dv_ckpts) {
                const auto tm = harness::load_trained(d);
                models.insert(models.end(), tm.models.begin(), tm.models.end());
            }
            harness::write_diversity_report(dv_out, models);
            std::cout << dv_out << '\n';
        } else if (*c_run) {
            const auto res = harness::run_experiment(rn.resolve(), rn_dry);
            if (rn_dry) {
                for (const auto& j : res.plan) std::cout << j.describe() << '\n';
            }
            for (const auto& f : res.files) std::cout << f.string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "oodno: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
