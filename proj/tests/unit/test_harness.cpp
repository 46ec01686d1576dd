#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <sstream>

#include "oodno/harness.hpp"

using namespace oodno;

namespace {

harness::ExperimentConfig tiny_config(const std::string& out) {
    harness::ExperimentConfig c;
    c.seeds = {0, 1};
    c.splits = {pde::Split::OodSmall, pde::Split::OodLarge};
    c.nt = c.nx = 8;
    c.n_train = 10;
    c.n_test = 4;
    c.n_ood_unlabeled = 4;
    c.model.n_layers = 1;
    c.model.width = 4;
    c.model.modes_t = c.model.modes_x = 2;
    c.model.hidden = 6;
    c.train.batch_size = 5;
    c.train.max_epochs = 2;
    c.ensemble_size = 2;
    c.n_heads = 2;
    c.lambda_grid = {0.1, 1.0};
    c.dropout_grid = {0.1, 0.25};
    c.n_masks = 3;
    c.laplace_alphas = {1.0, 10.0};
    c.out_dir = std::filesystem::temp_directory_path() / out;
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, JsonRoundTripAndHash) {
    auto c = tiny_config("unused");
    c.select_on_first_seed = true;
    const auto back = harness::ExperimentConfig::from_json(c.to_json());
    EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
    EXPECT_EQ(back.hash(), c.hash());
    auto d = c;
    d.workers = 7;
    d.out_dir = "elsewhere";
    EXPECT_EQ(d.hash(), c.hash());
    d.n_train = 11;
    EXPECT_NE(d.hash(), c.hash());
}

TEST(Config, ValidationRejectsBadSettings) {
    auto c = tiny_config("unused");
    c.seeds.clear();
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config("unused");
    c.dropout_grid = {1.5};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_config("unused");
    c.ensemble_size = 1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Plan, DryRunListsEverySeedMethodPair) {
    const auto c = tiny_config("oodno_plan_test");
    std::filesystem::remove_all(c.out_dir);
    const auto res = harness::run_experiment(c, true);
    EXPECT_EQ(res.plan.size(), c.seeds.size() * c.methods.size());
    EXPECT_TRUE(res.rows.empty());
    EXPECT_TRUE(std::filesystem::exists(c.out_dir / "plan.json"));
    std::filesystem::remove_all(c.out_dir);
}

TEST(Data, ContentHashIsStableAndSensitive) {
    const auto c = tiny_config("unused");
    const auto a = harness::prepare_data(c), b = harness::prepare_data(c);
    EXPECT_EQ(a.content_hash, b.content_hash);
    auto d = c;
    d.data_seed = 1;
    EXPECT_NE(harness::prepare_data(d).content_hash, a.content_hash);
    EXPECT_EQ(a.train.size() + a.val.size(), c.n_train);
    EXPECT_EQ(a.test.at(pde::Split::OodLarge).size(), c.n_test);
}

TEST(Data, MissingDatasetDirectoryIsAnError) {
    auto c = tiny_config("unused");
    c.data_dir = std::filesystem::temp_directory_path() / "oodno_no_such_dir";
    try {
        harness::split_dataset(c, pde::Split::OodSmall);
        FAIL();
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("missing dataset"), std::string::npos);
    }
}

TEST(Report, IdenticalSummariesGiveUnitRatio) {
    harness::ResultRow r{uq::Method::Ensemble, pde::Split::OodSmall, 0, {}, {}, 1.0, {}};
    r.before.mse = r.after.mse = 0.25;
    r.before.method = "ensemble";
    const auto csv = harness::report_csv({r});
    EXPECT_NE(csv.find("ensemble,ood_small,1,"), std::string::npos);
    EXPECT_NE(csv.find(",1.000000e+00"), std::string::npos);
}

TEST(Report, RerunIsByteIdenticalAndIndependentOfWorkers) {
    auto a = tiny_config("oodno_rerun_a");
    auto b = tiny_config("oodno_rerun_b");
    a.methods = b.methods = {uq::Method::Ensemble, uq::Method::Diverse, uq::Method::McDropout, uq::Method::Bayesian,
                             uq::Method::Variance};
    b.workers = 2;
    std::filesystem::remove_all(a.out_dir);
    std::filesystem::remove_all(b.out_dir);
    const auto ra = harness::run_experiment(a);
    const auto rb = harness::run_experiment(b);
    ASSERT_EQ(ra.rows.size(), a.seeds.size() * a.methods.size() * a.splits.size());
    EXPECT_EQ(slurp(a.out_dir / "report.csv"), slurp(b.out_dir / "report.csv"));
    EXPECT_EQ(slurp(a.out_dir / "rows.json"), slurp(b.out_dir / "rows.json"));
    for (const auto& row : ra.rows) {
        EXPECT_EQ(row.provenance.at("config_hash"), a.hash());
        EXPECT_TRUE(row.provenance.contains("data_hash"));
        EXPECT_TRUE(row.provenance.contains("seed"));
        EXPECT_LT(row.after.conservation_error, 1e-8);
    }
    std::filesystem::remove_all(a.out_dir);
    std::filesystem::remove_all(b.out_dir);
}

TEST(Trained, SaveLoadPredictsIdentically) {
    auto c = tiny_config("oodno_saved");
    std::filesystem::remove_all(c.out_dir);
    const auto data = harness::prepare_data(c);
    const Tensor x = fno::to_channel_first(data.test.at(pde::Split::OodSmall).inputs, 0, c.n_test);
    for (auto m : {uq::Method::Diverse, uq::Method::Bayesian, uq::Method::McDropout}) {
        harness::Selection sel;
        const auto tm = harness::train_method(c, m, 3, data, sel);
        harness::save_trained(c.out_dir / uq::to_string(m), tm);
        const auto back = harness::load_trained(c.out_dir / uq::to_string(m));
        EXPECT_EQ(back.method, m);
        const auto p = harness::predict_method(tm, x, 3, c.n_masks);
        const auto q = harness::predict_method(back, x, 3, c.n_masks);
        for (std::size_t i = 0; i < p.std.numel(); ++i) {
            ASSERT_EQ(p.mean[i], q.mean[i]);
            ASSERT_EQ(p.std[i], q.std[i]);
        }
    }
    EXPECT_THROW(harness::load_trained(c.out_dir / "absent"), std::exception);
    std::filesystem::remove_all(c.out_dir);
}

TEST(Diversity, ReportNeedsMembersOrHeads) {
    fno::FnoConfig single;
    single.width = 4;
    single.modes_t = single.modes_x = 2;
    single.hidden = 5;
    single.n_layers = 1;
    const auto one = fno::FnoParams::init(single, 1);
    EXPECT_THROW(harness::diversity_report({one}), std::invalid_argument);
    const auto t = harness::diversity_report({one, fno::FnoParams::init(single, 2)});
    EXPECT_EQ(t.magnitude_maps.size(), 2u);
    double positive = 0.0;
    for (double v : t.cov.data()) positive += v > 0.0;
    EXPECT_GT(positive, 0.9 * static_cast<double>(t.cov.numel()));
    auto multi = single;
    multi.n_heads = 3;
    const auto heads = harness::diversity_report({fno::FnoParams::init(multi, 3)});
    ASSERT_EQ(heads.head_distances.shape(), (Shape{3, 3}));
    EXPECT_EQ(heads.head_distances[0], 0.0);
    EXPECT_EQ(heads.head_distances[1], heads.head_distances[3]);
}

TEST(Cost, EnsembleIsTenSingleModels) {
    fno::FnoConfig c;
    c.width = 16;
    c.hidden = 32;
    c.modes_t = c.modes_x = 4;
    const double one = fno::count_flops(c, 16, 16);
    EXPECT_DOUBLE_EQ(harness::method_flops(uq::Method::Ensemble, c, 16, 16, 10), 10.0 * one);
    auto multi = c;
    multi.n_heads = 10;
    EXPECT_DOUBLE_EQ(harness::method_flops(uq::Method::Diverse, multi, 16, 16, 10), fno::count_flops(multi, 16, 16));
    EXPECT_LT(harness::method_flops(uq::Method::Diverse, multi, 16, 16, 10), 2.0 * one);
    EXPECT_LT(fno::FnoParams::init(multi, 1).parameter_count(), 10 * fno::FnoParams::init(c, 1).parameter_count());
}

TEST(Cost, GnuplotStubReferencesCsv) {
    const auto s = harness::gnuplot_stub("cost.csv");
    EXPECT_NE(s.find("cost.csv"), std::string::npos);
}

TEST(Pool, OrderPreservingAndRethrows) {
    std::vector<int> out(20, -1);
    harness::parallel_for(20, 3, [&](std::size_t i) { out[i] = static_cast<int>(i * i); });
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(out[i], static_cast<int>(i * i));
    std::atomic<int> ran{0};
    EXPECT_THROW(harness::parallel_for(5, 2,
                                       [&](std::size_t i) {
                                           ++ran;
                                           if (i == 2) throw std::runtime_error("job failed");
                                       }),
                 std::runtime_error);
}

TEST(Hash, ContentHashDiffersOnOneBit) {
    const std::vector<double> a{1.0, 2.0, 3.0};
    std::vector<double> b = a;
    b[2] = std::nextafter(3.0, 4.0);
    EXPECT_EQ(harness::content_hash(a), harness::content_hash(a));
    EXPECT_NE(harness::content_hash(a), harness::content_hash(b));
    EXPECT_EQ(harness::content_hash(a).size(), 16u);
}
