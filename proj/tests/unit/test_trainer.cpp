#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "oodno/ops.hpp"
#include "oodno/pde.hpp"
#include "oodno/trainer.hpp"

using namespace oodno;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = rng.normal();
    return t;
}

double loss_value(const ad::Var& v) { return v.value().item(); }

fno::FnoConfig tiny(std::size_t heads) {
    fno::FnoConfig c;
    c.width = 4;
    c.modes_t = c.modes_x = 2;
    c.hidden = 5;
    c.n_layers = 1;
    c.n_heads = heads;
    return c;
}

bool same_params(const fno::FnoParams& a, const fno::FnoParams& b) {
    const auto va = a.variables(), vb = b.variables();
    for (std::size_t i = 0; i < va.size(); ++i) {
        const auto da = va[i].value().data(), db = vb[i].value().data();
        if (!std::equal(da.begin(), da.end(), db.begin(), db.end())) return false;
    }
    return true;
}

}  // namespace

TEST(RelL2, IdentityAndScaling) {
    const Tensor u = random_tensor({3, 4, 4}, 1);
    Tensor p = u.reshaped({3, 1, 4, 4});
    EXPECT_EQ(loss_value(train::rel_l2_loss(ad::constant(p), u)), 0.0);
    for (auto& v : p.storage()) v *= 2.0;
    EXPECT_NEAR(loss_value(train::rel_l2_loss(ad::constant(p), u)), 1.0, 1e-14);
}

TEST(RelL2, TwoHeadsAverageSingleHeadLosses) {
    const Tensor u = random_tensor({2, 3, 4}, 2);
    const Tensor a = random_tensor({2, 1, 3, 4}, 3), b = random_tensor({2, 1, 3, 4}, 4);
    Tensor both({2, 2, 3, 4});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 12; ++i) {
            both[(n * 2 + 0) * 12 + i] = a[n * 12 + i];
            both[(n * 2 + 1) * 12 + i] = b[n * 12 + i];
        }
    const double la = loss_value(train::rel_l2_loss(ad::constant(a), u));
    const double lb = loss_value(train::rel_l2_loss(ad::constant(b), u));
    EXPECT_NEAR(loss_value(train::rel_l2_loss(ad::constant(both), u)), 0.5 * (la + lb), 1e-14);
}

TEST(DiverseLoss, ZeroLambdaEqualsRelL2) {
    const Tensor u = random_tensor({2, 3, 4}, 5);
    const Tensor p = random_tensor({2, 3, 3, 4}, 6);
    const auto w = ad::constant(random_tensor({5, 3}, 7));
    const auto b = ad::constant(random_tensor({3}, 8));
    EXPECT_EQ(loss_value(train::diverse_loss(ad::constant(p), u, w, b, 0.0)),
              loss_value(train::rel_l2_loss(ad::constant(p), u)));
}

TEST(DiverseLoss, IdenticalHeadsHaveZeroPenalty) {
    const Tensor u = random_tensor({2, 3, 4}, 9);
    const Tensor p = random_tensor({2, 3, 3, 4}, 10);
    Tensor w({5, 3}), b({3});
    Rng rng(1);
    for (std::size_t h = 0; h < 5; ++h) {
        const double v = rng.normal();
        for (std::size_t m = 0; m < 3; ++m) w[h * 3 + m] = v;
    }
    b.fill(0.3);
    EXPECT_EQ(loss_value(train::diverse_loss(ad::constant(p), u, ad::constant(w), ad::constant(b), 5.0)),
              loss_value(train::rel_l2_loss(ad::constant(p), u)));
}

TEST(DiverseLoss, PenaltyMatchesBruteForcePairSum) {
    const Tensor u = random_tensor({2, 3, 4}, 11);
    for (std::size_t M : {2u, 4u}) {
        const Tensor p = random_tensor({2, M, 3, 4}, 12);
        const Tensor w = random_tensor({5, M}, 13), b = random_tensor({M}, 14);
        const double lam = 0.7;
        double pairs = 0.0;
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t k = m + 1; k < M; ++k) {
                double d = (b[m] - b[k]) * (b[m] - b[k]);
                for (std::size_t h = 0; h < 5; ++h) d += (w[h * M + m] - w[h * M + k]) * (w[h * M + m] - w[h * M + k]);
                pairs += d;
            }
        const double expected = loss_value(train::rel_l2_loss(ad::constant(p), u)) -
                                lam * 2.0 / static_cast<double>(M * (M - 1)) * pairs;
        EXPECT_NEAR(loss_value(train::diverse_loss(ad::constant(p), u, ad::constant(w), ad::constant(b), lam)), expected,
                    1e-12);
        if (M == 2) {
            // M = 2: penalty is lambda ||theta_1 - theta_2||^2.
            EXPECT_NEAR(expected, loss_value(train::rel_l2_loss(ad::constant(p), u)) - lam * pairs, 1e-12);
        }
    }
}

TEST(DiverseLoss, PenaltySymmetricAndTranslationInvariant) {
    const std::size_t M = 3, H = 4;
    const Tensor u = random_tensor({1, 2, 2}, 21);
    const Tensor p = random_tensor({1, M, 2, 2}, 22);
    const Tensor w = random_tensor({H, M}, 23), b = random_tensor({M}, 24);
    const double base = loss_value(train::diverse_loss(ad::constant(p), u, ad::constant(w), ad::constant(b), 0.9));
    // Permute head parameters (the predictions are permuted alongside).
    Tensor wp = w, bp = b, pp = p;
    const std::size_t perm[M] = {2, 0, 1};
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t h = 0; h < H; ++h) wp[h * M + m] = w[h * M + perm[m]];
        bp[m] = b[perm[m]];
        for (std::size_t i = 0; i < 4; ++i) pp[m * 4 + i] = p[perm[m] * 4 + i];
    }
    EXPECT_NEAR(loss_value(train::diverse_loss(ad::constant(pp), u, ad::constant(wp), ad::constant(bp), 0.9)), base,
                1e-12);
    // Shift every head by the same vector.
    Tensor ws = w, bs = b;
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t h = 0; h < H; ++h) ws[h * M + m] += 0.3 * static_cast<double>(h) - 1.0;
        bs[m] += 2.5;
    }
    EXPECT_NEAR(loss_value(train::diverse_loss(ad::constant(p), u, ad::constant(ws), ad::constant(bs), 0.9)), base,
                1e-12);
}

TEST(DiverseLoss, SingleHeadWithPenaltyRejected) {
    const Tensor u = random_tensor({1, 2, 2}, 1);
    EXPECT_THROW(train::diverse_loss(ad::constant(random_tensor({1, 1, 2, 2}, 2)), u,
                                     ad::constant(random_tensor({3, 1}, 3)), ad::constant(random_tensor({1}, 4)), 1.0),
                 std::invalid_argument);
}

TEST(DiverseLoss, GradientsOfEveryVariantMatchFiniteDifferences) {
    const auto [x, y] = gradcheck::random_batch(2, 4, 4, 15);
    auto ood = gradcheck::random_batch(2, 4, 4, 16).first;
    for (auto kind : {train::DiversityKind::Weights, train::DiversityKind::Outputs, train::DiversityKind::Gradients})
        for (bool st : {false, true}) {
            auto params = fno::FnoParams::init(tiny(3), 17);
            train::TrainConfig cfg;
            cfg.loss = train::LossKind::DiverseRelL2;
            cfg.lambda_diverse = 0.3;
            cfg.diversity_kind = kind;
            cfg.standardized = st;
            const auto rep = gradcheck::check(params, [&](const fno::FnoParams& p) {
                return train::batch_loss(p, x, y, cfg, nullptr, &ood);
            });
            EXPECT_LT(rep.max_rel_error, 1e-4) << train::to_string(kind) << " standardized=" << st << " "
                                               << rep.worst_param << "[" << rep.worst_index << "]";
        }
}

TEST(HeadLossGradients, MatchAutodiffOfEachHead) {
    // d/d theta_m of head m's relative-L2 loss, computed by backprop of that head alone.
    const auto [x, y] = gradcheck::random_batch(2, 4, 4, 18);
    auto params = fno::FnoParams::init(tiny(3), 19);
    const auto fwd = fno::forward(params, ad::constant(x));
    const Tensor g = train::head_loss_gradients(fwd.output, fwd.features, y).value();
    for (std::size_t m = 0; m < 3; ++m) {
        params.zero_grad();
        ad::Tape tape;
        ad::TapeScope scope(tape);
        const auto out = fno::forward(params, ad::constant(x)).output;
        ad::backward(train::rel_l2_loss(ad::slice(out, 1, m, m + 1), y));
        for (std::size_t h = 0; h < 5; ++h) EXPECT_NEAR(g[m * 6 + h], params.head_weight.grad()[h * 3 + m], 1e-12);
        EXPECT_NEAR(g[m * 6 + 5], params.head_bias.grad()[m], 1e-12);
    }
}

TEST(Nll, StandardNormalAtMean) {
    const Tensor u = random_tensor({2, 3, 3}, 20);
    auto mu = ad::parameter(u);
    const auto lv = ad::constant(Tensor({2, 3, 3}));
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto l = train::nll_loss(mu, lv, u);
    EXPECT_NEAR(loss_value(l), 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
    ad::backward(l);
    for (double g : mu.grad().data()) EXPECT_EQ(g, 0.0);
}

TEST(Nll, MatchesDensityOnRandomPoints) {
    Rng rng(21);
    Tensor mu({5}), lv({5}), u({5});
    double expected = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        mu[i] = rng.normal();
        lv[i] = rng.uniform(-2.0, 1.0);
        u[i] = rng.normal();
        expected -= oracle::gaussian_log_density(u[i], mu[i], std::exp(0.5 * lv[i]));
    }
    EXPECT_NEAR(loss_value(train::nll_loss(ad::constant(mu), ad::constant(lv), u)), expected / 5.0, 1e-12);
}

TEST(SelectLambda, HandCases) {
    EXPECT_EQ(train::select_lambda({0.01, 1.0, 100.0}, {1.0, 1.05, 2.0}), 1.0);
    EXPECT_EQ(train::select_lambda({0.01, 0.1, 1.0, 10.0, 100.0}, {3.0, 3.0, 3.0, 3.0, 3.0}), 100.0);
    EXPECT_EQ(train::select_lambda({10.0}, {0.5}), 10.0);
    EXPECT_THROW(train::select_lambda({1.0, 2.0}, {1.0}), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    auto x = ad::parameter(Tensor({2}, {1.0, -3.0}));
    train::Adam opt({x}, 0.1);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    ad::backward(ad::sum(ad::square(x)));
    opt.step();
    EXPECT_NEAR(x.value()[0], 0.9, 1e-7);
    EXPECT_NEAR(x.value()[1], -2.9, 1e-7);
}

class TrainLoop : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        const auto task = pde::PdeTask::standard(pde::Family::Heat, 8, 8);
        const auto all = pde::build_dataset(task, pde::Split::Train, 30, 0);
        std::tie(train_set, val_set) = pde::split_validation(all, 0.2, 0);
    }
    static inline pde::Dataset train_set, val_set;
};

TEST_F(TrainLoop, ZeroEpochsReturnsInitialization) {
    const auto init = fno::FnoParams::init(tiny(1), 3);
    train::TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto ck = train::train(init, train_set, val_set, cfg);
    EXPECT_TRUE(same_params(ck.params, init));
    EXPECT_EQ(ck.steps, 0u);
}

TEST_F(TrainLoop, SameSeedSameCheckpoint) {
    const auto init = fno::FnoParams::init(tiny(2), 3);
    train::TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.lr = 1e-2;
    cfg.seed = 9;
    cfg.loss = train::LossKind::DiverseRelL2;
    cfg.lambda_diverse = 0.1;
    const auto a = train::train(init, train_set, val_set, cfg);
    const auto b = train::train(init, train_set, val_set, cfg);
    EXPECT_TRUE(same_params(a.params, b.params));
    EXPECT_EQ(a.val_loss, b.val_loss);
}

TEST_F(TrainLoop, ZeroLambdaSingleHeadIsPlainTraining) {
    const auto init = fno::FnoParams::init(tiny(1), 4);
    train::TrainConfig plain;
    plain.max_epochs = 3;
    plain.lr = 1e-2;
    plain.seed = 5;
    train::TrainConfig div = plain;
    div.loss = train::LossKind::DiverseRelL2;
    div.lambda_diverse = 0.0;
    const auto a = train::train(init, train_set, val_set, plain);
    const auto b = train::train(init, train_set, val_set, div);
    EXPECT_TRUE(same_params(a.params, b.params));
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
}

TEST_F(TrainLoop, NonFiniteTargetsRaiseDivergence) {
    auto bad = train_set;
    bad.targets[0] = std::numeric_limits<double>::quiet_NaN();
    train::TrainConfig cfg;
    cfg.max_epochs = 1;
    EXPECT_THROW(train::train(fno::FnoParams::init(tiny(1), 1), bad, val_set, cfg), train::DivergenceError);
}

TEST_F(TrainLoop, VarianceObjectiveNeedsTwoHeads) {
    train::TrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.loss = train::LossKind::NLL;
    EXPECT_THROW(train::train(fno::FnoParams::init(tiny(1), 1), train_set, val_set, cfg), std::invalid_argument);
    EXPECT_NO_THROW(train::train(fno::FnoParams::init(tiny(2), 1), train_set, val_set, cfg));
}

TEST_F(TrainLoop, CheckpointRoundTrip) {
    train::TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.seed = 3;
    const auto ck = train::train(fno::FnoParams::init(tiny(3), 2), train_set, val_set, cfg);
    const auto dir = std::filesystem::temp_directory_path() / "oodno_ckpt_test";
    std::filesystem::remove_all(dir);
    train::save_checkpoint(dir, ck);
    EXPECT_TRUE(std::filesystem::exists(dir / "train_log.json"));
    const auto back = train::load_checkpoint(dir);
    EXPECT_TRUE(same_params(back.params, ck.params));
    EXPECT_EQ(back.train_config.seed, 3u);
    EXPECT_EQ(back.val_mse, ck.val_mse);
    std::filesystem::remove_all(dir);
    EXPECT_THROW(train::load_checkpoint(dir), std::runtime_error);
}

TEST(TrainHeat, ReachesOnePercentValidationError) {
    // Desk-scale regression threshold for the heat task.
    const auto task = pde::PdeTask::standard(pde::Family::Heat, 16, 16);
    const auto all = pde::build_dataset(task, pde::Split::Train, 100, 0);
    const auto [tr, va] = pde::split_validation(all, 0.2, 0);
    fno::FnoConfig c;
    c.width = 16;
    c.hidden = 32;
    c.modes_t = c.modes_x = 8;
    train::TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.max_epochs = 30;
    const auto ck = train::train(fno::FnoParams::init(c, 1), tr, va, cfg);
    EXPECT_LT(ck.val_loss, 1e-2);
}
