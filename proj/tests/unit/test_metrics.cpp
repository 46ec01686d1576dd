#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "oodno/constraint.hpp"
#include "oodno/metrics.hpp"
#include "oodno/rng.hpp"

using namespace oodno;

TEST(Percentile, LinearInterpolationBetweenOrderStatistics) {
    EXPECT_DOUBLE_EQ(metrics::percentile({3.0, 1.0, 2.0, 4.0}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(metrics::percentile({5.0}, 0.95), 5.0);
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    EXPECT_NEAR(metrics::percentile(v, 0.95), 95.05, 1e-12);
    EXPECT_THROW(metrics::percentile({}, 0.5), std::invalid_argument);
}

TEST(Nmerci, PerfectCorrelationIsZero) {
    Rng rng(4);
    std::vector<double> err(500), sd(500);
    for (std::size_t i = 0; i < err.size(); ++i) {
        err[i] = std::abs(rng.normal()) + 1e-3;
        sd[i] = err[i] / 3.7;
    }
    EXPECT_NEAR(metrics::nmerci(err, sd).value, 0.0, 1e-12);
}

TEST(Nmerci, ConstantSigmaOnOneToHundred) {
    std::vector<double> err(100), sd(100, 2.0);
    std::iota(err.begin(), err.end(), 1.0);
    const double expected = (95.05 - 50.5) / (100.0 - 50.5);
    EXPECT_NEAR(metrics::nmerci(err, sd).value, expected, 1e-12);
    EXPECT_NEAR(expected, 0.90, 0.005);
}

TEST(Nmerci, InvariantToScalingSigma) {
    Rng rng(5);
    std::vector<double> err(300), sd(300), sd2(300);
    for (std::size_t i = 0; i < err.size(); ++i) {
        err[i] = std::abs(rng.normal());
        sd[i] = 0.1 + std::abs(rng.normal());
        sd2[i] = 1e3 * sd[i];
    }
    EXPECT_NEAR(metrics::nmerci(err, sd).value, metrics::nmerci(err, sd2).value, 1e-10);
}

TEST(Nmerci, EqualErrorsAreDegenerate) {
    const std::vector<double> err(10, 0.5), sd(10, 1.0);
    const auto r = metrics::nmerci(err, sd);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.value, 0.0);
}

TEST(Rmsce, CalibratedGaussianIsNearZero) {
    Rng rng(11);
    const std::size_t n = 100000;
    std::vector<double> mu(n), sd(n), u(n);
    for (std::size_t i = 0; i < n; ++i) {
        mu[i] = rng.normal();
        sd[i] = 0.5 + std::abs(rng.normal());
        u[i] = mu[i] + sd[i] * rng.normal();
    }
    EXPECT_LT(metrics::rmsce(mu, sd, u), 0.02);
}

TEST(Rmsce, VanishingSigmaGivesRootMeanSquareLevel) {
    const std::vector<double> mu(50, 0.0), sd(50, 1e-300), u(50, 1.0);
    double acc = 0.0;
    for (int j = 1; j <= 100; ++j) acc += std::pow((j - 0.5) / 100.0, 2);
    const double expected = std::sqrt(acc / 100.0);
    EXPECT_NEAR(metrics::rmsce(mu, sd, u), expected, 1e-12);
    EXPECT_LE(metrics::rmsce(mu, sd, u), 1.0);
}

TEST(Rmsce, LevelsAreEvenlySpacedMidpoints) {
    const auto p = metrics::calibration_levels();
    ASSERT_EQ(p.size(), 100u);
    EXPECT_DOUBLE_EQ(p.front(), 0.005);
    EXPECT_DOUBLE_EQ(p.back(), 0.995);
    EXPECT_NEAR(metrics::normal_quantile(0.975), 1.959963984540054, 1e-9);
}

TEST(Crps, ZeroErrorValue) {
    const double closed = 2.0 / std::sqrt(2.0 * std::numbers::pi) - 1.0 / std::sqrt(std::numbers::pi);
    EXPECT_NEAR(metrics::crps_gaussian_point(1.0, 2.0, 1.0), 2.0 * closed, 1e-15);
    EXPECT_NEAR(closed, 0.23370, 1e-5);
}

TEST(Crps, MatchesQuadrature) {
    Rng rng(8);
    for (int c = 0; c < 3; ++c) {
        const double mu = rng.normal(), sd = 0.2 + std::abs(rng.normal()), u = mu + 1.5 * rng.normal();
        EXPECT_NEAR(metrics::crps_gaussian_point(mu, sd, u), oracle::crps_quadrature(mu, sd, u), 1e-6);
    }
}

TEST(Crps, LinearInSigmaAtFixedZ) {
    const double a = metrics::crps_gaussian_point(0.0, 1.0, 0.7);
    const double b = metrics::crps_gaussian_point(0.0, 3.0, 2.1);
    EXPECT_NEAR(b, 3.0 * a, 1e-14);
}

TEST(Mse, MatchesNaiveLoopAndZeroAtTruth) {
    Rng rng(3);
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(metrics::mse(a, b), acc / 40.0, 1e-15);
    EXPECT_EQ(metrics::mse(a, a), 0.0);
}

TEST(Nll, SumOfLogDensitiesAndSharpnessOrdering) {
    Rng rng(6);
    std::vector<double> mu(30), u(30), tight(30), wide(30);
    double expected = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        mu[i] = rng.normal();
        u[i] = mu[i] + 0.1 + std::abs(rng.normal());
        tight[i] = std::abs(u[i] - mu[i]);
        wide[i] = 10.0 * tight[i];
        expected -= oracle::gaussian_log_density(u[i], mu[i], tight[i]);
    }
    EXPECT_NEAR(metrics::gaussian_nll(mu, tight, u), expected, 1e-10);
    EXPECT_LT(metrics::gaussian_nll(mu, tight, u), metrics::gaussian_nll(mu, wide, u));
}

TEST(Metrics, PermutationInvariant) {
    Rng rng(12);
    std::vector<double> mu(64), sd(64), u(64);
    for (std::size_t i = 0; i < 64; ++i) {
        mu[i] = rng.normal();
        sd[i] = 0.1 + std::abs(rng.normal());
        u[i] = rng.normal();
    }
    std::vector<std::size_t> perm(64);
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::rotate(perm.begin(), perm.begin() + 17, perm.end());
    std::vector<double> mu2(64), sd2(64), u2(64), e(64), e2(64);
    for (std::size_t i = 0; i < 64; ++i) {
        mu2[i] = mu[perm[i]];
        sd2[i] = sd[perm[i]];
        u2[i] = u[perm[i]];
        e[i] = std::abs(mu[i] - u[i]);
        e2[i] = std::abs(mu2[i] - u2[i]);
    }
    EXPECT_NEAR(metrics::mse(mu, u), metrics::mse(mu2, u2), 1e-14);
    EXPECT_NEAR(metrics::gaussian_nll(mu, sd, u), metrics::gaussian_nll(mu2, sd2, u2), 1e-10);
    EXPECT_NEAR(metrics::nmerci(e, sd).value, metrics::nmerci(e2, sd2).value, 1e-12);
    EXPECT_NEAR(metrics::rmsce(mu, sd, u), metrics::rmsce(mu2, sd2, u2), 1e-14);
    EXPECT_NEAR(metrics::crps_gaussian(mu, sd, u), metrics::crps_gaussian(mu2, sd2, u2), 1e-14);
}

TEST(ConservationError, UniformFieldOnHeat) {
    const auto task = pde::PdeTask::standard(pde::Family::Heat, 8, 16);
    const auto cs = constraint::build_constraint(task, 2.0);
    std::vector<double> field(8 * 16, 0.3);
    EXPECT_NEAR(metrics::conservation_error(field, cs), 0.3 * 2.0 * std::numbers::pi, 1e-12);
}

TEST(ConservationError, ExactSolutionWithinQuadratureError) {
    for (auto fam : {pde::Family::Heat, pde::Family::PME, pde::Family::Stefan}) {
        const auto task = pde::PdeTask::standard(fam, 16, 256);
        const double c = task.train.lo;
        const auto sol = pde::solve_exact(fam, c, task);
        const auto cs = constraint::build_constraint(task, c);
        EXPECT_LT(metrics::conservation_error(sol.values.data(), cs), 1e-3) << pde::to_string(fam);
    }
}

TEST(Score, FillsEveryField) {
    Tensor mean({1, 2, 2}, {0.0, 1.0, 2.0, 3.0}), sd = Tensor::full({1, 2, 2}, 1.0), truth({1, 2, 2}, {0.5, 1.0, 2.0, 2.0});
    const auto r = metrics::score(mean, sd, truth, {});
    EXPECT_EQ(r.n_points, 4u);
    EXPECT_NEAR(r.mse, (0.25 + 1.0) / 4.0, 1e-15);
    EXPECT_EQ(r.conservation_error, 0.0);
    const auto back = metrics::MetricReport::from_json(r.to_json());
    EXPECT_EQ(back.mse, r.mse);
    EXPECT_EQ(back.crps, r.crps);
}
