#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oodno/fft.hpp"
#include "oodno/fno.hpp"
#include "oodno/ops.hpp"

using namespace oodno;

namespace {

fno::FnoConfig small(std::size_t heads = 1) {
    fno::FnoConfig c;
    c.width = 6;
    c.modes_t = c.modes_x = 3;
    c.hidden = 10;
    c.n_layers = 2;
    c.n_heads = heads;
    return c;
}

Tensor run(const fno::FnoParams& p, const Tensor& x) { return fno::forward(p, ad::constant(x)).output.value(); }

}  // namespace

TEST(Fno, OutputShapeSingleHead) {
    const auto p = fno::FnoParams::init(small(), 1);
    const auto [x, y] = gradcheck::random_batch(2, 8, 16, 2);
    const Tensor out = run(p, x);
    EXPECT_EQ(out.shape(), (Shape{2, 1, 8, 16}));
}

TEST(Fno, ZeroHeadGivesZeroOutput) {
    auto p = fno::FnoParams::init(small(3), 1);
    Tensor& w = p.head_weight.mutable_value();
    for (std::size_t h = 0; h < 10; ++h) w[h * 3 + 1] = 0.0;
    p.head_bias.mutable_value()[1] = 0.0;
    const auto [x, y] = gradcheck::random_batch(2, 8, 8, 3);
    const Tensor out = run(p, x);
    const std::size_t P = 64;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < P; ++i) {
            EXPECT_EQ(out[(b * 3 + 1) * P + i], 0.0);
        }
}

TEST(Fno, PermutingHeadsPermutesOutputs) {
    auto p = fno::FnoParams::init(small(3), 4);
    const auto [x, y] = gradcheck::random_batch(2, 8, 8, 5);
    const Tensor before = run(p, x);
    Tensor& w = p.head_weight.mutable_value();
    Tensor& b = p.head_bias.mutable_value();
    for (std::size_t h = 0; h < 10; ++h) std::swap(w[h * 3 + 0], w[h * 3 + 2]);
    std::swap(b[0], b[2]);
    const Tensor after = run(p, x);
    const std::size_t P = 64;
    const std::size_t perm[3] = {2, 1, 0};
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t m = 0; m < 3; ++m)
            for (std::size_t i = 0; i < P; ++i) EXPECT_EQ(after[(n * 3 + m) * P + i], before[(n * 3 + perm[m]) * P + i]);
}

TEST(SpectralConv, ZeroSpectralIdentityPointwiseIsGelu) {
    const std::size_t w = 3;
    fno::SpectralLayer layer;
    layer.spectral = ad::constant(Tensor({2, 2, 2, w, w}, DType::Complex));
    Tensor eye({w, w});
    for (std::size_t i = 0; i < w; ++i) eye[i * w + i] = 1.0;
    layer.pointwise = ad::constant(eye);
    layer.pointwise_bias = ad::constant(Tensor({w}));
    const auto [x, y] = gradcheck::random_batch(1, 8, 8, 6);
    const Tensor out = fno::spectral_conv(layer, ad::constant(x), true).value();
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(out[i], ad::gelu_value(x[i]), 1e-12);
}

TEST(SpectralConv, DcOnlyWeightScalesConstant) {
    const std::size_t w = 2;
    fno::SpectralLayer layer;
    Tensor spec({2, 2, 2, w, w}, DType::Complex);
    auto c = spec.cdata();
    for (std::size_t i = 0; i < w; ++i) c[i * w + i] = cplx(0.75, 0.0);  // corner 0, mode (0, 0)
    layer.spectral = ad::constant(spec);
    layer.pointwise = ad::constant(Tensor({w, w}));
    layer.pointwise_bias = ad::constant(Tensor({w}));
    Tensor x({1, w, 8, 8});
    for (std::size_t i = 0; i < 64; ++i) {
        x[i] = 2.0;
        x[64 + i] = -1.0;
    }
    const Tensor out = fno::spectral_conv(layer, ad::constant(x), false).value();
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_NEAR(out[i], 1.5, 1e-12);
        EXPECT_NEAR(out[64 + i], -0.75, 1e-12);
    }
}

TEST(SpectralConv, DiscardedModesDoNotReachSpectralBranch) {
    const std::size_t w = 2, modes = 3, H = 16, W = 16;
    fno::SpectralLayer layer;
    Tensor spec({2, modes, modes, w, w}, DType::Complex);
    for (double& v : spec.data()) v = 1.0;
    layer.spectral = ad::constant(spec);
    layer.pointwise = ad::constant(Tensor({w, w}));
    layer.pointwise_bias = ad::constant(Tensor({w}));
    // Pure mode (k_t, k_x) = (5, 6): outside both retained corners.
    Tensor x({1, w, H, W});
    for (std::size_t c = 0; c < w; ++c)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                x[(c * H + i) * W + j] = std::cos(2.0 * std::numbers::pi * (5.0 * i / H + 6.0 * j / W));
    const Tensor out = fno::spectral_conv(layer, ad::constant(x), false).value();
    for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Flops, HeadTermsAndWidthStructure) {
    fno::FnoConfig c = small(1);
    const std::size_t nt = 16, nx = 16;
    const double P = 256.0;
    fno::FnoConfig c10 = c;
    c10.n_heads = 10;
    EXPECT_DOUBLE_EQ(fno::count_flops(c10, nt, nx) - fno::count_flops(c, nt, nx), 9.0 * 2.0 * P * c.hidden);
    // Quadratic in width: fit c0 + c1 w + c2 w^2 on w, 2w, 3w and predict 4w.
    auto f = [&](std::size_t w) {
        fno::FnoConfig cw = c;
        cw.width = w;
        return fno::count_flops(cw, nt, nx);
    };
    const double f1 = f(8), f2 = f(16), f3 = f(24), f4 = f(32);
    const double second = f3 - 2 * f2 + f1;           // 2 c2 (8)^2
    const double predicted = 3 * f3 - 3 * f2 + f1;    // exact for quadratics
    EXPECT_NEAR(f4, predicted, 1e-6 * f4);
    // The w^2 coefficient quadruples when width doubles.
    EXPECT_NEAR((f(64) - 2 * f(48) + f(32)) / second, 4.0, 1e-9);
}

TEST(Fno, ParameterCountAndClone) {
    const auto p = fno::FnoParams::init(small(4), 1);
    std::size_t n = 0;
    for (const auto& v : p.variables()) n += v.value().data().size();
    EXPECT_EQ(p.parameter_count(), n);
    auto q = p.clone();
    q.lift_weight.mutable_value()[0] += 1.0;
    EXPECT_NE(q.lift_weight.value()[0], p.lift_weight.value()[0]);
}

TEST(Fno, ModesBeyondNyquistRejectedOrClamped) {
    fno::FnoConfig c = small();
    c.modes_t = c.modes_x = 12;
    EXPECT_THROW(c.validate(8, 8), std::invalid_argument);
    const auto r = c.resolved(8, 8);
    EXPECT_NO_THROW(r.validate(8, 8));
}

TEST(Fno, DropoutOnlyWithGenerator) {
    fno::FnoConfig c = small();
    c.dropout_p = 0.25;
    const auto p = fno::FnoParams::init(c, 2);
    const auto [x, y] = gradcheck::random_batch(1, 8, 8, 7);
    const Tensor a = run(p, x), b = run(p, x);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
    Rng r1(1), r2(1), r3(2);
    const Tensor d1 = fno::forward(p, ad::constant(x), &r1).output.value();
    const Tensor d2 = fno::forward(p, ad::constant(x), &r2).output.value();
    const Tensor d3 = fno::forward(p, ad::constant(x), &r3).output.value();
    double diff12 = 0.0, diff13 = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        diff12 += std::abs(d1[i] - d2[i]);
        diff13 += std::abs(d1[i] - d3[i]);
    }
    EXPECT_EQ(diff12, 0.0);
    EXPECT_GT(diff13, 0.0);
}

TEST(Fno, ChannelFirstLayout) {
    Tensor in({2, 2, 3, 3});
    for (std::size_t i = 0; i < in.numel(); ++i) in[i] = static_cast<double>(i);
    const Tensor out = fno::to_channel_first(in, 1, 1);
    ASSERT_EQ(out.shape(), (Shape{1, 3, 2, 3}));
    // out[0, c, t, x] = in[1, t, x, c]
    EXPECT_EQ(out[(2 * 2 + 1) * 3 + 2], in[((1 * 2 + 1) * 3 + 2) * 3 + 2]);
}

TEST(Fno, HeadLossOnlyReachesItsOwnHead) {
    auto p = fno::FnoParams::init(small(3), 12);
    const auto [x, y] = gradcheck::random_batch(2, 8, 8, 13);
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const auto out = fno::forward(p, ad::constant(x)).output;
    ad::backward(ad::sum(ad::square(ad::slice(out, 1, 1, 2))));
    const Tensor& gw = p.head_weight.grad();
    const Tensor& gb = p.head_bias.grad();
    double own = 0.0;
    for (std::size_t h = 0; h < p.config.hidden; ++h) {
        EXPECT_EQ(gw[h * 3 + 0], 0.0);
        EXPECT_EQ(gw[h * 3 + 2], 0.0);
        own += std::abs(gw[h * 3 + 1]);
    }
    EXPECT_EQ(gb[0], 0.0);
    EXPECT_EQ(gb[2], 0.0);
    EXPECT_GT(own, 0.0);
}

TEST(Fno, HighFrequencyInputComponentsDoNotReachSpectralBranch) {
    fno::FnoConfig c = small();
    c.modes_t = c.modes_x = 2;
    const auto p = fno::FnoParams::init(c, 3);
    const auto& layer = p.layers.front();
    const std::size_t H = 16, W = 16, w = c.width;
    Rng rng(5);
    Tensor a({1, w, H, W});
    for (auto& v : a.storage()) v = rng.normal();
    Tensor b = a;
    // Nyquist-only components sit far outside the retained corners.
    for (std::size_t ch = 0; ch < w; ++ch)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) b[(ch * H + i) * W + j] += ((i + j) % 2 ? -0.3 : 0.3);
    fno::SpectralLayer spectral_only = layer;
    spectral_only.pointwise = ad::constant(Tensor({w, w}));
    spectral_only.pointwise_bias = ad::constant(Tensor({w}));
    const Tensor ya = fno::spectral_conv(spectral_only, ad::constant(a), false).value();
    const Tensor yb = fno::spectral_conv(spectral_only, ad::constant(b), false).value();
    for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_NEAR(ya[i], yb[i], 1e-12);
}
