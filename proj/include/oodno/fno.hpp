#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodno/autodiff.hpp"
#include "oodno/rng.hpp"

namespace oodno::fno {

struct FnoConfig {
    std::size_t n_layers = 4;
    std::size_t width = 32;
    std::size_t modes_t = 12;
    std::size_t modes_x = 12;
    std::size_t in_channels = 3;
    std::size_t hidden = 128;  // projection hidden width
    std::size_t n_heads = 1;
    double dropout_p = 0.0;

    /// Copy with modes clamped to the Nyquist extents of an nt x nx grid.
    FnoConfig resolved(std::size_t nt, std::size_t nx) const;
    void validate(std::size_t nt, std::size_t nx) const;

    nlohmann::ordered_json to_json() const;
    static FnoConfig from_json(const nlohmann::json& j);
};

struct SpectralLayer {
    ad::Var spectral;   // complex [2, modes_t, modes_x, width_in, width_out]
    ad::Var pointwise;  // [width, width]
    ad::Var pointwise_bias;
};

/// Parameters of one multi-head FNO. Heads share everything up to the
/// penultimate (projection hidden) layer; head m owns column m of
/// `head_weight` and entry m of `head_bias`.
struct FnoParams {
    FnoConfig config;
    ad::Var lift_weight, lift_bias;
    std::vector<SpectralLayer> layers;
    ad::Var proj_weight, proj_bias;  // width -> hidden
    ad::Var head_weight, head_bias;  // hidden -> n_heads

    static FnoParams init(const FnoConfig& config, std::uint64_t seed);

    /// Every trainable variable in a fixed order.
    std::vector<ad::Var> variables() const;
    /// Stable names matching variables().
    std::vector<std::string> names() const;

    std::size_t parameter_count() const;
    FnoParams clone() const;
    void zero_grad();
};

struct ForwardResult {
    ad::Var output;    // [B, n_heads, nt, nx]
    ad::Var features;  // [B, hidden, nt, nx], penultimate activations
};

/// Input x is channel-first [B, in_channels, nt, nx]. When `dropout_rng` is
/// non-null and config.dropout_p > 0, fresh inverted-dropout masks are drawn
/// after the lifting and the projection hidden layer.
ForwardResult forward(const FnoParams& params, const ad::Var& x, Rng* dropout_rng = nullptr);

/// One Fourier block: irfft2(W * truncate(rfft2(x))) + pointwise(x), GELU optional.
ad::Var spectral_conv(const SpectralLayer& layer, const ad::Var& x, bool apply_gelu);

/// Analytic FLOP model for one forward pass over an nt x nx grid. Counts, with
/// P = nt*nx, w = width, h = hidden:
///   lifting        2 P C_in w
///   per layer      2 (5 P log2 P) w + 8 w^2 modes_t modes_x + 2 P w^2
///   projection     2 P w h shared, plus 2 P h per head
double count_flops(const FnoConfig& config, std::size_t nt, std::size_t nx);

/// [N, nt, nx, C] -> [N, C, nt, nx] for samples [begin, begin + count).
Tensor to_channel_first(const Tensor& inputs, std::size_t begin, std::size_t count);

}  // namespace oodno::fno
