#include "oodno/fno.hpp"

#include <cmath>
#include <stdexcept>

#include "oodno/ops.hpp"

namespace oodno::fno {

FnoConfig FnoConfig::resolved(std::size_t nt, std::size_t nx) const {
    FnoConfig c = *this;
    c.modes_t = std::min(c.modes_t, nt / 2);
    c.modes_x = std::min(c.modes_x, nx / 2);
    return c;
}

void FnoConfig::validate(std::size_t nt, std::size_t nx) const {
    if (n_heads < 1) throw std::invalid_argument("FNO needs at least one head");
    if (width == 0 || hidden == 0 || in_channels == 0) throw std::invalid_argument("FNO extents must be positive");
    if (modes_t == 0 || modes_x == 0) throw std::invalid_argument("FNO needs at least one retained mode per axis");
    if (modes_t > nt / 2 || modes_x > nx / 2) {
        throw std::invalid_argument("retained modes (" + std::to_string(modes_t) + ", " + std::to_string(modes_x) +
                                    ") exceed the Nyquist extents of a " + std::to_string(nt) + "x" +
                                    std::to_string(nx) + " grid");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
}

nlohmann::ordered_json FnoConfig::to_json() const {
    return {{"n_layers", n_layers}, {"width", width},   {"modes_t", modes_t},     {"modes_x", modes_x},
            {"in_channels", in_channels}, {"hidden", hidden}, {"n_heads", n_heads}, {"dropout_p", dropout_p}};
}

FnoConfig FnoConfig::from_json(const nlohmann::json& j) {
    FnoConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.width = j.value("width", c.width);
    c.modes_t = j.value("modes_t", c.modes_t);
    c.modes_x = j.value("modes_x", c.modes_x);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.hidden = j.value("hidden", c.hidden);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    return c;
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

FnoParams FnoParams::init(const FnoConfig& config, std::uint64_t seed) {
    Rng rng(seed);
    FnoParams p;
    p.config = config;
    const std::size_t w = config.width;
    const double lift_bound = 1.0 / std::sqrt(static_cast<double>(config.in_channels));
    const double w_bound = 1.0 / std::sqrt(static_cast<double>(w));
    const double h_bound = 1.0 / std::sqrt(static_cast<double>(config.hidden));

    p.lift_weight = ad::parameter(uniform_tensor({config.in_channels, w}, lift_bound, rng));
    p.lift_bias = ad::parameter(uniform_tensor({w}, lift_bound, rng));
    const double spec_scale = 1.0 / static_cast<double>(w * w);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        Tensor spec({2, config.modes_t, config.modes_x, w, w}, DType::Complex);
        for (double& v : spec.data()) v = spec_scale * rng.uniform();
        SpectralLayer layer;
        layer.spectral = ad::parameter(std::move(spec));
        layer.pointwise = ad::parameter(uniform_tensor({w, w}, w_bound, rng));
        layer.pointwise_bias = ad::parameter(uniform_tensor({w}, w_bound, rng));
        p.layers.push_back(std::move(layer));
    }
    p.proj_weight = ad::parameter(uniform_tensor({w, config.hidden}, w_bound, rng));
    p.proj_bias = ad::parameter(uniform_tensor({config.hidden}, w_bound, rng));
    p.head_weight = ad::parameter(uniform_tensor({config.hidden, config.n_heads}, h_bound, rng));
    p.head_bias = ad::parameter(uniform_tensor({config.n_heads}, h_bound, rng));
    return p;
}

std::vector<ad::Var> FnoParams::variables() const {
    std::vector<ad::Var> v{lift_weight, lift_bias};
    for (const auto& l : layers) {
        v.push_back(l.spectral);
        v.push_back(l.pointwise);
        v.push_back(l.pointwise_bias);
    }
    v.insert(v.end(), {proj_weight, proj_bias, head_weight, head_bias});
    return v;
}

std::vector<std::string> FnoParams::names() const {
    std::vector<std::string> n{"lift_weight", "lift_bias"};
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + "_";
        n.push_back(prefix + "spectral");
        n.push_back(prefix + "pointwise");
        n.push_back(prefix + "pointwise_bias");
    }
    n.insert(n.end(), {"proj_weight", "proj_bias", "head_weight", "head_bias"});
    return n;
}

std::size_t FnoParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : variables()) n += v.value().data().size();
    return n;
}

FnoParams FnoParams::clone() const {
    FnoParams c;
    c.config = config;
    auto copy = [](const ad::Var& v) { return ad::parameter(v.value()); };
    c.lift_weight = copy(lift_weight);
    c.lift_bias = copy(lift_bias);
    for (const auto& l : layers) c.layers.push_back({copy(l.spectral), copy(l.pointwise), copy(l.pointwise_bias)});
    c.proj_weight = copy(proj_weight);
    c.proj_bias = copy(proj_bias);
    c.head_weight = copy(head_weight);
    c.head_bias = copy(head_bias);
    return c;
}

void FnoParams::zero_grad() {
    for (auto v : variables()) v.zero_grad();
}

ad::Var spectral_conv(const SpectralLayer& layer, const ad::Var& x, bool apply_gelu) {
    const std::size_t nx = x.value().dim(3);
    ad::Var spec = ad::rfft2(x);
    ad::Var mixed = ad::spectral_mix(spec, layer.spectral);
    ad::Var spectral_branch = ad::irfft2(mixed, nx);
    ad::Var pointwise_branch = ad::channel_linear(x, layer.pointwise, layer.pointwise_bias);
    ad::Var y = ad::add(spectral_branch, pointwise_branch);
    return apply_gelu ? ad::gelu(y) : y;
}

namespace {

Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
    Tensor m(shape);
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& v : m.data()) v = rng.uniform() < p ? 0.0 : keep_scale;
    return m;
}

}  // namespace

ForwardResult forward(const FnoParams& params, const ad::Var& x, Rng* dropout_rng) {
    const FnoConfig& cfg = params.config;
    const Tensor& xv = x.value();
    if (xv.rank() != 4 || xv.dim(1) != cfg.in_channels) {
        throw ShapeError("fno forward expects [B, " + std::to_string(cfg.in_channels) + ", nt, nx], got " +
                         shape_str(xv.shape()));
    }
    cfg.validate(xv.dim(2), xv.dim(3));
    const bool dropout = dropout_rng != nullptr && cfg.dropout_p > 0.0;

    ad::Var h = ad::channel_linear(x, params.lift_weight, params.lift_bias);
    if (dropout) h = ad::dropout_mask_apply(h, dropout_mask(h.shape(), cfg.dropout_p, *dropout_rng));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        h = spectral_conv(params.layers[l], h, l + 1 < params.layers.size());
    }
    ad::Var feats = ad::gelu(ad::channel_linear(h, params.proj_weight, params.proj_bias));
    if (dropout) feats = ad::dropout_mask_apply(feats, dropout_mask(feats.shape(), cfg.dropout_p, *dropout_rng));
    ad::Var out = ad::channel_linear(feats, params.head_weight, params.head_bias);
    return {out, feats};
}

double count_flops(const FnoConfig& config, std::size_t nt, std::size_t nx) {
    const double P = static_cast<double>(nt * nx);
    const double w = static_cast<double>(config.width);
    const double h = static_cast<double>(config.hidden);
    const double lifting = 2.0 * P * static_cast<double>(config.in_channels) * w;
    const double fft = 2.0 * (5.0 * P * std::log2(P)) * w;
    const double mixing = 8.0 * w * w * static_cast<double>(config.modes_t * config.modes_x);
    const double pointwise = 2.0 * P * w * w;
    const double per_layer = fft + mixing + pointwise;
    const double projection = 2.0 * P * w * h + 2.0 * P * h * static_cast<double>(config.n_heads);
    return lifting + static_cast<double>(config.n_layers) * per_layer + projection;
}

Tensor to_channel_first(const Tensor& inputs, std::size_t begin, std::size_t count) {
    if (inputs.rank() != 4 || begin + count > inputs.dim(0)) {
        throw ShapeError("to_channel_first expects [N, nt, nx, C] covering the requested range, got " +
                         shape_str(inputs.shape()));
    }
    const std::size_t nt = inputs.dim(1), nx = inputs.dim(2), c = inputs.dim(3);
    Tensor out({count, c, nt, nx});
    for (std::size_t b = 0; b < count; ++b)
        for (std::size_t t = 0; t < nt; ++t)
            for (std::size_t x = 0; x < nx; ++x)
                for (std::size_t k = 0; k < c; ++k)
                    out[((b * c + k) * nt + t) * nx + x] = inputs[(((begin + b) * nt + t) * nx + x) * c + k];
    return out;
}

}  // namespace oodno::fno
