#include "oodno/uq.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "oodno/metrics.hpp"
#include "oodno/ops.hpp"
#include "oodno/tensor_io.hpp"

namespace oodno::uq {

namespace {

constexpr std::pair<Method, const char*> kMethodNames[] = {{Method::Fno, "fno"},
                                                           {Method::Ensemble, "ensemble"},
                                                           {Method::Diverse, "diverse"},
                                                           {Method::Variance, "variance"},
                                                           {Method::McDropout, "mcdropout"},
                                                           {Method::Bayesian, "bayesian"}};

// Slice head m of [N, M, nt, nx] as [N, nt, nx].
Tensor head_slice(const Tensor& heads, std::size_t m) {
    const std::size_t N = heads.dim(0), M = heads.dim(1), P = heads.dim(2) * heads.dim(3);
    Tensor out({N, heads.dim(2), heads.dim(3)});
    for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(heads.data().begin() + static_cast<std::ptrdiff_t>((n * M + m) * P), P,
                    out.data().begin() + static_cast<std::ptrdiff_t>(n * P));
    }
    return out;
}

}  // namespace

std::string to_string(Method m) {
    for (auto [k, v] : kMethodNames)
        if (k == m) return v;
    return "unknown";
}

Method method_from_string(const std::string& s) {
    for (auto [k, v] : kMethodNames)
        if (s == v) return k;
    throw std::invalid_argument("unknown method '" + s +
                                "' (expected fno, ensemble, diverse, variance, mcdropout or bayesian)");
}

void save_summary(const std::filesystem::path& stem, const PosteriorSummary& s) {
    const std::string base = stem.string();
    io::write_tensor(base + ".mean.bin", s.mean, "mean", "posterior_mean");
    io::write_tensor(base + ".std.bin", s.std, "std", "posterior_std");
    nlohmann::ordered_json j{{"method", to_string(s.method)}, {"shape", s.mean.shape()}, {"meta", s.meta}};
    std::ofstream out(base + ".summary.json", std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed to write summary metadata " + base + ".summary.json");
}

PosteriorSummary load_summary(const std::filesystem::path& stem) {
    const std::string base = stem.string();
    std::ifstream in(base + ".summary.json");
    if (!in) throw std::runtime_error("missing summary metadata " + base + ".summary.json");
    const auto j = nlohmann::json::parse(in);
    PosteriorSummary s;
    s.method = method_from_string(j.at("method"));
    if (j.contains("meta")) s.meta = j.at("meta");
    s.mean = io::read_tensor(base + ".mean.bin");
    s.std = io::read_tensor(base + ".std.bin");
    require_same_shape(s.mean, s.std, "load_summary");
    return s;
}

Tensor predict_heads(const fno::FnoParams& params, const Tensor& inputs, Rng* dropout_rng, std::size_t batch) {
    if (inputs.rank() != 4) throw ShapeError("predict expects channel-first inputs [N, C, nt, nx], got " + shape_str(inputs.shape()));
    const std::size_t N = inputs.dim(0), nt = inputs.dim(2), nx = inputs.dim(3);
    const std::size_t M = params.config.n_heads;
    Tensor out({N, M, nt, nx});
    const std::size_t stride = inputs.numel() / std::max<std::size_t>(N, 1);
    batch = std::max<std::size_t>(batch, 1);
    for (std::size_t begin = 0; begin < N; begin += batch) {
        const std::size_t count = std::min(batch, N - begin);
        Tensor x({count, inputs.dim(1), nt, nx});
        std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(begin * stride), count * stride, x.data().begin());
        const Tensor y = fno::forward(params, ad::constant(std::move(x)), dropout_rng).output.value();
        std::copy(y.data().begin(), y.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * M * nt * nx));
    }
    return out;
}

PosteriorSummary summarize(const std::vector<Tensor>& samples) {
    if (samples.size() < 2) throw std::invalid_argument("summary needs at least two samples");
    for (const auto& s : samples) require_same_shape(samples.front(), s, "summarize");
    const auto K = static_cast<double>(samples.size());
    PosteriorSummary out;
    out.mean = Tensor::zeros_like(samples.front());
    out.std = Tensor::zeros_like(samples.front());
    auto mean = out.mean.data();
    auto sd = out.std.data();
    for (const auto& s : samples) {
        auto v = s.data();
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i];
    }
    for (double& v : mean) v /= K;
    for (const auto& s : samples) {
        auto v = s.data();
        for (std::size_t i = 0; i < sd.size(); ++i) sd[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
    }
    for (double& v : sd) v = std::sqrt(v / (K - 1.0));
    return out;
}

PosteriorSummary ensemble_predict(const std::vector<fno::FnoParams>& models, const Tensor& inputs) {
    if (models.size() < 2) throw std::invalid_argument("ensemble prediction needs at least two members");
    std::vector<Tensor> samples;
    for (const auto& m : models) {
        if (m.config.n_heads != 1) throw std::invalid_argument("ensemble members must be single-head models");
        samples.push_back(head_slice(predict_heads(m, inputs), 0));
    }
    PosteriorSummary s = summarize(samples);
    s.method = Method::Ensemble;
    s.meta["K"] = models.size();
    return s;
}

PosteriorSummary diverse_predict(const fno::FnoParams& model, const Tensor& inputs) {
    const std::size_t M = model.config.n_heads;
    if (M < 2) throw std::invalid_argument("diverse prediction needs at least two heads");
    const Tensor heads = predict_heads(model, inputs);
    std::vector<Tensor> samples;
    for (std::size_t m = 0; m < M; ++m) samples.push_back(head_slice(heads, m));
    PosteriorSummary s = summarize(samples);
    s.method = Method::Diverse;
    s.meta["M"] = M;
    return s;
}

PosteriorSummary variance_predict(const fno::FnoParams& model, const Tensor& inputs) {
    if (model.config.n_heads != 2) throw std::invalid_argument("variance prediction needs a (mean, log-variance) model");
    const Tensor heads = predict_heads(model, inputs);
    PosteriorSummary s;
    s.method = Method::Variance;
    s.mean = head_slice(heads, 0);
    s.std = head_slice(heads, 1);
    for (double& v : s.std.data()) v = std::max(std::exp(0.5 * v), kVarianceStdFloor);
    return s;
}

PosteriorSummary mc_dropout_predict(const fno::FnoParams& model, const Tensor& inputs, std::size_t n_masks,
                                    std::uint64_t seed) {
    if (!(model.config.dropout_p > 0.0)) throw std::invalid_argument("MC dropout needs a model with dropout p > 0");
    if (model.config.n_heads != 1) throw std::invalid_argument("MC dropout expects a single-head model");
    Rng rng(derive_seed(seed, 21));
    std::vector<Tensor> samples;
    for (std::size_t k = 0; k < n_masks; ++k) samples.push_back(head_slice(predict_heads(model, inputs, &rng), 0));
    PosteriorSummary s = summarize(samples);
    s.method = Method::McDropout;
    s.meta["n_masks"] = n_masks;
    s.meta["dropout_p"] = model.config.dropout_p;
    return s;
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Penultimate features of every sample, [N, hidden, nt, nx].
Tensor features_of(const fno::FnoParams& model, const Tensor& inputs, std::size_t batch = 20) {
    const std::size_t N = inputs.dim(0), nt = inputs.dim(2), nx = inputs.dim(3), H = model.config.hidden;
    Tensor out({N, H, nt, nx});
    const std::size_t stride = inputs.numel() / std::max<std::size_t>(N, 1);
    for (std::size_t begin = 0; begin < N; begin += batch) {
        const std::size_t count = std::min(batch, N - begin);
        Tensor x({count, inputs.dim(1), nt, nx});
        std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(begin * stride), count * stride, x.data().begin());
        const Tensor f = fno::forward(model, ad::constant(std::move(x))).features.value();
        std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * H * nt * nx));
    }
    return out;
}

}  // namespace

LaplacePosterior laplace_fit(const fno::FnoParams& model, const train::BatchSource& train_set, double alpha) {
    if (model.config.n_heads != 1) throw std::invalid_argument("Laplace fit expects a single-head model");
    if (!(alpha > 0.0)) throw std::invalid_argument("Laplace prior precision root alpha must be positive");
    const std::size_t H = model.config.hidden;
    const auto D = static_cast<Eigen::Index>(H + 1);
    LaplacePosterior post;
    post.alpha = alpha;
    post.map_weights.resize(D);
    for (std::size_t h = 0; h < H; ++h) post.map_weights(static_cast<Eigen::Index>(h)) = model.head_weight.value()[h];
    post.map_weights(D - 1) = model.head_bias.value()[0];

    // Data term sum_i Phi_i^T Phi_i / ||u_i||^2 (the alpha^2 factor applied below).
    Eigen::MatrixXd data_term = Eigen::MatrixXd::Zero(D, D);
    const std::size_t N = train_set.size();
    if (N > 0) {
        const Tensor feats = features_of(model, train_set.inputs);
        const std::size_t P = feats.dim(2) * feats.dim(3);
        for (std::size_t i = 0; i < N; ++i) {
            double nu = 0.0;
            for (std::size_t p = 0; p < P; ++p) nu += train_set.targets[i * P + p] * train_set.targets[i * P + p];
            if (nu == 0.0) throw std::invalid_argument("Laplace fit: training target with zero norm");
            RowMat phi(D, static_cast<Eigen::Index>(P));  // feature-major: column p is [phi_p; 1]
            phi.topRows(D - 1) = Eigen::Map<const RowMat>(feats.data().data() + i * H * P, D - 1, static_cast<Eigen::Index>(P));
            phi.row(D - 1).setOnes();
            data_term.noalias() += (phi * phi.transpose()) / nu;
        }
    }
    const double a2 = alpha * alpha;
    post.precision = a2 * (Eigen::MatrixXd::Identity(D, D) + data_term);
    Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
    if (llt.info() != Eigen::Success) {
        post.precision.diagonal().array() += 1e-10;
        post.jittered = true;
        llt.compute(post.precision);
        if (llt.info() != Eigen::Success) throw std::runtime_error("Laplace posterior precision is not positive definite");
    }
    post.covariance = llt.solve(Eigen::MatrixXd::Identity(D, D));
    return post;
}

PosteriorSummary laplace_predict(const LaplacePosterior& posterior, const fno::FnoParams& model, const Tensor& inputs) {
    const std::size_t H = model.config.hidden;
    const auto D = static_cast<Eigen::Index>(H + 1);
    if (posterior.covariance.rows() != D) throw ShapeError("Laplace posterior does not match the model head");
    const Tensor feats = features_of(model, inputs);
    const std::size_t N = feats.dim(0), nt = feats.dim(2), nx = feats.dim(3), P = nt * nx;
    PosteriorSummary s;
    s.method = Method::Bayesian;
    s.meta["alpha"] = posterior.alpha;
    s.mean = Tensor({N, nt, nx});
    s.std = Tensor({N, nt, nx});
    const double a2 = posterior.alpha * posterior.alpha;
    for (std::size_t i = 0; i < N; ++i) {
        RowMat phi(D, static_cast<Eigen::Index>(P));
        phi.topRows(D - 1) = Eigen::Map<const RowMat>(feats.data().data() + i * H * P, D - 1, static_cast<Eigen::Index>(P));
        phi.row(D - 1).setOnes();
        const Eigen::RowVectorXd mean = posterior.map_weights.transpose() * phi;
        const RowMat cphi = posterior.covariance * phi;
        const Eigen::RowVectorXd quad = (phi.array() * cphi.array()).colwise().sum();
        const double noise = mean.squaredNorm() / a2;
        for (std::size_t p = 0; p < P; ++p) {
            s.mean[i * P + p] = mean(static_cast<Eigen::Index>(p));
            s.std[i * P + p] = std::sqrt(std::max(quad(static_cast<Eigen::Index>(p)), 0.0) + noise);
        }
    }
    return s;
}

LaplacePosterior laplace_select(const fno::FnoParams& model, const train::BatchSource& train_set,
                                const train::BatchSource& val_set, std::vector<double> alphas) {
    if (alphas.empty()) throw std::invalid_argument("Laplace selection needs at least one alpha");
    LaplacePosterior best;
    double best_nll = std::numeric_limits<double>::infinity();
    for (double a : alphas) {
        LaplacePosterior post = laplace_fit(model, train_set, a);
        const auto s = laplace_predict(post, model, val_set.inputs);
        const double nll = metrics::gaussian_nll(s.mean.data(), s.std.data(), val_set.targets.data());
        if (nll < best_nll) {
            best_nll = nll;
            best = std::move(post);
        }
    }
    return best;
}

Tensor spectral_magnitude_map(const fno::FnoParams& model, std::size_t layer) {
    if (layer >= model.layers.size()) throw std::out_of_range("spectral layer index out of range");
    const Tensor& w = model.layers[layer].spectral.value();  // [2, mt, mx, Cin, Cout]
    const std::size_t modes = w.dim(0) * w.dim(1) * w.dim(2), cin = w.dim(3), cout = w.dim(4);
    Tensor out({cin, modes});
    const auto c = w.cdata();
    for (std::size_t k = 0; k < modes; ++k)
        for (std::size_t i = 0; i < cin; ++i) {
            double acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) acc += std::abs(c[(k * cin + i) * cout + o]);
            out[i * modes + k] = acc / static_cast<double>(cout);
        }
    return out;
}

Tensor coefficient_of_variation(const std::vector<Tensor>& maps) {
    if (maps.size() < 2) throw std::invalid_argument("coefficient of variation needs at least two members");
    const PosteriorSummary s = summarize(maps);
    Tensor cov = Tensor::zeros_like(s.mean);
    for (std::size_t i = 0; i < cov.numel(); ++i) cov[i] = s.mean[i] != 0.0 ? s.std[i] / std::abs(s.mean[i]) : 0.0;
    return cov;
}

}  // namespace oodno::uq
