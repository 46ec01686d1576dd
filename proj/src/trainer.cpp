#include "oodno/trainer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "oodno/ops.hpp"
#include "oodno/tensor_io.hpp"

namespace oodno::train {

using ad::BackwardContext;
using ad::Var;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::RelL2: return "rel_l2";
        case LossKind::NLL: return "nll";
        case LossKind::DiverseRelL2: return "diverse_rel_l2";
    }
    return "unknown";
}

std::string to_string(DiversityKind k) {
    switch (k) {
        case DiversityKind::Weights: return "weights";
        case DiversityKind::Outputs: return "outputs";
        case DiversityKind::Gradients: return "gradients";
    }
    return "unknown";
}

LossKind loss_from_string(const std::string& s) {
    for (auto k : {LossKind::RelL2, LossKind::NLL, LossKind::DiverseRelL2})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown loss '" + s + "'");
}

DiversityKind diversity_from_string(const std::string& s) {
    for (auto k : {DiversityKind::Weights, DiversityKind::Outputs, DiversityKind::Gradients})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown diversity kind '" + s + "'");
}

nlohmann::ordered_json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"lr", lr},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"seed", seed},
            {"loss", to_string(loss)},
            {"lambda_diverse", lambda_diverse},
            {"diversity_kind", to_string(diversity_kind)},
            {"standardized", standardized},
            {"max_steps", max_steps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = loss_from_string(j.at("loss"));
    c.lambda_diverse = j.value("lambda_diverse", c.lambda_diverse);
    if (j.contains("diversity_kind")) c.diversity_kind = diversity_from_string(j.at("diversity_kind"));
    c.standardized = j.value("standardized", c.standardized);
    c.max_steps = j.value("max_steps", c.max_steps);
    return c;
}

// ---- losses ---------------------------------------------------------------

namespace {

void check_pred_target(const Tensor& p, const Tensor& u, const char* op) {
    if (p.rank() != 4 || u.rank() != 3 || p.dim(0) != u.dim(0) || p.dim(2) != u.dim(1) || p.dim(3) != u.dim(2)) {
        throw ShapeError(std::string(op) + ": predictions " + shape_str(p.shape()) + " do not match targets " +
                         shape_str(u.shape()));
    }
}

std::vector<double> target_norms(const Tensor& u, std::size_t B, std::size_t P) {
    std::vector<double> nu(B);
    for (std::size_t b = 0; b < B; ++b) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += u[b * P + p] * u[b * P + p];
        if (s == 0.0) throw std::invalid_argument("relative L2 loss: target " + std::to_string(b) + " has zero norm");
        nu[b] = s;
    }
    return nu;
}

}  // namespace

Var rel_l2_loss(const Var& preds, const Tensor& targets) {
    const Tensor& p = preds.value();
    check_pred_target(p, targets, "rel_l2_loss");
    const std::size_t B = p.dim(0), M = p.dim(1), P = p.dim(2) * p.dim(3);
    if (M == 0) throw std::invalid_argument("rel_l2_loss needs at least one head");
    auto nu = target_norms(targets, B, P);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t m = 0; m < M; ++m) {
            const double* pb = p.data().data() + (b * M + m) * P;
            const double* ub = targets.data().data() + b * P;
            double s = 0.0;
            for (std::size_t i = 0; i < P; ++i) s += (pb[i] - ub[i]) * (pb[i] - ub[i]);
            total += s / nu[b];
        }
    }
    const double norm = 1.0 / static_cast<double>(B * M);
    return ad::make_result(Tensor::scalar(total * norm), {preds},
                           [targets, nu, B, M, P, norm](const BackwardContext& c) {
                               if (!c.input_grads[0]) return;
                               const double go = (*c.grad_output)[0];
                               auto g = c.input_grads[0]->data();
                               auto pv = c.inputs[0]->data();
                               for (std::size_t b = 0; b < B; ++b) {
                                   const double f = 2.0 * go * norm / nu[b];
                                   for (std::size_t m = 0; m < M; ++m) {
                                       const std::size_t off = (b * M + m) * P;
                                       for (std::size_t i = 0; i < P; ++i) {
                                           g[off + i] += f * (pv[off + i] - targets[b * P + i]);
                                       }
                                   }
                               }
                           });
}

double rel_l2(const Tensor& preds, const Tensor& targets) { return rel_l2_loss(ad::constant(preds), targets).value()[0]; }

namespace {

// Gathers head rows r_m = x[:, m, ...] into an M x D matrix.
RowMat gather_rows(const Tensor& x) {
    const std::size_t B = x.dim(0), M = x.dim(1), R = x.numel() / (B * M);
    RowMat rows(M, B * R);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t r = 0; r < R; ++r) rows(m, b * R + r) = x[(b * M + m) * R + r];
    return rows;
}

void scatter_rows_add(const RowMat& rows, Tensor& x) {
    const std::size_t B = x.dim(0), M = x.dim(1), R = x.numel() / (B * M);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t r = 0; r < R; ++r) x[(b * M + m) * R + r] += rows(m, b * R + r);
}

constexpr double kStdEps = 1e-12;

}  // namespace

Var pairwise_head_distance(const Var& x, bool standardize) {
    const Tensor& xv = x.value();
    if (xv.rank() < 2 || xv.is_complex()) throw ShapeError("pairwise_head_distance expects real [B, M, ...], got " + shape_str(xv.shape()));
    RowMat rows = gather_rows(xv);
    const auto D = static_cast<double>(rows.cols());
    Eigen::VectorXd mu, sd;
    if (standardize) {
        mu = rows.rowwise().mean();
        rows.colwise() -= mu;
        sd = ((rows.array().square().rowwise().sum() / D) + kStdEps).sqrt();
        rows.array().colwise() /= sd.array();
    }
    // Direct pair loop: identical heads give exactly zero.
    double value = 0.0;
    for (Eigen::Index m = 0; m < rows.rows(); ++m)
        for (Eigen::Index k = m + 1; k < rows.rows(); ++k) value += (rows.row(m) - rows.row(k)).squaredNorm();
    return ad::make_result(Tensor::scalar(value), {x}, [rows, sd, standardize, D](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const double go = (*c.grad_output)[0];
        RowMat g = RowMat::Zero(rows.rows(), rows.cols());
        for (Eigen::Index m = 0; m < rows.rows(); ++m)
            for (Eigen::Index k = 0; k < rows.rows(); ++k)
                if (k != m) g.row(m) += (2.0 * go) * (rows.row(m) - rows.row(k));
        if (standardize) {
            // z = (r - mean) / sd: dr = (g - mean g) / sd - z mean(g z) / sd
            for (Eigen::Index m = 0; m < g.rows(); ++m) {
                const double gm = g.row(m).mean();
                const double gz = g.row(m).dot(rows.row(m)) / D;
                g.row(m) = ((g.row(m).array() - gm) - rows.row(m).array() * gz) / sd(m);
            }
        }
        scatter_rows_add(g, *c.input_grads[0]);
    });
}

Var head_parameter_rows(const Var& head_weight, const Var& head_bias) {
    const Tensor& w = head_weight.value();
    const Tensor& b = head_bias.value();
    if (w.rank() != 2 || b.rank() != 1 || w.dim(1) != b.dim(0)) {
        throw ShapeError("head_parameter_rows: weight " + shape_str(w.shape()) + " and bias " + shape_str(b.shape()) +
                         " disagree");
    }
    const std::size_t H = w.dim(0), M = w.dim(1);
    Tensor out({1, M, H + 1});
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t h = 0; h < H; ++h) out[m * (H + 1) + h] = w[h * M + m];
        out[m * (H + 1) + H] = b[m];
    }
    return ad::make_result(std::move(out), {head_weight, head_bias}, [H, M](const BackwardContext& c) {
        auto go = c.grad_output->data();
        if (c.input_grads[0]) {
            auto g = c.input_grads[0]->data();
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t h = 0; h < H; ++h) g[h * M + m] += go[m * (H + 1) + h];
        }
        if (c.input_grads[1]) {
            auto g = c.input_grads[1]->data();
            for (std::size_t m = 0; m < M; ++m) g[m] += go[m * (H + 1) + H];
        }
    });
}

Var head_loss_gradients(const Var& preds, const Var& features, const Tensor& targets) {
    const Tensor& p = preds.value();
    const Tensor& f = features.value();
    check_pred_target(p, targets, "head_loss_gradients");
    if (f.rank() != 4 || f.dim(0) != p.dim(0) || f.dim(2) != p.dim(2) || f.dim(3) != p.dim(3)) {
        throw ShapeError("head_loss_gradients: features " + shape_str(f.shape()) + " do not match predictions " +
                         shape_str(p.shape()));
    }
    const std::size_t B = p.dim(0), M = p.dim(1), H = f.dim(1), P = p.dim(2) * p.dim(3);
    auto nu = target_norms(targets, B, P);
    std::vector<double> coef(B);
    for (std::size_t b = 0; b < B; ++b) coef[b] = 2.0 / (static_cast<double>(B) * nu[b]);

    // Residuals r_b = p_b - u_b broadcast over heads, [M x P] per sample.
    std::vector<RowMat> resid(B);
    RowMat G = RowMat::Zero(M, H + 1);
    for (std::size_t b = 0; b < B; ++b) {
        RowMat r = CMap(p.data().data() + b * M * P, M, P);
        r.rowwise() -= Eigen::Map<const Eigen::RowVectorXd>(targets.data().data() + b * P, P);
        CMap phi(f.data().data() + b * H * P, H, P);
        G.leftCols(H).noalias() += coef[b] * r * phi.transpose();
        G.col(H) += coef[b] * r.rowwise().sum();
        resid[b] = std::move(r);
    }
    Tensor out({1, M, H + 1});
    Map(out.data().data(), M, H + 1) = G;
    return ad::make_result(std::move(out), {preds, features},
                           [resid, coef, B, M, H, P](const BackwardContext& c) {
                               CMap go(c.grad_output->data().data(), M, H + 1);
                               for (std::size_t b = 0; b < B; ++b) {
                                   if (c.input_grads[0]) {
                                       CMap phi(c.inputs[1]->data().data() + b * H * P, H, P);
                                       Map gp(c.input_grads[0]->data().data() + b * M * P, M, P);
                                       gp.noalias() += coef[b] * go.leftCols(H) * phi;
                                       gp.colwise() += coef[b] * go.col(H);
                                   }
                                   if (c.input_grads[1]) {
                                       Map gf(c.input_grads[1]->data().data() + b * H * P, H, P);
                                       gf.noalias() += coef[b] * go.leftCols(H).transpose() * resid[b];
                                   }
                               }
                           });
}

Var diverse_loss_rows(const Var& preds, const Tensor& targets, const Var& rows, double lambda, bool standardize) {
    Var base = rel_l2_loss(preds, targets);
    if (lambda == 0.0) return base;
    const std::size_t M = preds.value().dim(1);
    if (M < 2) throw std::invalid_argument("diversity regularization needs at least two heads when lambda > 0");
    if (rows.value().rank() < 2 || rows.value().dim(1) != M) {
        throw ShapeError("diversity rows " + shape_str(rows.value().shape()) + " do not have " + std::to_string(M) +
                         " heads on axis 1");
    }
    const double coef = 2.0 * lambda / static_cast<double>(M * (M - 1));
    return ad::sub(base, ad::scale(pairwise_head_distance(rows, standardize), coef));
}

Var diverse_loss(const Var& preds, const Tensor& targets, const Var& head_weight, const Var& head_bias,
                 double lambda) {
    if (lambda == 0.0) return rel_l2_loss(preds, targets);
    return diverse_loss_rows(preds, targets, head_parameter_rows(head_weight, head_bias), lambda, false);
}

Var nll_loss(const Var& mean, const Var& log_var, const Tensor& targets) {
    const Tensor& mu = mean.value();
    const Tensor& lv = log_var.value();
    require_same_shape(mu, lv, "nll_loss");
    if (mu.numel() != targets.numel() || mu.numel() == 0) {
        throw ShapeError("nll_loss: mean " + shape_str(mu.shape()) + " does not match targets " +
                         shape_str(targets.shape()));
    }
    const double log_floor = std::log(1e-12);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const std::size_t n = mu.numel();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = std::max(lv[i], log_floor);
        const double d = targets[i] - mu[i];
        total += 0.5 * (l + d * d * std::exp(-l) + log2pi);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return ad::make_result(Tensor::scalar(total * inv_n), {mean, log_var},
                           [targets, n, inv_n, log_floor](const BackwardContext& c) {
                               const double go = (*c.grad_output)[0] * inv_n;
                               const auto& mu = *c.inputs[0];
                               const auto& lv = *c.inputs[1];
                               for (std::size_t i = 0; i < n; ++i) {
                                   const bool floored = lv[i] < log_floor;
                                   const double inv_s2 = std::exp(-std::max(lv[i], log_floor));
                                   const double d = targets[i] - mu[i];
                                   if (c.input_grads[0]) (*c.input_grads[0])[i] -= go * d * inv_s2;
                                   if (c.input_grads[1] && !floored) (*c.input_grads[1])[i] += go * 0.5 * (1.0 - d * d * inv_s2);
                               }
                           });
}

// ---- optimizer ------------------------------------------------------------

Adam::Adam(std::vector<Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.value().data().size(), 0.0);
        v_.emplace_back(p.value().data().size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Var& p = params_[k];
        if (p.grad().empty()) continue;
        auto w = p.mutable_value().data();
        auto g = p.grad().data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

// ---- training ---------------------------------------------------------------

BatchSource BatchSource::from(const pde::Dataset& data) {
    BatchSource s;
    if (data.size() == 0) return s;
    s.inputs = fno::to_channel_first(data.inputs, 0, data.size());
    s.targets = data.targets;
    return s;
}

Tensor BatchSource::gather_inputs(const std::vector<std::size_t>& idx) const {
    Shape shape = inputs.shape();
    const std::size_t stride = inputs.numel() / shape[0];
    shape[0] = idx.size();
    Tensor out(shape);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(inputs.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * stride), stride,
                    out.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
    }
    return out;
}

Tensor BatchSource::gather_targets(const std::vector<std::size_t>& idx) const {
    Shape shape = targets.shape();
    const std::size_t stride = targets.numel() / shape[0];
    shape[0] = idx.size();
    Tensor out(shape);
    for (std::size_t k = 0; k < idx.size(); ++k) {
        std::copy_n(targets.data().begin() + static_cast<std::ptrdiff_t>(idx[k] * stride), stride,
                    out.data().begin() + static_cast<std::ptrdiff_t>(k * stride));
    }
    return out;
}

namespace {

Tensor with_head_axis(const Tensor& targets) {
    return targets.reshaped({targets.dim(0), 1, targets.dim(1), targets.dim(2)});
}

void require_variance_heads(const fno::FnoParams& params) {
    if (params.config.n_heads != 2) {
        throw std::invalid_argument("negative log-likelihood training needs a two-head (mean, log-variance) model");
    }
}

}  // namespace

Var batch_loss(const fno::FnoParams& params, const Tensor& inputs, const Tensor& targets, const TrainConfig& cfg,
               Rng* dropout_rng, const Tensor* ood_inputs) {
    const auto fw = fno::forward(params, ad::constant(inputs), dropout_rng);
    switch (cfg.loss) {
        case LossKind::RelL2: return rel_l2_loss(fw.output, targets);
        case LossKind::NLL: {
            require_variance_heads(params);
            return nll_loss(ad::slice(fw.output, 1, 0, 1), ad::slice(fw.output, 1, 1, 2), with_head_axis(targets));
        }
        case LossKind::DiverseRelL2: {
            if (cfg.lambda_diverse == 0.0) return rel_l2_loss(fw.output, targets);
            Var rows;
            switch (cfg.diversity_kind) {
                case DiversityKind::Weights: rows = head_parameter_rows(params.head_weight, params.head_bias); break;
                case DiversityKind::Outputs:
                    if (!ood_inputs) throw std::invalid_argument("output diversity needs unlabeled OOD inputs");
                    rows = fno::forward(params, ad::constant(*ood_inputs), dropout_rng).output;
                    break;
                case DiversityKind::Gradients: rows = head_loss_gradients(fw.output, fw.features, targets); break;
            }
            return diverse_loss_rows(fw.output, targets, rows, cfg.lambda_diverse, cfg.standardized);
        }
    }
    throw std::logic_error("unhandled loss kind");
}

std::pair<double, double> evaluate(const fno::FnoParams& params, const BatchSource& data, const TrainConfig& cfg) {
    const std::size_t n = data.size();
    if (n == 0) return {0.0, 0.0};
    const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
    double loss_sum = 0.0, se_sum = 0.0;
    std::size_t points = 0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
        const std::size_t count = std::min(bs, n - begin);
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor x = data.gather_inputs(idx);
        const Tensor u = data.gather_targets(idx);
        const Tensor out = fno::forward(params, ad::constant(x)).output.value();
        const std::size_t M = out.dim(1), P = out.dim(2) * out.dim(3);
        if (cfg.loss == LossKind::NLL) {
            require_variance_heads(params);
            const auto mu = ad::slice(ad::constant(out), 1, 0, 1).value();
            const auto lv = ad::slice(ad::constant(out), 1, 1, 2).value();
            loss_sum += nll_loss(ad::constant(mu), ad::constant(lv), u).value()[0] * static_cast<double>(count);
            for (std::size_t b = 0; b < count; ++b)
                for (std::size_t i = 0; i < P; ++i) {
                    const double d = out[(b * M) * P + i] - u[b * P + i];
                    se_sum += d * d;
                }
        } else {
            loss_sum += rel_l2(out, u) * static_cast<double>(count);
            for (std::size_t b = 0; b < count; ++b)
                for (std::size_t i = 0; i < P; ++i) {
                    double mean = 0.0;
                    for (std::size_t m = 0; m < M; ++m) mean += out[(b * M + m) * P + i];
                    mean /= static_cast<double>(M);
                    const double d = mean - u[b * P + i];
                    se_sum += d * d;
                }
        }
        points += count * P;
    }
    return {loss_sum / static_cast<double>(n), se_sum / static_cast<double>(points)};
}

namespace {

bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

Checkpoint train(const fno::FnoParams& init, const pde::Dataset& train_set, const pde::Dataset& val_set,
                 const TrainConfig& cfg, const pde::Dataset* ood_unlabeled) {
    if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
    fno::FnoParams params = init.clone();
    const BatchSource tr = BatchSource::from(train_set);
    const BatchSource va = val_set.size() ? BatchSource::from(val_set) : tr;
    BatchSource ood;
    if (cfg.loss == LossKind::DiverseRelL2 && cfg.diversity_kind == DiversityKind::Outputs && cfg.lambda_diverse != 0.0) {
        if (!ood_unlabeled || ood_unlabeled->size() == 0) {
            throw std::invalid_argument("output diversity training needs unlabeled OOD inputs");
        }
        ood = BatchSource::from(*ood_unlabeled);
    }

    Checkpoint best;
    best.train_config = cfg;
    std::tie(best.val_loss, best.val_mse) = evaluate(params, va, cfg);
    best.params = params.clone();

    Rng shuffle_rng(derive_seed(cfg.seed, 11));
    Rng dropout_rng(derive_seed(cfg.seed, 12));
    Rng ood_rng(derive_seed(cfg.seed, 13));
    Rng* drop = params.config.dropout_p > 0.0 ? &dropout_rng : nullptr;
    Adam opt(params.variables(), cfg.lr);
    std::vector<Var> vars = params.variables();
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t since_best = 0;
    bool stop = false;
    for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !stop && tr.size() > 0; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - begin);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(begin + count));
            Tensor ood_batch;
            if (ood.size()) {
                std::vector<std::size_t> oidx(std::min(cfg.batch_size, ood.size()));
                for (auto& k : oidx) k = ood_rng.index(ood.size());
                ood_batch = ood.gather_inputs(oidx);
            }
            ad::Tape tape;
            ad::TapeScope scope(tape);
            params.zero_grad();
            Var loss = batch_loss(params, tr.gather_inputs(idx), tr.gather_targets(idx), cfg, drop,
                                  ood.size() ? &ood_batch : nullptr);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) {
                throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch),
                                      params.clone());
            }
            tape.backward(loss);
            for (const auto& v : vars) {
                if (!v.grad().empty() && !all_finite(v.grad().data())) {
                    throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch), params.clone());
                }
            }
            opt.step();
            loss_sum += lv;
            ++batches;
            if (cfg.max_steps && opt.steps() >= cfg.max_steps) {
                stop = true;
                break;
            }
        }
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        std::tie(log.val_loss, log.val_mse) = evaluate(params, va, cfg);
        best.log.push_back(log);
        if (!std::isfinite(log.val_loss)) {
            throw DivergenceError("validation loss became non-finite at epoch " + std::to_string(epoch),
                                  best.params.clone());
        }
        if (log.val_loss < best.val_loss) {
            best.val_loss = log.val_loss;
            best.val_mse = log.val_mse;
            best.epoch = epoch;
            best.params = params.clone();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            stop = true;
        }
    }
    best.steps = opt.steps();
    return best;
}

double select_lambda(const std::vector<double>& candidates, const std::vector<double>& val_mse) {
    if (candidates.empty() || candidates.size() != val_mse.size()) {
        throw std::invalid_argument("select_lambda needs one validation MSE per candidate");
    }
    const double best = *std::min_element(val_mse.begin(), val_mse.end());
    double chosen = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (val_mse[i] <= 1.10 * best) chosen = std::max(chosen, candidates[i]);
    }
    return chosen;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
    std::filesystem::create_directories(dir);
    const auto vars = ckpt.params.variables();
    const auto names = ckpt.params.names();
    for (std::size_t i = 0; i < vars.size(); ++i) {
        io::write_tensor(dir / (names[i] + ".bin"), vars[i].value(), names[i], "parameter");
    }
    nlohmann::ordered_json m;
    m["config"] = ckpt.params.config.to_json();
    m["train_config"] = ckpt.train_config.to_json();
    m["seed"] = ckpt.train_config.seed;
    m["epoch"] = ckpt.epoch;
    m["steps"] = ckpt.steps;
    m["val_loss"] = ckpt.val_loss;
    m["val_mse"] = ckpt.val_mse;
    m["meta"] = ckpt.meta.is_null() ? nlohmann::ordered_json::object() : ckpt.meta;
    m["parameters"] = names;
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << m.dump(2) << '\n';
        if (!out) throw std::runtime_error("failed to write checkpoint manifest in " + dir.string());
    }
    nlohmann::ordered_json log = nlohmann::ordered_json::array();
    for (const auto& e : ckpt.log) {
        log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_mse", e.val_mse}});
    }
    std::ofstream out(dir / "train_log.json", std::ios::binary);
    out << log.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("missing checkpoint manifest " + (dir / "manifest.json").string());
    const auto m = nlohmann::json::parse(in);
    Checkpoint c;
    c.params = fno::FnoParams::init(fno::FnoConfig::from_json(m.at("config")), 0);
    c.train_config = TrainConfig::from_json(m.at("train_config"));
    c.epoch = m.value("epoch", std::size_t{0});
    c.steps = m.value("steps", std::size_t{0});
    c.val_loss = m.value("val_loss", 0.0);
    c.val_mse = m.value("val_mse", 0.0);
    if (m.contains("meta")) c.meta = m.at("meta");
    auto vars = c.params.variables();
    const auto names = c.params.names();
    for (std::size_t i = 0; i < vars.size(); ++i) {
        Tensor t = io::read_tensor(dir / (names[i] + ".bin"));
        if (!t.same_shape(vars[i].value())) {
            throw ShapeError("checkpoint tensor " + names[i] + " has shape " + shape_str(t.shape()) + ", expected " +
                             shape_str(vars[i].value().shape()));
        }
        vars[i].mutable_value() = std::move(t);
    }
    std::ifstream lin(dir / "train_log.json");
    if (lin) {
        for (const auto& e : nlohmann::json::parse(lin)) {
            c.log.push_back({e.at("epoch"), e.at("train_loss"), e.at("val_loss"), e.at("val_mse")});
        }
    }
    return c;
}

}  // namespace oodno::train
