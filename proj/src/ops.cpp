#include "oodno/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>

#include "oodno/fft.hpp"

namespace oodno::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_real(const Tensor& t, const char* op) {
    if (t.is_complex()) throw ShapeError(std::string(op) + ": expected a real tensor, got complex " + shape_str(t.shape()));
}

void accumulate(Tensor* dst, const Tensor& src) {
    if (!dst) return;
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    accumulate(&out, b.value());
    return make_result(std::move(out), {a, b}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], *c.grad_output);
        accumulate(c.input_grads[1], *c.grad_output);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
    return make_result(std::move(out), {a, b}, [](const BackwardContext& c) {
        accumulate(c.input_grads[0], *c.grad_output);
        if (c.input_grads[1]) {
            auto g = c.input_grads[1]->data();
            auto go = c.grad_output->data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    require_real(a.value(), "mul");
    Tensor out = a.value();
    auto o = out.data();
    auto bv = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
    return make_result(std::move(out), {a, b}, [](const BackwardContext& c) {
        auto go = c.grad_output->data();
        auto av = c.inputs[0]->data();
        auto bv = c.inputs[1]->data();
        if (c.input_grads[0]) {
            auto g = c.input_grads[0]->data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * bv[i];
        }
        if (c.input_grads[1]) {
            auto g = c.input_grads[1]->data();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * av[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= factor;
    return make_result(std::move(out), {a}, [factor](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        auto g = c.input_grads[0]->data();
        auto go = c.grad_output->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * go[i];
    });
}

Var square(const Var& a) {
    require_real(a.value(), "square");
    Tensor out = a.value();
    for (double& v : out.data()) v *= v;
    return make_result(std::move(out), {a}, [](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        auto g = c.input_grads[0]->data();
        auto go = c.grad_output->data();
        auto x = c.inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * x[i] * go[i];
    });
}

Var sqrt(const Var& a) {
    require_real(a.value(), "sqrt");
    Tensor out = a.value();
    for (double& v : out.data()) {
        if (v < 0.0) throw std::domain_error("sqrt of a negative entry");
        v = std::sqrt(v);
    }
    return make_result(std::move(out), {a}, [](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        auto g = c.input_grads[0]->data();
        auto go = c.grad_output->data();
        auto y = c.output->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 0.5 * go[i] / y[i];
    });
}

Var gelu(const Var& a) {
    require_real(a.value(), "gelu");
    Tensor out = a.value();
    for (double& v : out.data()) v = gelu_value(v);
    return make_result(std::move(out), {a}, [](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        auto g = c.input_grads[0]->data();
        auto go = c.grad_output->data();
        auto x = c.inputs[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * gelu_derivative(x[i]);
    });
}

Var dropout_mask_apply(const Var& a, const Tensor& mask) {
    require_same_shape(a.value(), mask, "dropout_mask_apply");
    Tensor out = a.value();
    auto o = out.data();
    auto m = mask.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= m[i];
    return make_result(std::move(out), {a}, [mask](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        auto g = c.input_grads[0]->data();
        auto go = c.grad_output->data();
        auto m = mask.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * m[i];
    });
}

Var sum(const Var& a) {
    require_real(a.value(), "sum");
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_result(Tensor::scalar(s), {a}, [](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const double go = (*c.grad_output)[0];
        for (double& g : c.input_grads[0]->data()) g += go;
    });
}

Var mean(const Var& a) {
    require_real(a.value(), "mean");
    const std::size_t n = a.value().numel();
    if (n == 0) throw ShapeError("mean of an empty tensor");
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_result(Tensor::scalar(s / static_cast<double>(n)), {a}, [n](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const double go = (*c.grad_output)[0] / static_cast<double>(n);
        for (double& g : c.input_grads[0]->data()) g += go;
    });
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_real(av, "matmul");
    require_real(bv, "matmul");
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    }
    const auto m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    MapMat(out.data().data(), m, n).noalias() = CMapMat(av.data().data(), m, k) * CMapMat(bv.data().data(), k, n);
    return make_result(std::move(out), {a, b}, [m, k, n](const BackwardContext& c) {
        CMapMat go(c.grad_output->data().data(), m, n);
        if (c.input_grads[0]) {
            MapMat(c.input_grads[0]->data().data(), m, k).noalias() += go * CMapMat(c.inputs[1]->data().data(), k, n).transpose();
        }
        if (c.input_grads[1]) {
            MapMat(c.input_grads[1]->data().data(), k, n).noalias() += CMapMat(c.inputs[0]->data().data(), m, k).transpose() * go;
        }
    });
}

Var transpose2d(const Var& a) {
    const Tensor& av = a.value();
    require_real(av, "transpose2d");
    if (av.rank() != 2) throw ShapeError("transpose2d expects rank 2, got " + shape_str(av.shape()));
    const auto r = av.dim(0), cdim = av.dim(1);
    Tensor out({cdim, r});
    MapMat(out.data().data(), cdim, r) = CMapMat(av.data().data(), r, cdim).transpose();
    return make_result(std::move(out), {a}, [r, cdim](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        MapMat(c.input_grads[0]->data().data(), r, cdim) += CMapMat(c.grad_output->data().data(), cdim, r).transpose();
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](const BackwardContext& c) { accumulate(c.input_grads[0], *c.grad_output); });
}

Var channel_linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const Tensor& bv = bias.value();
    require_real(xv, "channel_linear");
    if (xv.rank() < 2 || wv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0)) {
        throw ShapeError("channel_linear: incompatible shapes x " + shape_str(xv.shape()) + ", weight " +
                         shape_str(wv.shape()) + ", bias " + shape_str(bv.shape()));
    }
    const std::size_t batch = xv.dim(0), cin = wv.dim(0), cout = wv.dim(1);
    const std::size_t spatial = xv.numel() / (batch * cin);
    Shape out_shape = xv.shape();
    out_shape[1] = cout;
    Tensor out(out_shape);
    CMapMat w(wv.data().data(), cin, cout);
    Eigen::Map<const Eigen::VectorXd> b(bv.data().data(), static_cast<Eigen::Index>(cout));
    for (std::size_t i = 0; i < batch; ++i) {
        MapMat y(out.data().data() + i * cout * spatial, cout, spatial);
        y.noalias() = w.transpose() * CMapMat(xv.data().data() + i * cin * spatial, cin, spatial);
        y.colwise() += b;
    }
    return make_result(std::move(out), {x, weight, bias}, [batch, cin, cout, spatial](const BackwardContext& c) {
        CMapMat w(c.inputs[1]->data().data(), cin, cout);
        for (std::size_t i = 0; i < batch; ++i) {
            CMapMat gy(c.grad_output->data().data() + i * cout * spatial, cout, spatial);
            if (c.input_grads[0]) {
                MapMat(c.input_grads[0]->data().data() + i * cin * spatial, cin, spatial).noalias() += w * gy;
            }
            if (c.input_grads[1]) {
                MapMat(c.input_grads[1]->data().data(), cin, cout).noalias() +=
                    CMapMat(c.inputs[0]->data().data() + i * cin * spatial, cin, spatial) * gy.transpose();
            }
            if (c.input_grads[2]) {
                Eigen::Map<Eigen::VectorXd>(c.input_grads[2]->data().data(), static_cast<Eigen::Index>(cout)) +=
                    gy.rowwise().sum();
            }
        }
    });
}

namespace {

struct SliceGeom {
    std::size_t outer, inner, src_axis, dst_axis;
};

SliceGeom slice_geom(const Shape& shape, std::size_t axis, std::size_t len) {
    SliceGeom g{1, 1, shape[axis], len};
    for (std::size_t i = 0; i < axis; ++i) g.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) g.inner *= shape[i];
    return g;
}

}  // namespace

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    if (axis >= av.rank() || begin > end || end > av.dim(axis)) {
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                         std::to_string(axis) + " invalid for shape " + shape_str(av.shape()));
    }
    Shape out_shape = av.shape();
    out_shape[axis] = end - begin;
    Tensor out(out_shape, av.dtype());
    const std::size_t width = av.is_complex() ? 2 : 1;
    SliceGeom g = slice_geom(av.shape(), axis, end - begin);
    const std::size_t block = g.inner * width;
    for (std::size_t o = 0; o < g.outer; ++o) {
        const double* src = av.data().data() + (o * g.src_axis + begin) * block;
        std::copy(src, src + g.dst_axis * block, out.data().data() + o * g.dst_axis * block);
    }
    return make_result(std::move(out), {a}, [g, begin, block](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        for (std::size_t o = 0; o < g.outer; ++o) {
            double* dst = c.input_grads[0]->data().data() + (o * g.src_axis + begin) * block;
            const double* src = c.grad_output->data().data() + o * g.dst_axis * block;
            for (std::size_t i = 0; i < g.dst_axis * block; ++i) dst[i] += src[i];
        }
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Tensor& first = parts.front().value();
    if (axis >= first.rank()) throw ShapeError("concat: axis out of range for " + shape_str(first.shape()));
    Shape out_shape = first.shape();
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Tensor& v = p.value();
        Shape probe = v.shape();
        if (probe.size() != first.rank() || v.dtype() != first.dtype()) {
            throw ShapeError("concat: mismatched operands " + shape_str(first.shape()) + " and " + shape_str(v.shape()));
        }
        probe[axis] = first.dim(axis);
        if (probe != first.shape()) {
            throw ShapeError("concat: mismatched operands " + shape_str(first.shape()) + " and " + shape_str(v.shape()));
        }
        out_shape[axis] += v.dim(axis);
    }
    Tensor out(out_shape, first.dtype());
    const std::size_t width = first.is_complex() ? 2 : 1;
    SliceGeom g = slice_geom(out_shape, axis, 0);
    const std::size_t block = g.inner * width;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t len = p.value().dim(axis);
        for (std::size_t o = 0; o < g.outer; ++o) {
            const double* src = p.value().data().data() + o * len * block;
            std::copy(src, src + len * block, out.data().data() + (o * g.src_axis + offset) * block);
        }
        offset += len;
    }
    return make_result(std::move(out), parts, [g, block, offsets, axis](const BackwardContext& c) {
        for (std::size_t k = 0; k < c.inputs.size(); ++k) {
            if (!c.input_grads[k]) continue;
            const std::size_t len = c.inputs[k]->dim(axis);
            for (std::size_t o = 0; o < g.outer; ++o) {
                const double* src = c.grad_output->data().data() + (o * g.src_axis + offsets[k]) * block;
                double* dst = c.input_grads[k]->data().data() + o * len * block;
                for (std::size_t i = 0; i < len * block; ++i) dst[i] += src[i];
            }
        }
    });
}

Var rfft2(const Var& x) {
    Tensor out = fft::rfft2(x.value());
    const std::size_t h = x.value().dim(x.value().rank() - 2);
    const std::size_t w = x.value().dim(x.value().rank() - 1);
    return make_result(std::move(out), {x}, [h, w](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const std::size_t wf = w / 2 + 1;
        const std::size_t batch = c.inputs[0]->numel() / (h * w);
        auto gs = c.grad_output->cdata();
        std::vector<double> tmp(h * w);
        for (std::size_t b = 0; b < batch; ++b) {
            fft::rfft2_adjoint(gs.data() + b * h * wf, tmp.data(), h, w);
            double* dst = c.input_grads[0]->data().data() + b * h * w;
            for (std::size_t i = 0; i < h * w; ++i) dst[i] += tmp[i];
        }
    });
}

Var irfft2(const Var& spec, std::size_t w) {
    Tensor out = fft::irfft2(spec.value(), w);
    const std::size_t h = spec.value().dim(spec.value().rank() - 2);
    return make_result(std::move(out), {spec}, [h, w](const BackwardContext& c) {
        if (!c.input_grads[0]) return;
        const std::size_t wf = w / 2 + 1;
        const std::size_t batch = c.output->numel() / (h * w);
        auto dst = c.input_grads[0]->cdata();
        std::vector<cplx> tmp(h * wf);
        for (std::size_t b = 0; b < batch; ++b) {
            fft::irfft2_adjoint(c.grad_output->data().data() + b * h * w, tmp.data(), h, w);
            for (std::size_t i = 0; i < h * wf; ++i) dst[b * h * wf + i] += tmp[i];
        }
    });
}

Var spectral_mix(const Var& spec, const Var& weights) {
    const Tensor& xv = spec.value();
    const Tensor& wv = weights.value();
    if (!xv.is_complex() || !wv.is_complex() || xv.rank() != 4 || wv.rank() != 5 || wv.dim(0) != 2 ||
        wv.dim(3) != xv.dim(1) || wv.dim(1) * 2 > xv.dim(2) || wv.dim(2) > xv.dim(3)) {
        throw ShapeError("spectral_mix: incompatible spectrum " + shape_str(xv.shape()) + " and weights " +
                         shape_str(wv.shape()));
    }
    const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wf = xv.dim(3);
    const std::size_t mt = wv.dim(1), mx = wv.dim(2), cout = wv.dim(4);
    Tensor out({batch, cout, h, wf}, DType::Complex);

    using CMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const std::size_t plane = h * wf;
    auto row_of = [=](std::size_t corner, std::size_t r) { return corner == 0 ? r : h - mt + r; };

    // Each retained mode is an independent [B, Cin] x [Cin, Cout] complex product.
    CMat xm(batch, cin), om(batch, cout);
    auto xs = xv.cdata();
    auto os = out.cdata();
    auto ws = wv.cdata();
    for (std::size_t corner = 0; corner < 2; ++corner)
        for (std::size_t r = 0; r < mt; ++r)
            for (std::size_t kx = 0; kx < mx; ++kx) {
                const std::size_t pos = row_of(corner, r) * wf + kx;
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t i = 0; i < cin; ++i) xm(b, i) = xs[(b * cin + i) * plane + pos];
                Eigen::Map<const CMat> wm(ws.data() + ((corner * mt + r) * mx + kx) * cin * cout, cin, cout);
                om.noalias() = xm * wm;
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < cout; ++o) os[(b * cout + o) * plane + pos] = om(b, o);
            }

    return make_result(std::move(out), {spec, weights}, [=](const BackwardContext& c) {
        auto xs = c.inputs[0]->cdata();
        auto ws = c.inputs[1]->cdata();
        auto gs = c.grad_output->cdata();
        CMat xm(batch, cin), gm(batch, cout), gx(batch, cin);
        for (std::size_t corner = 0; corner < 2; ++corner)
            for (std::size_t r = 0; r < mt; ++r)
                for (std::size_t kx = 0; kx < mx; ++kx) {
                    const std::size_t pos = row_of(corner, r) * wf + kx;
                    const std::size_t woff = ((corner * mt + r) * mx + kx) * cin * cout;
                    for (std::size_t b = 0; b < batch; ++b)
                        for (std::size_t o = 0; o < cout; ++o) gm(b, o) = gs[(b * cout + o) * plane + pos];
                    if (c.input_grads[0]) {
                        Eigen::Map<const CMat> wm(ws.data() + woff, cin, cout);
                        gx.noalias() = gm * wm.adjoint();
                        auto gxs = c.input_grads[0]->cdata();
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < cin; ++i) gxs[(b * cin + i) * plane + pos] += gx(b, i);
                    }
                    if (c.input_grads[1]) {
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < cin; ++i) xm(b, i) = xs[(b * cin + i) * plane + pos];
                        Eigen::Map<CMat> gw(c.input_grads[1]->cdata().data() + woff, cin, cout);
                        gw.noalias() += xm.adjoint() * gm;
                    }
                }
    });
}

}  // namespace oodno::ad
