#include "oodno/fft.hpp"

#include <cmath>
#include <algorithm>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

namespace oodno::fft {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Plan::Plan(std::size_t n) : n_(n), bitrev_(n), twiddle_(n / 2) {
    if (!is_power_of_two(n)) throw std::invalid_argument("FFT length " + std::to_string(n) + " is not a power of two");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
        bitrev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
        double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        twiddle_[k] = {std::cos(ang), std::sin(ang)};
    }
}

void Plan::execute(std::span<cplx> a, bool inverse) const {
    if (a.size() != n_) throw std::invalid_argument("FFT buffer length does not match plan");
    for (std::size_t i = 0; i < n_; ++i) {
        if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
        std::size_t half = len / 2;
        std::size_t stride = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const double wr = twiddle_[k * stride].real();
                const double wi = inverse ? -twiddle_[k * stride].imag() : twiddle_[k * stride].imag();
                const cplx u = a[start + k];
                const cplx x = a[start + k + half];
                const cplx v{x.real() * wr - x.imag() * wi, x.real() * wi + x.imag() * wr};
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
    }
}

const Plan& plan(std::size_t n) {
    thread_local std::map<std::size_t, Plan> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, Plan(n)).first;
    return it->second;
}

namespace {

void check_extents(std::size_t h, std::size_t w) {
    if (!is_power_of_two(h) || !is_power_of_two(w) || w < 2) {
        throw std::invalid_argument("rfft2 extents must be powers of two (got " + std::to_string(h) + "x" +
                                    std::to_string(w) + ")");
    }
}

std::vector<cplx>& scratch(int slot, std::size_t n) {
    thread_local std::vector<cplx> buffers[3];
    auto& b = buffers[slot];
    if (b.size() < n) b.resize(n);
    return b;
}

// In-place transform of every column of an H x wf complex array.
void columns(cplx* a, std::size_t h, std::size_t wf, bool inverse) {
    if (h == 1) return;
    const Plan& p = plan(h);
    std::span<cplx> col(scratch(0, h).data(), h);
    for (std::size_t k = 0; k < wf; ++k) {
        for (std::size_t m = 0; m < h; ++m) col[m] = a[m * wf + k];
        p.execute(col, inverse);
        for (std::size_t m = 0; m < h; ++m) a[m * wf + k] = col[m];
    }
}

}  // namespace

void rfft2(const double* x, cplx* spec, std::size_t h, std::size_t w) {
    check_extents(h, w);
    const std::size_t wf = w / 2 + 1;
    const Plan& p = plan(w);
    std::span<cplx> row(scratch(1, w).data(), w);
    for (std::size_t m = 0; m < h; ++m) {
        for (std::size_t n = 0; n < w; ++n) row[n] = {x[m * w + n], 0.0};
        p.execute(row, false);
        for (std::size_t k = 0; k < wf; ++k) spec[m * wf + k] = row[k];
    }
    columns(spec, h, wf, false);
}

void irfft2(const cplx* spec, double* x, std::size_t h, std::size_t w) {
    check_extents(h, w);
    const std::size_t wf = w / 2 + 1;
    cplx* tmp = scratch(2, h * wf).data();
    std::copy(spec, spec + h * wf, tmp);
    columns(tmp, h, wf, true);
    const Plan& p = plan(w);
    std::span<cplx> row(scratch(1, w).data(), w);
    const double scale = 1.0 / static_cast<double>(h * w);
    for (std::size_t m = 0; m < h; ++m) {
        const cplx* y = tmp + m * wf;
        row[0] = {y[0].real(), 0.0};
        row[w / 2] = {y[w / 2].real(), 0.0};
        for (std::size_t k = 1; k < w / 2; ++k) {
            row[k] = y[k];
            row[w - k] = std::conj(y[k]);
        }
        p.execute(row, true);
        for (std::size_t n = 0; n < w; ++n) x[m * w + n] = row[n].real() * scale;
    }
}

void rfft2_adjoint(const cplx* grad_spec, double* grad_x, std::size_t h, std::size_t w) {
    check_extents(h, w);
    const std::size_t wf = w / 2 + 1;
    cplx* tmp = scratch(2, h * wf).data();
    std::copy(grad_spec, grad_spec + h * wf, tmp);
    columns(tmp, h, wf, true);
    const Plan& p = plan(w);
    std::span<cplx> row(scratch(1, w).data(), w);
    for (std::size_t m = 0; m < h; ++m) {
        std::fill(row.begin(), row.end(), cplx{});
        for (std::size_t k = 0; k < wf; ++k) row[k] = tmp[m * wf + k];
        p.execute(row, true);
        for (std::size_t n = 0; n < w; ++n) grad_x[m * w + n] = row[n].real();
    }
}

void irfft2_adjoint(const double* grad_x, cplx* grad_spec, std::size_t h, std::size_t w) {
    rfft2(grad_x, grad_spec, h, w);
    const std::size_t wf = w / 2 + 1;
    const double base = 1.0 / static_cast<double>(h * w);
    for (std::size_t m = 0; m < h; ++m) {
        for (std::size_t k = 0; k < wf; ++k) {
            double c = (k == 0 || k == w / 2) ? base : 2.0 * base;
            grad_spec[m * wf + k] *= c;
        }
    }
}

Tensor rfft2(const Tensor& x) {
    if (x.is_complex() || x.rank() < 2) throw ShapeError("rfft2 expects a real tensor of rank >= 2");
    const std::size_t h = x.dim(x.rank() - 2);
    const std::size_t w = x.dim(x.rank() - 1);
    check_extents(h, w);
    Shape out_shape = x.shape();
    out_shape.back() = w / 2 + 1;
    Tensor out(out_shape, DType::Complex);
    const std::size_t batch = x.numel() / (h * w);
    auto spec = out.cdata();
    for (std::size_t b = 0; b < batch; ++b) {
        rfft2(x.data().data() + b * h * w, spec.data() + b * h * (w / 2 + 1), h, w);
    }
    return out;
}

Tensor irfft2(const Tensor& spec, std::size_t w) {
    if (!spec.is_complex() || spec.rank() < 2) throw ShapeError("irfft2 expects a complex tensor of rank >= 2");
    const std::size_t h = spec.dim(spec.rank() - 2);
    if (spec.dim(spec.rank() - 1) != w / 2 + 1) {
        throw ShapeError("irfft2: last extent " + std::to_string(spec.dim(spec.rank() - 1)) +
                         " inconsistent with output width " + std::to_string(w));
    }
    check_extents(h, w);
    Shape out_shape = spec.shape();
    out_shape.back() = w;
    Tensor out(out_shape);
    const std::size_t batch = out.numel() / (h * w);
    auto s = spec.cdata();
    for (std::size_t b = 0; b < batch; ++b) {
        irfft2(s.data() + b * h * (w / 2 + 1), out.data().data() + b * h * w, h, w);
    }
    return out;
}

}  // namespace oodno::fft
