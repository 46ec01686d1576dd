#pragma once

#include <vector>

#include "oodno/autodiff.hpp"

// Differentiable primitives for the fixed FNO graph. Every op checks shapes and
// throws ShapeError naming both operands on mismatch.
namespace oodno::ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var square(const Var& a);
Var sqrt(const Var& a);
Var gelu(const Var& a);

/// Elementwise product with a fixed (non-differentiated) mask.
Var dropout_mask_apply(const Var& a, const Tensor& mask);

/// Sum / mean of all entries, returned as a one-element tensor.
Var sum(const Var& a);
Var mean(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var reshape(const Var& a, Shape shape);

/// x [B, Cin, ...] -> [B, Cout, ...]; weight [Cin, Cout], bias [Cout].
Var channel_linear(const Var& x, const Var& weight, const Var& bias);

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(const std::vector<Var>& parts, std::size_t axis);

/// Real [..., H, W] -> complex [..., H, W/2+1] over the last two axes.
Var rfft2(const Var& x);
/// Complex [..., H, W/2+1] -> real [..., H, w].
Var irfft2(const Var& spec, std::size_t w);

/// Retained-mode channel mixing in Fourier space.
/// spec [B, Cin, H, Wf] complex, weights [2, mt, mx, Cin, Cout] complex. Corner 0
/// acts on rows [0, mt), corner 1 on rows [H - mt, H); columns [0, mx). All other
/// modes of the result are zero.
Var spectral_mix(const Var& spec, const Var& weights);

// Exact-erf GELU on plain values, shared with non-recorded code paths.
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace oodno::ad
