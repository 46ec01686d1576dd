#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oodno/tensor.hpp"

namespace oodno::fft {

bool is_power_of_two(std::size_t n);

/// Radix-2 iterative Cooley-Tukey plan for one transform length.
class Plan {
public:
    explicit Plan(std::size_t n);

    std::size_t size() const { return n_; }

    /// Unnormalized in-place transform; `inverse` flips the exponent sign only.
    void execute(std::span<cplx> a, bool inverse) const;

private:
    std::size_t n_;
    std::vector<std::size_t> bitrev_;
    std::vector<cplx> twiddle_;  // e^{-2 pi i k / n}, k < n/2
};

/// Per-thread cached plan.
const Plan& plan(std::size_t n);

// Single-field kernels on contiguous row-major buffers of an H x W real field
// and its H x (W/2+1) half spectrum.
void rfft2(const double* x, cplx* spec, std::size_t h, std::size_t w);
void irfft2(const cplx* spec, double* x, std::size_t h, std::size_t w);
/// Adjoint of rfft2 under the real inner product <X, Y> = Re sum conj(X) Y.
void rfft2_adjoint(const cplx* grad_spec, double* grad_x, std::size_t h, std::size_t w);
/// Adjoint of irfft2 under the same inner product.
void irfft2_adjoint(const double* grad_x, cplx* grad_spec, std::size_t h, std::size_t w);

/// Transform over the last two axes of a real tensor [..., H, W] -> complex [..., H, W/2+1].
Tensor rfft2(const Tensor& x);
/// Inverse over the last two axes: complex [..., H, W/2+1] -> real [..., H, w].
Tensor irfft2(const Tensor& spec, std::size_t w);

}  // namespace oodno::fft
