#pragma once

#include <complex>
#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodno {

using Shape = std::vector<std::size_t>;
using cplx = std::complex<double>;

enum class DType { Real, Complex };

/// 64-byte aligned allocation. Vectorized kernels peel differently depending
/// on the buffer address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of f64 values. Complex tensors store interleaved
/// (re, im) pairs, so `data().size() == 2 * numel()` for them.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, DType dtype = DType::Real);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_, other.dtype_); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, std::vector<double>{value}); }
    static Tensor complex_from(Shape shape, const std::vector<cplx>& values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return shape_numel(shape_); }
    DType dtype() const { return dtype_; }
    bool is_complex() const { return dtype_ == DType::Complex; }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    Storage& storage() { return data_; }
    const Storage& storage() const { return data_; }

    std::span<cplx> cdata();
    std::span<const cplx> cdata() const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Scalar value of a one-element real tensor.
    double item() const;

    /// Same payload viewed with a different shape of equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_ && dtype_ == other.dtype_; }

private:
    Shape shape_;
    DType dtype_ = DType::Real;
    Storage data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace oodno
