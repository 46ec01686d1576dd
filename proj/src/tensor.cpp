#include "oodno/tensor.hpp"

#include <numeric>
#include <sstream>

namespace oodno {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype),
      data_(shape_numel(shape_) * (dtype == DType::Complex ? 2 : 1), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor payload of " + std::to_string(data_.size()) + " values does not match shape " +
                         shape_str(shape_));
    }
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::complex_from(Shape shape, const std::vector<cplx>& values) {
    Tensor t(std::move(shape), DType::Complex);
    if (values.size() != t.numel()) throw ShapeError("complex payload size mismatch for " + shape_str(t.shape()));
    auto c = t.cdata();
    std::copy(values.begin(), values.end(), c.begin());
    return t;
}

std::span<cplx> Tensor::cdata() {
    if (!is_complex()) throw std::logic_error("cdata() on a real tensor");
    return {reinterpret_cast<cplx*>(data_.data()), data_.size() / 2};
}

std::span<const cplx> Tensor::cdata() const {
    if (!is_complex()) throw std::logic_error("cdata() on a real tensor");
    return {reinterpret_cast<const cplx*>(data_.data()), data_.size() / 2};
}

double Tensor::item() const {
    if (is_complex() || data_.size() != 1) {
        throw ShapeError("item() requires a one-element real tensor, got " + shape_str(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace oodno
