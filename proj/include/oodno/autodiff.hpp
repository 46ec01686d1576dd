#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "oodno/tensor.hpp"

namespace oodno::ad {

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape and dtype as value
    bool requires_grad = false;
    std::size_t id = 0;

    Tensor& ensure_grad();
};

/// Handle to a value in the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool valid() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

    void zero_grad();

private:
    std::shared_ptr<Node> node_;
};

/// Leaf that accumulates gradients across backward passes until zeroed.
Var parameter(Tensor value);
/// Leaf excluded from differentiation.
Var constant(Tensor value);

struct BackwardContext {
    std::vector<const Tensor*> inputs;
    const Tensor* output = nullptr;
    const Tensor* grad_output = nullptr;
    /// Null where the matching input does not require a gradient.
    std::vector<Tensor*> input_grads;
};

using BackwardFn = std::function<void(const BackwardContext&)>;

/// Ordered record of primitive applications. Entries are appended in
/// execution order, so every entry's inputs precede it.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

    /// Reverse sweep from a scalar loss recorded on this tape.
    void backward(const Var& loss);

    void clear();
    std::size_t size() const { return entries_.size(); }

    struct Entry {
        std::vector<std::shared_ptr<Node>> inputs;
        std::shared_ptr<Node> output;
        BackwardFn fn;
    };
    const std::vector<Entry>& entries() const { return entries_; }

private:
    std::vector<Entry> entries_;
    std::size_t next_id_ = 1;
};

/// Thread-local active tape; nullptr means operations are not recorded.
Tape* active_tape();

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Builds an op result: recorded on the active tape when any input requires
/// a gradient, otherwise returned as a constant.
Var make_result(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

/// Backward on the active tape.
void backward(const Var& loss);

}  // namespace oodno::ad
