#include "oodno/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace oodno::ad {

Tensor& Node::ensure_grad() {
    if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
    return grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var parameter(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    auto out = std::make_shared<Node>();
    out->value = std::move(value);
    out->requires_grad = true;
    out->id = next_id_++;
    Entry entry;
    entry.inputs.reserve(inputs.size());
    for (const auto& in : inputs) entry.inputs.push_back(in.node());
    entry.output = out;
    entry.fn = std::move(fn);
    entries_.push_back(std::move(entry));
    return Var(std::move(out));
}

void Tape::backward(const Var& loss) {
    if (!loss.valid()) throw std::invalid_argument("backward on an empty variable");
    const Tensor& lv = loss.value();
    if (lv.is_complex() || lv.numel() != 1) {
        throw ShapeError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
    }
    bool on_tape = false;
    for (const auto& e : entries_) {
        if (e.output == loss.node()) {
            on_tape = true;
            break;
        }
    }
    if (!on_tape) throw std::logic_error("loss was not produced on this tape");

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        Node& out = *it->output;
        if (out.grad.empty()) continue;
        BackwardContext ctx;
        ctx.output = &out.value;
        ctx.grad_output = &out.grad;
        ctx.inputs.reserve(it->inputs.size());
        ctx.input_grads.reserve(it->inputs.size());
        for (auto& in : it->inputs) {
            ctx.inputs.push_back(&in->value);
            ctx.input_grads.push_back(in->requires_grad ? &in->ensure_grad() : nullptr);
        }
        it->fn(ctx);
    }
}

void Tape::clear() { entries_.clear(); }

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

Var make_result(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    Tape* tape = active_tape();
    if (!needs || tape == nullptr) return constant(std::move(value));
    return tape->record(std::move(value), inputs, std::move(fn));
}

void backward(const Var& loss) {
    Tape* tape = active_tape();
    if (tape == nullptr) throw std::logic_error("backward called without an active tape");
    tape->backward(loss);
}

}  // namespace oodno::ad
