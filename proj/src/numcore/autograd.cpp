#include "diffrx/numcore/autograd.hpp"

#include "diffrx/error.hpp"

namespace diffrx::numcore {

Tensor& detail::Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var Graph::constant(Tensor t) {
    return leaf(std::move(t), false);
}

Var Graph::leaf(Tensor t, bool requires_grad) {
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(t);
    node->requires_grad = requires_grad && record_;
    return Var(this, std::move(node));
}

Var Graph::parameter(Parameter& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var(this, it->second);
    Var v = leaf(p.value, true);
    params_.emplace(&p, v.node_ptr());
    return v;
}

Var Graph::emit(Tensor value, std::initializer_list<const Var*> inputs,
                std::function<void(detail::Node&)> backward_fn) {
    bool needs = false;
    for (const Var* in : inputs) {
        if (&in->graph() != this) throw UsageError("op mixes values from different graphs");
        needs = needs || in->requires_grad();
    }
    auto node = std::make_shared<detail::Node>();
    node->value = std::move(value);
    node->requires_grad = record_ && needs;
    if (node->requires_grad) tape_.push_back({node, std::move(backward_fn)});
    return Var(this, std::move(node));
}

void Graph::backward(const Var& loss) {
    if (backward_done_)
        throw UsageError("backward() already ran on this graph; build a new graph per step");
    if (&loss.graph() != this) throw UsageError("loss belongs to a different graph");
    if (loss.value().numel() != 1)
        throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw UsageError("loss does not depend on any recorded parameter");
    backward_done_ = true;

    loss.node().grad_buffer().fill(1.0);
    visited_.clear();
    visited_.reserve(tape_.size());
    for (std::size_t i = tape_.size(); i-- > 0;) {
        Entry& e = tape_[i];
        visited_.push_back(i);
        if (e.out->grad.empty()) continue;
        e.fn(*e.out);
    }

    for (auto& [param, node] : params_) {
        param->grad = node->grad.empty() ? Tensor(param->value.shape(), 0.0) : node->grad;
    }
}

} // namespace diffrx::numcore
