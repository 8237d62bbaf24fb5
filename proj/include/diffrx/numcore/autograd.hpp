#pragma once

#include "diffrx/numcore/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace diffrx::numcore {

class Graph;

namespace detail {
struct Node {
    Tensor value;
    Tensor grad;  // empty until some gradient reaches this node
    bool requires_grad = false;

    Tensor& grad_buffer();  // allocates zeros on first use
};
} // namespace detail

// Handle to a value recorded (or merely computed) on a Graph.
class Var {
public:
    Var() = default;

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    // Gradient after backward; empty tensor when no gradient reached it.
    const Tensor& grad() const { return node_->grad; }
    Graph& graph() const { return *graph_; }
    bool valid() const noexcept { return node_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::shared_ptr<detail::Node> n) : graph_(g), node_(std::move(n)) {}

    Graph* graph_ = nullptr;
    std::shared_ptr<detail::Node> node_;

public:
    // Used by op implementations.
    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
};

// Tape of recorded operations. Backward replays the tape in exact reverse
// recording order, so every node's consumers run before the node itself.
// A graph supports a single backward pass; a second call throws.
class Graph {
public:
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool recording() const noexcept { return record_; }

    Var constant(Tensor t);
    Var leaf(Tensor t, bool requires_grad);
    // Binds a Parameter; repeated calls return the same node.
    Var parameter(Parameter& p);

    // Creates an op output node. requires_grad is set when recording and any
    // input requires grad; backward_fn is recorded only in that case.
    Var emit(Tensor value, std::initializer_list<const Var*> inputs,
             std::function<void(detail::Node& out)> backward_fn);

    // Populates gradients of every node reachable from `loss` (numel 1) and
    // writes ∂loss/∂p into each bound Parameter's grad.
    void backward(const Var& loss);

    std::size_t tape_size() const noexcept { return tape_.size(); }

    // Test hook: ids of tape entries in the order backward visited them.
    const std::vector<std::size_t>& backward_order() const noexcept { return visited_; }

private:
    struct Entry {
        std::shared_ptr<detail::Node> out;
        std::function<void(detail::Node&)> fn;
    };

    bool record_;
    bool backward_done_ = false;
    std::vector<Entry> tape_;
    std::vector<std::size_t> visited_;
    std::unordered_map<Parameter*, std::shared_ptr<detail::Node>> params_;
};

} // namespace diffrx::numcore
