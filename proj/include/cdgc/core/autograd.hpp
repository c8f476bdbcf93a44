#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cdgc/core/tensor.hpp"

namespace cdgc {

// Reverse-mode autodiff over a dynamically built tape. Each op creates a node
// holding its output value, its input nodes and a closure that scatters the
// node's output gradient into the inputs' gradient buffers.

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    std::vector<NodePtr<T>> inputs;
    std::function<void(Node<T>&)> backward_fn;
    bool requires_grad = false;
    std::string label;   // op or layer tag, used by the complexity walker
    int64_t macs = 0;    // multiply-accumulate cost of producing `value`

    Tensor<T>& grad_buffer() {
        if (grad.empty() && value.numel() > 0) grad = Tensor<T>(value.shape());
        return grad;
    }
};

// Disables graph construction in a scope. Forward passes wrapped in this
// guard produce leaf nodes with no inputs or backward closures.
class NoGradGuard {
public:
    NoGradGuard() : prev_(enabled()) { enabled() = false; }
    ~NoGradGuard() { enabled() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool& enabled() {
        thread_local bool flag = true;
        return flag;
    }

private:
    bool prev_;
};

inline bool grad_enabled() { return NoGradGuard::enabled(); }

// Value-semantics handle to a graph node.
template <typename T>
class Var {
public:
    Var() = default;

    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var make_op(Tensor<T> value, std::vector<Var> inputs,
                       std::function<void(Node<T>&)> backward_fn, int64_t macs = 0,
                       const char* op = "") {
        Var out(std::move(value));
        out.node_->macs = macs;
        out.node_->label = op;
        if (!grad_enabled()) return out;
        bool needs = false;
        for (const Var& v : inputs) needs = needs || (v.node_ && v.node_->requires_grad);
        if (!needs) return out;
        out.node_->requires_grad = true;
        out.node_->inputs.reserve(inputs.size());
        for (Var& v : inputs) out.node_->inputs.push_back(v.node_);
        out.node_->backward_fn = std::move(backward_fn);
        return out;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& value() { return node_->value; }
    Tensor<T>& grad() { return node_->grad_buffer(); }
    const Tensor<T>& grad_view() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }
    void zero_grad() {
        if (node_ && !node_->grad.empty()) node_->grad.fill(T(0));
    }

    const Shape& shape() const { return node_->value.shape(); }
    int64_t numel() const { return node_->value.numel(); }

    void set_label(std::string s) { node_->label = std::move(s); }
    const std::string& label() const { return node_->label; }

    NodePtr<T>& node() { return node_; }
    const NodePtr<T>& node() const { return node_; }

    // New leaf sharing a copy of the value; gradients do not flow past it.
    Var detach() const {
        Var out(node_->value, false);
        return out;
    }

private:
    NodePtr<T> node_;
};

// Runs reverse accumulation from `root` (scalar or any tensor; seed is 1 for
// every output element). Nodes are processed only after all their consumers,
// so shared subgraphs accumulate correctly.
template <typename T>
void backward(const Var<T>& root) {
    if (!root.defined() || !root.requires_grad()) return;
    Node<T>* root_node = root.node().get();

    // Count consumers reachable from the root.
    std::unordered_map<Node<T>*, int> pending;
    std::vector<Node<T>*> stack{root_node};
    std::unordered_set<Node<T>*> seen{root_node};
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        for (const NodePtr<T>& in : n->inputs) {
            if (!in->requires_grad) continue;
            pending[in.get()]++;
            if (seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }

    root.node()->grad_buffer().fill(T(1));
    std::vector<Node<T>*> ready{root_node};
    while (!ready.empty()) {
        Node<T>* n = ready.back();
        ready.pop_back();
        n->grad_buffer();
        if (n->backward_fn) n->backward_fn(*n);
        for (const NodePtr<T>& in : n->inputs) {
            if (!in->requires_grad) continue;
            if (--pending[in.get()] == 0) ready.push_back(in.get());
        }
    }
}

// Accumulates `delta` into the gradient buffer of `node`.
template <typename T>
inline void accumulate_grad(NodePtr<T>& node, const Tensor<T>& delta) {
    Tensor<T>& g = node->grad_buffer();
    const int64_t n = g.numel();
    T* gp = g.data();
    const T* dp = delta.data();
    for (int64_t i = 0; i < n; ++i) gp[i] += dp[i];
}

}  // namespace cdgc
