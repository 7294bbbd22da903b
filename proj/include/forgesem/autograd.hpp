#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "forgesem/common.hpp"
#include "forgesem/tensor.hpp"

namespace forgesem {

// Reverse-mode autodiff over a dynamic graph. Each op allocates a node that
// holds its output tensor plus a closure pulling the node's gradient into
// its parents. Graphs are rebuilt every step; parameter leaves outlive them.
template <typename T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad; // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT<T>>> parents;
    std::function<void(NodeT<T>&)> backprop; // empty for leaves

    TensorT<T>& ensure_grad() {
        if (!grad.same_shape(value)) grad = TensorT<T>::zeros(value.shape());
        return grad;
    }
};

template <typename T>
using ValueT = std::shared_ptr<NodeT<T>>;

using Value = ValueT<float>;

template <typename T>
ValueT<T> make_leaf(TensorT<T> value, bool requires_grad = false) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
ValueT<T> make_node(TensorT<T> value, std::vector<ValueT<T>> parents,
                    std::function<void(NodeT<T>&)> backprop) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    if (needs) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// Populates grad on every node reachable from `loss` that requires one.
// Loss must be a finite scalar. Traversal order is the reverse of a
// deterministic DFS post-order, so accumulation order is fixed.
template <typename T>
void backward(const ValueT<T>& loss) {
    FORGESEM_CHECK(loss != nullptr, "backward: null loss");
    FORGESEM_CHECK(loss->value.numel() == 1, "backward: loss must be scalar");
    if (!is_finite_value(loss->value[0]))
        throw numeric_error("backward: loss is not finite");
    if (!loss->requires_grad) return;

    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> visited;
    std::vector<std::pair<NodeT<T>*, std::size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT<T>* p = node->parents[next].get();
            ++next;
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* node = *it;
        if (node->backprop) {
            node->ensure_grad();
            node->backprop(*node);
        }
    }
}

// Named trainable leaf. The node persists across training steps; graphs
// reference it, updates mutate its value in place.
template <typename T>
struct ParameterT {
    std::string name;
    ValueT<T> node;
    bool trainable = true;

    TensorT<T>& tensor() { return node->value; }
    const TensorT<T>& tensor() const { return node->value; }
};

using Parameter = ParameterT<float>;

// Ordered parameter registry. Registration order is the init-draw order;
// lookups go through a sorted index so checkpoints are name-stable.
template <typename T>
class ParamStoreT {
public:
    ParameterT<T>& add(const std::string& name, TensorT<T> init, bool trainable = true) {
        FORGESEM_CHECK(index_.find(name) == index_.end(),
                       "duplicate parameter name: " + name);
        auto p = std::make_shared<ParameterT<T>>();
        p->name = name;
        p->node = make_leaf(std::move(init), trainable);
        p->trainable = trainable;
        index_[name] = params_.size();
        params_.push_back(p);
        return *p;
    }

    ParameterT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        FORGESEM_CHECK(it != index_.end(), "unknown parameter: " + name);
        return *params_[it->second];
    }
    const ParameterT<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        FORGESEM_CHECK(it != index_.end(), "unknown parameter: " + name);
        return *params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<std::shared_ptr<ParameterT<T>>>& all() { return params_; }
    const std::vector<std::shared_ptr<ParameterT<T>>>& all() const { return params_; }

    std::vector<std::string> names_sorted() const {
        std::vector<std::string> out;
        out.reserve(params_.size());
        for (const auto& kv : index_) out.push_back(kv.first);
        return out;
    }

    void set_trainable(const std::string& prefix, bool trainable) {
        for (auto& p : params_) {
            if (p->name.rfind(prefix, 0) == 0) {
                p->trainable = trainable;
                p->node->requires_grad = trainable;
            }
        }
    }

    std::size_t size() const { return params_.size(); }

private:
    std::vector<std::shared_ptr<ParameterT<T>>> params_;
    std::map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Plain SGD: w <- w - lr * grad on trainable parameters, then clears grads
// on all of them.
template <typename T>
void sgd_step(ParamStoreT<T>& params, T lr) {
    for (auto& p : params.all()) {
        auto& node = *p->node;
        if (p->trainable && node.grad.same_shape(node.value)) {
            for (std::size_t i = 0; i < node.value.numel(); ++i)
                node.value[i] -= lr * node.grad[i];
        }
        if (node.grad.numel() > 0)
            std::fill(node.grad.vec().begin(), node.grad.vec().end(), T(0));
    }
}

template <typename T>
void zero_grads(ParamStoreT<T>& params) {
    for (auto& p : params.all()) {
        auto& g = p->node->grad;
        if (g.numel() > 0) std::fill(g.vec().begin(), g.vec().end(), T(0));
    }
}

} // namespace forgesem
