// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Ops build nodes only when grad
// mode is on and at least one input requires a gradient; otherwise they
// return plain constants and no graph is retained.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "alignformer/tensor.hpp"

namespace af::ag {

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape() || grad.empty() != value.empty()) {
      grad = Tensor<T>(value.shape());
    }
    return grad;
  }
  bool has_grad() const { return !grad.empty() && grad.shape() == value.shape(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  /// Gradient accumulated by the last backward pass; zeros if none reached this node.
  const Tensor<T>& grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (node_->has_grad()) node_->grad.fill(T(0));
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

  /// Scalar value of a one-element tensor.
  T item() const {
    if (node_->value.size() != 1) throw std::logic_error("Var::item on non-scalar");
    return node_->value[0];
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the output node of an op. `backward` receives the output node, whose
/// grad is populated, and must accumulate into the inputs' grads.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& v : inputs) node->inputs.push_back(v.node());
    node->backward_fn = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Accumulates `g` into input `i` of `node` when that input takes gradients.
template <typename T>
Tensor<T>* input_grad(Node<T>& node, std::size_t i) {
  auto& in = node.inputs.at(i);
  if (!in || !in->requires_grad) return nullptr;
  return &in->ensure_grad();
}

/// Runs reverse-mode accumulation from `root`, seeding d(root)/d(root) = 1.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->has_grad()) node->backward_fn(*node);
  }
}

/// Named trainable leaf tensors, kept in insertion order.
template <typename T>
class ParameterSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [n, v] : params_) {
      if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Var<T> v(std::move(init), true);
    params_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return params_; }
  std::size_t size() const { return params_.size(); }

  Var<T> get(const std::string& name) const {
    for (const auto& [n, v] : params_) {
      if (n == name) return v;
    }
    throw std::out_of_range("no parameter named " + name);
  }

  void zero_grad() const {
    for (const auto& [n, v] : params_) v.zero_grad();
  }

  void set_requires_grad(bool on) const {
    for (const auto& [n, v] : params_) v.node()->requires_grad = on;
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [n, v] : params_) total += v.value().size();
    return total;
  }

  /// Appends another set's entries under `prefix`. Handles stay shared.
  void adopt(const std::string& prefix, const ParameterSet& other) {
    for (const auto& [n, v] : other.params_) params_.emplace_back(prefix + n, v);
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> params_;
};

}  // namespace af::ag
