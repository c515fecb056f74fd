#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// Every differentiable op produces a node that remembers its inputs and a
// closure accumulating gradients into them. Calling backward() on a scalar
// walks the graph in reverse topological order. Graphs are freed with the
// last Tensor handle that references them.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dttbsr/errors.hpp"

namespace dttbsr::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

inline bool& grad_mode_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(grad_mode_enabled()) { grad_mode_enabled() = false; }
  ~NoGradGuard() { grad_mode_enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (nn::numel(shape) != values.size()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = nn::numel(shape);
    return from_vector(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v) {
    const std::size_t n = nn::numel(shape);
    return from_vector(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v) { return from_vector({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(int axis) const {
    const int d = static_cast<int>(dim());
    if (axis < 0) axis += d;
    if (axis < 0 || axis >= d) throw ShapeError("axis out of range");
    return node_->shape[static_cast<std::size_t>(axis)];
  }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on a tensor with " + std::to_string(numel()) + " elements");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_buffer() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Leaf copy without history.
  Tensor detach() const { return from_vector(shape(), node_->value, false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Back-propagates from this scalar with seed gradient 1.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar tensor");
    if (!node_->requires_grad) return;
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<T>* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward();
    }
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Creates the output node of an op. The node records its inputs only when
// gradient mode is on and one of them needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    for (const Tensor<T>* in : inputs) {
      if (in && in->defined() && in->requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const Tensor<T>* in : inputs) {
        if (in && in->defined()) node->parents.push_back(in->node_ptr());
      }
    }
  }
  return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_mode_enabled()) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) node->requires_grad = true;
    }
    if (node->requires_grad) {
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    }
  }
  return Tensor<T>(std::move(node));
}

// Grad buffer of an input, or nullptr when it does not take gradients.
template <class T>
T* grad_of(Node<T>* n) {
  return (n && n->requires_grad) ? n->ensure_grad().data() : nullptr;
}

}  // namespace detail

}  // namespace dttbsr::nn
