#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a handle to a graph node. Ops create nodes holding their forward
// value, the input nodes they depend on and a closure that pushes the node's
// gradient into those inputs. Nodes that do not depend on any
// gradient-requiring leaf carry no closure, so inference builds no graph.

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace ctmr {

template <typename T> struct Node {
  Tensor<T> value;
  Tensor<T> grad; // empty until something flows in
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node &)> backward;

  Tensor<T> &grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }

  void zero_grad() { grad = Tensor<T>(); }
};

template <typename T> class Var {
public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T> &value() const { return node_->value; }
  Tensor<T> &mutable_value() { return node_->value; }
  const Tensor<T> &grad() const { return node_->grad; }
  Tensor<T> &mutable_grad() { return node_->grad_buffer(); }
  const Shape &shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  void zero_grad() { node_->zero_grad(); }
  bool valid() const { return static_cast<bool>(node_); }

  /// New leaf sharing no graph history.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>> &node() const { return node_; }

private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates an op node. The closure is dropped when no input needs a gradient.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
               std::function<void(Node<T> &)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool rg = false;
  for (const auto &in : inputs) rg = rg || in->requires_grad;
  node->requires_grad = rg;
  if (rg) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

/// Accumulates d(root)/d(leaf) into every gradient-requiring node reachable
/// from root. root must be a scalar.
template <typename T> void backward(const Var<T> &root) {
  require(root.value().size() == 1, "backward() needs a scalar root, got " + root.shape().str());
  if (!root.requires_grad()) return;

  std::vector<Node<T> *> order;
  std::unordered_set<Node<T> *> seen;
  std::vector<std::pair<Node<T> *, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T> *child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T> &n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

template <typename T> Var<T> add(const Var<T> &a, const Var<T> &b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out = a.value();
  out += b.value();
  return make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T> &self) {
    for (auto &in : self.inputs)
      if (in->requires_grad) in->grad_buffer() += self.grad;
  });
}

template <typename T> Var<T> sub(const Var<T> &a, const Var<T> &b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op<T>(std::move(out), {a.node(), b.node()}, [](Node<T> &self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->grad_buffer() += self.grad;
    if (self.inputs[1]->requires_grad) {
      auto &g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// scale * a + shift
template <typename T> Var<T> affine(const Var<T> &a, T scale, T shift) {
  Tensor<T> out = a.value();
  for (auto &v : out.values()) v = scale * v + shift;
  return make_op<T>(std::move(out), {a.node()}, [scale](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

/// Weighted sum of scalar vars: sum_i w_i * x_i, evaluated left to right.
template <typename T> Var<T> weighted_sum(const std::vector<Var<T>> &xs, const std::vector<T> &ws) {
  require(xs.size() == ws.size() && !xs.empty(), "weighted_sum: size mismatch");
  std::vector<std::shared_ptr<Node<T>>> ins;
  T total = ws[0] * xs[0].value().item();
  ins.push_back(xs[0].node());
  for (std::size_t i = 1; i < xs.size(); ++i) {
    total = total + ws[i] * xs[i].value().item();
    ins.push_back(xs[i].node());
  }
  return make_op<T>(Tensor<T>::scalar(total), std::move(ins), [ws](Node<T> &self) {
    const T g = self.grad[0];
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (self.inputs[i]->requires_grad) self.inputs[i]->grad_buffer()[0] += ws[i] * g;
  });
}

template <typename T> Var<T> mean(const Var<T> &a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  const T n = static_cast<T>(a.value().size());
  return make_op<T>(Tensor<T>::scalar(s / n), {a.node()}, [n](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    const T d = self.grad[0] / n;
    for (auto &v : g.values()) v += d;
  });
}

template <typename T> Var<T> sum(const Var<T> &a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return make_op<T>(Tensor<T>::scalar(s), {a.node()}, [](Node<T> &self) {
    auto &g = self.inputs[0]->grad_buffer();
    const T d = self.grad[0];
    for (auto &v : g.values()) v += d;
  });
}

} // namespace ctmr
