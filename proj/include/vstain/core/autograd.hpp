#pragma once

// Tape-free reverse-mode differentiation over Tensor<T>. Each op result holds
// shared references to its inputs and a closure that pushes its gradient back
// to them; `backward()` walks the graph in reverse topological order and then
// releases it.

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "vstain/core/kernels.hpp"
#include "vstain/core/tensor.hpp"

namespace vstain::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  // Empty tensor until a backward pass reaches this node.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Seeds d(self)/d(self) = 1 on a one-element result and propagates.
  void backward();
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvGeometry g);
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvGeometry g);
template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad);
template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps = T(1e-5));
template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// mean over all elements of (x - target)^2.
template <typename T>
Var<T> mean_squared_to(const Var<T>& x, T target);
// Mean |a - b| over elements whose mask is 1. The mask is [N, 1, H, W] or
// the full shape of a, broadcast over channels; empty selection yields 0.
template <typename T>
Var<T> masked_l1(const Var<T>& a, const Var<T>& b, const Tensor<T>& mask);
// Mean over pixels of |r-g| + |r-b| + |g-b| for a 3-channel batch.
template <typename T>
Var<T> channel_spread(const Var<T>& x);
// sum_i weights[i] * terms[i] over one-element terms.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights);

}  // namespace vstain::ag
