#include "vstain/core/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vstain::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
bool wants(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

template <typename T>
T sign_of(T v) {
  return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
void Var<T>::backward() {
  if (!node_ || node_->value.size() != 1) {
    throw std::logic_error("backward() requires a one-element result");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node<T>* child = n->inputs[next++].get();
      if (child && child->requires_grad && !child->inputs.empty() && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  node_->ensure_grad().fill(T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Release the graph; leaves keep their accumulated gradients.
  for (Node<T>* n : order) {
    n->inputs.clear();
    n->backward_fn = nullptr;
    if (n != node_.get()) n->grad = Tensor<T>();
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvGeometry g) {
  Tensor<T> y;
  kernels::conv2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr, g, y);
  std::vector<NodePtr<T>> inputs{x.node(), weight.node()};
  if (bias) inputs.push_back(bias->node());
  return make_result<T>(std::move(y), std::move(inputs), [g](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    if (xn.requires_grad) kernels::conv2d_backward_input(self.grad, wn.value, g, xn.ensure_grad());
    const bool want_b = bn && bn->requires_grad;
    if (wn.requires_grad) {
      kernels::conv2d_backward_weight(xn.value, self.grad, g, wn.ensure_grad(),
                                      want_b ? &bn->ensure_grad() : nullptr);
    } else if (want_b) {
      Tensor<T>& db = bn->ensure_grad();
      for (int ch = 0; ch < self.grad.c(); ++ch) {
        double s = 0.0;
        for (int i = 0; i < self.grad.n(); ++i) {
          const T* p = self.grad.plane(i, ch);
          for (std::int64_t j = 0; j < self.grad.shape().plane(); ++j) s += p[j];
        }
        db[ch] += static_cast<T>(s);
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, ConvGeometry g) {
  Tensor<T> y;
  kernels::conv_transpose2d_forward(x.value(), weight.value(), bias ? &bias->value() : nullptr, g, y);
  std::vector<NodePtr<T>> inputs{x.node(), weight.node()};
  if (bias) inputs.push_back(bias->node());
  return make_result<T>(std::move(y), std::move(inputs), [g](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    if (xn.requires_grad) {
      kernels::conv_transpose2d_backward_input(self.grad, wn.value, g, xn.ensure_grad());
    }
    const bool want_b = bn && bn->requires_grad;
    if (wn.requires_grad || want_b) {
      Tensor<T> scratch;
      Tensor<T>& dw = wn.requires_grad ? wn.ensure_grad() : (scratch = Tensor<T>(wn.value.shape()));
      kernels::conv_transpose2d_backward_weight(xn.value, self.grad, g, dw,
                                                want_b ? &bn->ensure_grad() : nullptr);
    }
  });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
  Tensor<T> y;
  kernels::reflect_pad_forward(x.value(), pad, y);
  return make_result<T>(std::move(y), {x.node()}, [pad](Node<T>& self) {
    kernels::reflect_pad_backward(self.grad, pad, self.inputs[0]->ensure_grad());
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  Tensor<T> y, inv_std;
  kernels::instance_norm_forward(x.value(), eps, y, inv_std);
  auto result = make_result<T>(y, {x.node()}, nullptr);
  if (result.requires_grad()) {
    result.node()->backward_fn = [inv_std = std::move(inv_std)](Node<T>& self) {
      kernels::instance_norm_backward(self.grad, self.value, inv_std, self.inputs[0]->ensure_grad());
    };
  }
  return result;
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = in[i] > T{0} ? in[i] : T{0};
  return make_result<T>(std::move(y), {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      if (self.value[i] > T{0}) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = in[i] > T{0} ? in[i] : slope * in[i];
  return make_result<T>(std::move(y), {x.node()}, [slope](Node<T>& self) {
    auto& in_node = *self.inputs[0];
    auto& g = in_node.ensure_grad();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      g[i] += in_node.value[i] > T{0} ? self.grad[i] : slope * self.grad[i];
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> y(x.shape());
  const auto& in = x.value();
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = std::tanh(in[i]);
  return make_result<T>(std::move(y), {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < g.size(); ++i) {
      const T t = self.value[i];
      g[i] += self.grad[i] * (T{1} - t * t);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> y(a.shape());
  for (std::int64_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(y), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw std::invalid_argument("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::int64_t pa = sa.c * sa.plane(), pb = sb.c * sb.plane();
  for (int i = 0; i < sa.n; ++i) {
    std::copy_n(a.value().sample(i), pa, y.sample(i));
    std::copy_n(b.value().sample(i), pb, y.sample(i) + pa);
  }
  return make_result<T>(std::move(y), {a.node(), b.node()}, [pa, pb](Node<T>& self) {
    auto& an = *self.inputs[0];
    auto& bn = *self.inputs[1];
    for (int i = 0; i < self.grad.n(); ++i) {
      const T* g = self.grad.sample(i);
      if (an.requires_grad) {
        T* d = an.ensure_grad().sample(i);
        for (std::int64_t j = 0; j < pa; ++j) d[j] += g[j];
      }
      if (bn.requires_grad) {
        T* d = bn.ensure_grad().sample(i);
        for (std::int64_t j = 0; j < pb; ++j) d[j] += g[pa + j];
      }
    }
  });
}

template <typename T>
Var<T> mean_squared_to(const Var<T>& x, T target) {
  const auto& v = x.value();
  double s = 0.0;
  for (std::int64_t i = 0; i < v.size(); ++i) {
    const double d = static_cast<double>(v[i]) - target;
    s += d * d;
  }
  const double count = static_cast<double>(v.size());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(s / count)), {x.node()},
                        [target, count](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          auto& g = in.ensure_grad();
                          const T scale = static_cast<T>(2.0 / count) * self.grad[0];
                          for (std::int64_t i = 0; i < g.size(); ++i) g[i] += scale * (in.value[i] - target);
                        });
}

namespace {

// Resolves the mask value for element (n, c, j) of a tensor of shape `s`.
template <typename T>
struct MaskView {
  const Tensor<T>& mask;
  Shape s;
  bool broadcast;
  T at(int n, int c, std::int64_t j) const {
    return broadcast ? mask.plane(n, 0)[j] : mask.plane(n, c)[j];
  }
};

template <typename T>
MaskView<T> make_mask_view(const Tensor<T>& mask, const Shape& s) {
  const Shape& m = mask.shape();
  if (m == s) return {mask, s, false};
  if (m.n == s.n && m.c == 1 && m.h == s.h && m.w == s.w) return {mask, s, true};
  throw std::invalid_argument("masked_l1: mask " + m.str() + " incompatible with " + s.str());
}

}  // namespace

template <typename T>
Var<T> masked_l1(const Var<T>& a, const Var<T>& b, const Tensor<T>& mask) {
  if (!(a.shape() == b.shape())) throw std::invalid_argument("masked_l1: shape mismatch");
  const Shape s = a.shape();
  const auto view = make_mask_view(mask, s);
  double sum = 0.0;
  double count = 0.0;
  const std::int64_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* pa = a.value().plane(n, c);
      const T* pb = b.value().plane(n, c);
      for (std::int64_t j = 0; j < plane; ++j) {
        if (view.at(n, c, j) != T{0}) {
          sum += std::abs(static_cast<double>(pa[j]) - pb[j]);
          count += 1.0;
        }
      }
    }
  }
  const T value = count > 0.0 ? static_cast<T>(sum / count) : T{0};
  auto result = make_result<T>(Tensor<T>::scalar(value), {a.node(), b.node()}, nullptr);
  if (result.requires_grad() && count > 0.0) {
    result.node()->backward_fn = [mask, s, count](Node<T>& self) {
      const auto v = make_mask_view(mask, s);
      auto& an = *self.inputs[0];
      auto& bn = *self.inputs[1];
      const T scale = static_cast<T>(1.0 / count) * self.grad[0];
      const std::int64_t plane = s.plane();
      T* ga = an.requires_grad ? an.ensure_grad().data() : nullptr;
      T* gb = bn.requires_grad ? bn.ensure_grad().data() : nullptr;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const std::int64_t base = (static_cast<std::int64_t>(n) * s.c + c) * plane;
          for (std::int64_t j = 0; j < plane; ++j) {
            if (v.at(n, c, j) == T{0}) continue;
            const T d = scale * sign_of(an.value[base + j] - bn.value[base + j]);
            if (ga) ga[base + j] += d;
            if (gb) gb[base + j] -= d;
          }
        }
      }
    };
  }
  return result;
}

template <typename T>
Var<T> channel_spread(const Var<T>& x) {
  const Shape s = x.shape();
  if (s.c != 3) throw std::invalid_argument("channel_spread expects 3 channels, got " + s.str());
  const std::int64_t plane = s.plane();
  double sum = 0.0;
  for (int n = 0; n < s.n; ++n) {
    const T* r = x.value().plane(n, 0);
    const T* g = x.value().plane(n, 1);
    const T* b = x.value().plane(n, 2);
    for (std::int64_t j = 0; j < plane; ++j) {
      sum += std::abs(static_cast<double>(r[j]) - g[j]) + std::abs(static_cast<double>(r[j]) - b[j]) +
             std::abs(static_cast<double>(g[j]) - b[j]);
    }
  }
  const double count = static_cast<double>(s.n) * plane;
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(sum / count)), {x.node()},
                        [count](Node<T>& self) {
                          auto& in = *self.inputs[0];
                          auto& grad = in.ensure_grad();
                          const T scale = static_cast<T>(1.0 / count) * self.grad[0];
                          const std::int64_t plane = in.value.shape().plane();
                          for (int n = 0; n < in.value.n(); ++n) {
                            const T* r = in.value.plane(n, 0);
                            const T* g = in.value.plane(n, 1);
                            const T* b = in.value.plane(n, 2);
                            T* dr = grad.plane(n, 0);
                            T* dg = grad.plane(n, 1);
                            T* db = grad.plane(n, 2);
                            for (std::int64_t j = 0; j < plane; ++j) {
                              const T rg = sign_of(r[j] - g[j]), rb = sign_of(r[j] - b[j]),
                                      gb = sign_of(g[j] - b[j]);
                              dr[j] += scale * (rg + rb);
                              dg[j] += scale * (-rg + gb);
                              db[j] += scale * (-rb - gb);
                            }
                          }
                        });
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  T total{0};
  std::vector<NodePtr<T>> inputs;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].item();
    inputs.push_back(terms[i].node());
  }
  return make_result<T>(Tensor<T>::scalar(total), std::move(inputs), [weights](Node<T>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      auto& in = *self.inputs[i];
      if (in.requires_grad && weights[i] != T{0}) in.ensure_grad()[0] += weights[i] * self.grad[0];
    }
  });
}

#define VSTAIN_INSTANTIATE_AG(T)                                                           \
  template class Var<T>;                                                                 \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>*, ConvGeometry);   \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const Var<T>*,       \
                                      ConvGeometry);                                     \
  template Var<T> reflect_pad<T>(const Var<T>&, int);                                    \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                    \
  template Var<T> relu<T>(const Var<T>&);                                                \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                       \
  template Var<T> tanh<T>(const Var<T>&);                                                \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                      \
  template Var<T> mean_squared_to<T>(const Var<T>&, T);                                  \
  template Var<T> masked_l1<T>(const Var<T>&, const Var<T>&, const Tensor<T>&);          \
  template Var<T> channel_spread<T>(const Var<T>&);                                      \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, const std::vector<T>&);

VSTAIN_INSTANTIATE_AG(float)
VSTAIN_INSTANTIATE_AG(double)
#undef VSTAIN_INSTANTIATE_AG

}  // namespace vstain::ag
