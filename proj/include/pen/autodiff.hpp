#pragma once

// Small reverse-mode autodiff tape over NCHW tensors. Graphs are built
// eagerly per training step and freed when the root value goes out of scope;
// parameter leaves persist across steps and keep their gradient until the
// optimizer clears it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "pen/kernels.hpp"
#include "pen/tensor.hpp"

namespace pen::ag {

using kern::PadMode;

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void accum_grad(const Tensor<T>& g) {
    if (grad.empty()) grad = Tensor<T>(value.n, value.c, value.h, value.w);
    for (size_t i = 0; i < grad.v.size(); ++i) grad.v[i] += g.v[i];
  }
  void clear_grad() { grad = Tensor<T>(); }
};

template <class T>
using Value = std::shared_ptr<Node<T>>;

template <class T>
uint64_t next_node_id() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

template <class T>
Value<T> leaf(Tensor<T> t, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  n->id = next_node_id<T>();
  return n;
}

template <class T>
Value<T> constant(Tensor<T> t) {
  return leaf(std::move(t), false);
}

template <class T>
Value<T> make_op(Tensor<T> value, std::vector<Value<T>> parents,
                 std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->id = next_node_id<T>();
  bool need = false;
  if (grad_mode()) {
    for (const auto& p : parents) need = need || (p && p->requires_grad);
  }
  if (need) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

// Backward pass from a scalar root. Nodes are replayed in reverse creation
// order, which is a valid topological order for an eagerly built graph.
template <class T>
void backward(const Value<T>& root) {
  if (!root->requires_grad) return;
  root->grad = Tensor<T>(root->value.n, root->value.c, root->value.h,
                         root->value.w, T(1));
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& p : n->parents) {
      if (p && p->requires_grad && seen.insert(p.get()).second)
        stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](Node<T>* a, Node<T>* b) { return a->id > b->id; });
  for (Node<T>* n : order) {
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---- elementwise ----

template <class T>
Value<T> add(Value<T> a, Value<T> b) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->value.v[i];
  return make_op<T>(std::move(out), {a, b}, [a, b](Node<T>& n) {
    if (a->requires_grad) a->accum_grad(n.grad);
    if (b->requires_grad) b->accum_grad(n.grad);
  });
}

template <class T>
Value<T> scale(Value<T> a, T s) {
  Tensor<T> out = a->value;
  for (auto& v : out.v) v *= s;
  return make_op<T>(std::move(out), {a}, [a, s](Node<T>& n) {
    if (!a->requires_grad) return;
    Tensor<T> g = n.grad;
    for (auto& v : g.v) v *= s;
    a->accum_grad(g);
  });
}

// a + s*b, used to combine loss terms.
template <class T>
Value<T> add_scaled(Value<T> a, Value<T> b, T s) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += s * b->value.v[i];
  return make_op<T>(std::move(out), {a, b}, [a, b, s](Node<T>& n) {
    if (a->requires_grad) a->accum_grad(n.grad);
    if (b->requires_grad) {
      Tensor<T> g = n.grad;
      for (auto& v : g.v) v *= s;
      b->accum_grad(g);
    }
  });
}

template <class T>
Value<T> relu(Value<T> a) {
  Tensor<T> out = a->value;
  for (auto& v : out.v) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {a}, [a](Node<T>& n) {
    if (!a->requires_grad) return;
    Tensor<T> g = n.grad;
    for (size_t i = 0; i < g.v.size(); ++i)
      if (a->value.v[i] <= T(0)) g.v[i] = T(0);
    a->accum_grad(g);
  });
}

template <class T>
Value<T> sigmoid(Value<T> a) {
  Tensor<T> out = a->value;
  for (auto& v : out.v) v = T(1) / (T(1) + std::exp(-v));
  auto self = std::make_shared<Tensor<T>>(out);
  return make_op<T>(std::move(out), {a}, [a, self](Node<T>& n) {
    if (!a->requires_grad) return;
    Tensor<T> g = n.grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      T y = self->v[i];
      g.v[i] *= y * (T(1) - y);
    }
    a->accum_grad(g);
  });
}

// Gates each channel of `x` by the single-channel map `att` (broadcast along
// the channel axis).
template <class T>
Value<T> broadcast_mul_channel(Value<T> x, Value<T> att) {
  const Tensor<T>& a = x->value;
  const Tensor<T>& m = att->value;
  Tensor<T> out = a;
  const int hw = a.h * a.w;
  for (int i = 0; i < a.n; ++i) {
    const T* mp = m.plane(i, 0);
    for (int c = 0; c < a.c; ++c) {
      T* o = out.plane(i, c);
      for (int q = 0; q < hw; ++q) o[q] *= mp[q];
    }
  }
  return make_op<T>(std::move(out), {x, att}, [x, att](Node<T>& n) {
    const Tensor<T>& a = x->value;
    const Tensor<T>& m = att->value;
    const int hw = a.h * a.w;
    if (x->requires_grad) {
      Tensor<T> g(a.n, a.c, a.h, a.w);
      for (int i = 0; i < a.n; ++i) {
        const T* mp = m.plane(i, 0);
        for (int c = 0; c < a.c; ++c) {
          const T* go = n.grad.plane(i, c);
          T* gp = g.plane(i, c);
          for (int q = 0; q < hw; ++q) gp[q] = go[q] * mp[q];
        }
      }
      x->accum_grad(g);
    }
    if (att->requires_grad) {
      Tensor<T> g(m.n, 1, m.h, m.w);
      for (int i = 0; i < a.n; ++i) {
        T* gp = g.plane(i, 0);
        for (int c = 0; c < a.c; ++c) {
          const T* go = n.grad.plane(i, c);
          const T* ap = a.plane(i, c);
          for (int q = 0; q < hw; ++q) gp[q] += go[q] * ap[q];
        }
      }
      att->accum_grad(g);
    }
  });
}

// ---- structured ops ----

template <class T>
Value<T> conv2d(Value<T> x, Value<T> w, Value<T> b, int stride, int pad,
                PadMode mode = PadMode::Zero) {
  Tensor<T> out = kern::conv2d_forward(x->value, w->value,
                                       b ? b->value : Tensor<T>{}, stride, pad,
                                       mode);
  std::vector<Value<T>> parents = b ? std::vector<Value<T>>{x, w, b}
                                    : std::vector<Value<T>>{x, w};
  return make_op<T>(std::move(out), std::move(parents),
                    [x, w, b, stride, pad, mode](Node<T>& n) {
    Tensor<T> gx, gw, gb;
    if (x->requires_grad)
      gx = Tensor<T>(x->value.n, x->value.c, x->value.h, x->value.w);
    if (w->requires_grad)
      gw = Tensor<T>(w->value.n, w->value.c, w->value.h, w->value.w);
    if (b && b->requires_grad)
      gb = Tensor<T>(b->value.n, b->value.c, b->value.h, b->value.w);
    kern::conv2d_backward(x->value, w->value, n.grad, stride, pad, mode,
                          x->requires_grad ? &gx : nullptr,
                          w->requires_grad ? &gw : nullptr,
                          (b && b->requires_grad) ? &gb : nullptr);
    if (x->requires_grad) x->accum_grad(gx);
    if (w->requires_grad) w->accum_grad(gw);
    if (b && b->requires_grad) b->accum_grad(gb);
  });
}

template <class T>
Value<T> batch_norm(Value<T> x, Value<T> gamma, Value<T> beta,
                    Tensor<float>* running_mean, Tensor<float>* running_var,
                    bool training, double momentum = 0.1, double eps = 1e-5) {
  auto saved = std::make_shared<kern::BnStats>();
  Tensor<T> out = kern::batchnorm_forward(x->value, gamma->value, beta->value,
                                          running_mean, running_var, training,
                                          momentum, eps, saved.get());
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [x, gamma, beta, saved, training](Node<T>& n) {
    Tensor<T> gx, gg, gb;
    if (x->requires_grad)
      gx = Tensor<T>(x->value.n, x->value.c, x->value.h, x->value.w);
    if (gamma->requires_grad) gg = Tensor<T>(1, x->value.c, 1, 1);
    if (beta->requires_grad) gb = Tensor<T>(1, x->value.c, 1, 1);
    kern::batchnorm_backward(x->value, gamma->value, *saved, n.grad, training,
                             x->requires_grad ? &gx : nullptr,
                             gamma->requires_grad ? &gg : nullptr,
                             beta->requires_grad ? &gb : nullptr);
    if (x->requires_grad) x->accum_grad(gx);
    if (gamma->requires_grad) gamma->accum_grad(gg);
    if (beta->requires_grad) beta->accum_grad(gb);
  });
}

template <class T>
Value<T> maxpool3x3s2(Value<T> x) {
  auto argmax = std::make_shared<std::vector<int>>();
  Tensor<T> out = kern::maxpool3x3s2_forward(x->value, argmax.get());
  return make_op<T>(std::move(out), {x}, [x, argmax](Node<T>& n) {
    if (!x->requires_grad) return;
    Tensor<T> gx(x->value.n, x->value.c, x->value.h, x->value.w);
    kern::maxpool3x3s2_backward(x->value, *argmax, n.grad, &gx);
    x->accum_grad(gx);
  });
}

template <class T>
Value<T> resize_bilinear(Value<T> x, int oh, int ow) {
  if (oh == x->value.h && ow == x->value.w) return x;
  Tensor<T> out = kern::resize_bilinear_forward(x->value, oh, ow);
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    Tensor<T> gx(x->value.n, x->value.c, x->value.h, x->value.w);
    kern::resize_bilinear_backward(n.grad, x->value.h, x->value.w, &gx);
    x->accum_grad(gx);
  });
}

template <class T>
Value<T> pad_replicate(Value<T> x, int top, int left, int bottom, int right) {
  if (top == 0 && left == 0 && bottom == 0 && right == 0) return x;
  Tensor<T> out =
      kern::pad_replicate_forward(x->value, top, left, bottom, right);
  return make_op<T>(std::move(out), {x}, [x, top, left](Node<T>& n) {
    if (!x->requires_grad) return;
    Tensor<T> gx(x->value.n, x->value.c, x->value.h, x->value.w);
    kern::pad_replicate_backward(n.grad, top, left, x->value.h, x->value.w,
                                 &gx);
    x->accum_grad(gx);
  });
}

template <class T>
Value<T> crop(Value<T> x, int top, int left, int oh, int ow) {
  if (top == 0 && left == 0 && oh == x->value.h && ow == x->value.w) return x;
  Tensor<T> out(x->value.n, x->value.c, oh, ow);
  for (int i = 0; i < out.n; ++i)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < oh; ++y)
        for (int q = 0; q < ow; ++q)
          out.at(i, c, y, q) = x->value.at(i, c, y + top, q + left);
  return make_op<T>(std::move(out), {x}, [x, top, left](Node<T>& n) {
    if (!x->requires_grad) return;
    Tensor<T> gx(x->value.n, x->value.c, x->value.h, x->value.w);
    for (int i = 0; i < n.grad.n; ++i)
      for (int c = 0; c < n.grad.c; ++c)
        for (int y = 0; y < n.grad.h; ++y)
          for (int q = 0; q < n.grad.w; ++q)
            gx.at(i, c, y + top, q + left) = n.grad.at(i, c, y, q);
    x->accum_grad(gx);
  });
}

template <class T>
Value<T> sobel(Value<T> x) {
  Tensor<T> out = kern::sobel_forward(x->value);
  return make_op<T>(std::move(out), {x}, [x](Node<T>& n) {
    if (!x->requires_grad) return;
    Tensor<T> gx(x->value.n, 1, x->value.h, x->value.w);
    kern::sobel_backward(n.grad, x->value.h, x->value.w, &gx);
    x->accum_grad(gx);
  });
}

}  // namespace pen::ag
