#pragma once

// Weighted partial cross-entropy over point/Voronoi labels, the Sobel
// edge-consistency term, and their combination. All reductions accumulate in
// double with fixed row-major order so breakdown identities hold bit-wise.

#include <cmath>
#include <optional>
#include <stdexcept>

#include "pen/autodiff.hpp"
#include "pen/tensor.hpp"
#include "pen/tensor_ops.hpp"

namespace pen::loss {

struct LossConfig {
  double lambda = 1.0;           // edge-term scale
  double weight_positive = 1.0;  // per-pixel CE weight, positive labels
  double weight_negative = 0.1;  // per-pixel CE weight, negative labels
  bool use_attention = false;
  double clamp_eps = 1e-7;  // prediction clamp before the logarithm

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("loss: lambda must be >= 0");
    if (weight_positive <= 0.0 || weight_negative <= 0.0)
      throw std::invalid_argument("loss: label weights must be > 0");
  }
};

struct LossBreakdown {
  double ce = 0.0;
  double edge = 0.0;
  double total = 0.0;
};

namespace detail {

struct CeSums {
  double weighted_sum = 0.0;
  int64_t labeled = 0;
};

template <class T>
CeSums ce_partial_sums(const Tensor<T>& pred, const Tensor<uint8_t>& labels,
                       const LossConfig& cfg) {
  if (pred.n != labels.n || pred.h != labels.h || pred.w != labels.w ||
      pred.c != 1)
    throw std::invalid_argument("weighted_partial_ce: shape mismatch");
  CeSums s;
  const double eps = cfg.clamp_eps;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const auto lab = static_cast<Label>(labels.v[i]);
    if (lab == Label::Ignore) continue;
    double p = std::clamp(static_cast<double>(pred.v[i]), eps, 1.0 - eps);
    double term = (lab == Label::Positive)
                      ? -cfg.weight_positive * std::log(p)
                      : -cfg.weight_negative * std::log(1.0 - p);
    s.weighted_sum += term;
    s.labeled += 1;
  }
  if (s.labeled == 0)
    throw std::invalid_argument("weighted_partial_ce: no supervision");
  return s;
}

// Sum over channels and pixels of |a - b|.
template <class T>
double l1_sum(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("edge_consistency: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i)
    s += std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]));
  return s;
}

}  // namespace detail

// Mean over labeled pixels of w_i * BCE(pred_i, y_i); IGNORE pixels are
// excluded from numerator and denominator.
template <class T>
double weighted_partial_ce(const Tensor<T>& pred,
                           const Tensor<uint8_t>& labels,
                           const LossConfig& cfg) {
  auto s = detail::ce_partial_sums(pred, labels, cfg);
  return s.weighted_sum / static_cast<double>(s.labeled);
}

inline double weighted_partial_ce(const Grid<float>& pred,
                                  const LabelMap& labels,
                                  const LossConfig& cfg) {
  Tensor<float> p = grid_to_tensor(pred);
  Tensor<uint8_t> l(1, 1, labels.height, labels.width);
  for (size_t i = 0; i < labels.data.size(); ++i)
    l.v[i] = static_cast<uint8_t>(labels.data[i]);
  return weighted_partial_ce(p, l, cfg);
}

// Mean over pixels (and batch) of the two-channel L1 difference between
// sobel(seg) and the (optionally gated) edge map.
template <class T>
double edge_consistency(const Tensor<T>& seg, const Tensor<T>& edge,
                        const Tensor<T>* attention) {
  Tensor<T> s = ops::sobel(seg);
  Tensor<T> target = attention ? ops::attention_gate(edge, *attention) : edge;
  double denom = static_cast<double>(seg.n) * seg.h * seg.w;
  return detail::l1_sum(s, target) / denom;
}

template <class T>
double edge_consistency(const Tensor<T>& seg, const Tensor<T>& edge) {
  return edge_consistency(seg, edge, static_cast<const Tensor<T>*>(nullptr));
}

// ---- autodiff path ----

template <class T>
ag::Value<T> weighted_partial_ce_node(ag::Value<T> pred,
                                      const Tensor<uint8_t>& labels,
                                      const LossConfig& cfg) {
  auto s = detail::ce_partial_sums(pred->value, labels, cfg);
  double value = s.weighted_sum / static_cast<double>(s.labeled);
  auto labels_copy = std::make_shared<Tensor<uint8_t>>(labels);
  double count = static_cast<double>(s.labeled);
  return ag::make_op<T>(
      Tensor<T>::scalar(static_cast<T>(value)), {pred},
      [pred, labels_copy, cfg, count](ag::Node<T>& n) {
        if (!pred->requires_grad) return;
        const double eps = cfg.clamp_eps;
        const double g0 = static_cast<double>(n.grad.v[0]);
        Tensor<T> g(pred->value.n, pred->value.c, pred->value.h,
                    pred->value.w);
        for (size_t i = 0; i < g.v.size(); ++i) {
          const auto lab = static_cast<Label>(labels_copy->v[i]);
          if (lab == Label::Ignore) continue;
          double p = static_cast<double>(pred->value.v[i]);
          if (p < eps || p > 1.0 - eps) continue;  // clamp subgradient
          double d = (lab == Label::Positive)
                         ? -cfg.weight_positive / p
                         : cfg.weight_negative / (1.0 - p);
          g.v[i] = static_cast<T>(g0 * d / count);
        }
        pred->accum_grad(g);
      });
}

// Mean over batch and pixels of the channel-summed absolute difference.
template <class T>
ag::Value<T> l1_pixel_mean_node(ag::Value<T> a, ag::Value<T> b) {
  double denom = static_cast<double>(a->value.n) * a->value.h * a->value.w;
  double value = detail::l1_sum(a->value, b->value) / denom;
  return ag::make_op<T>(
      Tensor<T>::scalar(static_cast<T>(value)), {a, b},
      [a, b, denom](ag::Node<T>& n) {
        const T g0 = static_cast<T>(static_cast<double>(n.grad.v[0]) / denom);
        Tensor<T> ga, gb;
        if (a->requires_grad)
          ga = Tensor<T>(a->value.n, a->value.c, a->value.h, a->value.w);
        if (b->requires_grad)
          gb = Tensor<T>(b->value.n, b->value.c, b->value.h, b->value.w);
        for (size_t i = 0; i < a->value.v.size(); ++i) {
          T d = a->value.v[i] - b->value.v[i];
          T sg = d > T(0) ? g0 : (d < T(0) ? -g0 : T(0));
          if (a->requires_grad) ga.v[i] = sg;
          if (b->requires_grad) gb.v[i] = -sg;
        }
        if (a->requires_grad) a->accum_grad(ga);
        if (b->requires_grad) b->accum_grad(gb);
      });
}

template <class T>
ag::Value<T> edge_consistency_node(ag::Value<T> seg, ag::Value<T> edge,
                                   ag::Value<T> attention) {
  ag::Value<T> s = ag::sobel(seg);
  ag::Value<T> target =
      attention ? ag::broadcast_mul_channel(edge, attention) : edge;
  return l1_pixel_mean_node(s, target);
}

// Combined objective. `edge`/`attention` may be null (plain CE / ungated
// form). With lambda == 0 the edge term is evaluated for reporting only and
// contributes no gradient, so the optimization is exactly the CE baseline.
template <class T>
ag::Value<T> total_loss(ag::Value<T> seg, ag::Value<T> edge,
                        ag::Value<T> attention, const Tensor<uint8_t>& labels,
                        const LossConfig& cfg, LossBreakdown* breakdown) {
  cfg.validate();
  ag::Value<T> ce = weighted_partial_ce_node(seg, labels, cfg);
  double edge_value = 0.0;
  ag::Value<T> total = ce;
  if (edge) {
    if (cfg.lambda == 0.0) {
      const Tensor<T>* att = attention ? &attention->value : nullptr;
      edge_value = edge_consistency(seg->value, edge->value, att);
    } else {
      ag::Value<T> et = edge_consistency_node(seg, edge, attention);
      edge_value = static_cast<double>(et->value.v[0]);
      total = ag::add_scaled(ce, et, static_cast<T>(cfg.lambda));
    }
  }
  if (breakdown) {
    breakdown->ce = static_cast<double>(ce->value.v[0]);
    breakdown->edge = edge_value;
    breakdown->total = breakdown->ce + cfg.lambda * breakdown->edge;
  }
  return total;
}

}  // namespace pen::loss
