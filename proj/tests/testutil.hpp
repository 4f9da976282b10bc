#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pen/rng.hpp"
#include "pen/tensor.hpp"

namespace testutil {

inline pen::Tensor<double> random_tensor(pen::Rng& rng, int n, int c, int h,
                                         int w, double lo = -1.0,
                                         double hi = 1.0) {
  pen::Tensor<double> t(n, c, h, w);
  for (auto& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

inline pen::Tensor<float> random_tensor_f(pen::Rng& rng, int n, int c, int h,
                                          int w, double lo = -1.0,
                                          double hi = 1.0) {
  pen::Tensor<float> t(n, c, h, w);
  for (auto& v : t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

// Central finite differences of a scalar-valued function w.r.t. every
// coordinate of `x`, compared against `analytic` with a relative-error bound.
inline double max_rel_error(
    pen::Tensor<double>& x, const pen::Tensor<double>& analytic,
    const std::function<double()>& eval, double step = 1e-5) {
  double worst = 0.0;
  for (size_t i = 0; i < x.v.size(); ++i) {
    double saved = x.v[i];
    x.v[i] = saved + step;
    double up = eval();
    x.v[i] = saved - step;
    double down = eval();
    x.v[i] = saved;
    double fd = (up - down) / (2.0 * step);
    double a = analytic.v[i];
    double denom = std::max({std::abs(fd), std::abs(a), 1e-6});
    worst = std::max(worst, std::abs(fd - a) / denom);
  }
  return worst;
}

}  // namespace testutil
