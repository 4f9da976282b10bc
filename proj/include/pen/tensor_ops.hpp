#pragma once

// Differentiable image operators shared by the losses and the models:
// directional Sobel filtering and attention gating. Plain-tensor entry points
// here; the autodiff-wrapped versions live in pen::ag.

#include <stdexcept>

#include "pen/autodiff.hpp"
#include "pen/kernels.hpp"
#include "pen/tensor.hpp"

namespace pen::ops {

// (N,1,H,W) probability map -> (N,2,H,W) signed edge map, channel 0 = x
// direction, channel 1 = y direction. Replicate border padding.
template <class T>
Tensor<T> sobel(const Tensor<T>& map) {
  if (map.c != 1 || map.h < 1 || map.w < 1)
    throw std::invalid_argument("sobel: expected non-empty (N,1,H,W) map");
  return kern::sobel_forward(map);
}

// Multiplies both edge channels by the single attention channel.
template <class T>
Tensor<T> attention_gate(const Tensor<T>& edge, const Tensor<T>& attention) {
  if (attention.c != 1 || edge.n != attention.n || edge.h != attention.h ||
      edge.w != attention.w)
    throw std::invalid_argument("attention_gate: shape mismatch");
  Tensor<T> out = edge;
  const int hw = edge.h * edge.w;
  for (int i = 0; i < edge.n; ++i) {
    const T* mp = attention.plane(i, 0);
    for (int c = 0; c < edge.c; ++c) {
      T* o = out.plane(i, c);
      for (int q = 0; q < hw; ++q) o[q] *= mp[q];
    }
  }
  return out;
}

}  // namespace pen::ops
