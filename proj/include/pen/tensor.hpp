#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace pen {

// Row-major 2-D grid. The currency of the annotation, data and eval modules.
template <class T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<size_t>(h) * w, fill) {}

  T& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  const T& at(int r, int c) const {
    return data[static_cast<size_t>(r) * width + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const {
    return height == o.height && width == o.width;
  }
  bool in_bounds(int r, int c) const {
    return r >= 0 && r < height && c >= 0 && c < width;
  }
};

// Tri-state supervision state of one pixel.
enum class Label : uint8_t { Ignore = 0, Positive = 1, Negative = 2 };

using LabelMap = Grid<Label>;

// Dense NCHW tensor. The currency of the autodiff engine and the models.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T{})
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, fill) {}

  static Tensor scalar(T x) {
    Tensor t(1, 1, 1, 1);
    t.v[0] = x;
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  bool empty() const { return v.empty(); }

  T& at(int i, int j, int y, int x) {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }
  const T& at(int i, int j, int y, int x) const {
    return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
  }

  T* plane(int i, int j) {
    return v.data() + (static_cast<size_t>(i) * c + j) * h * w;
  }
  const T* plane(int i, int j) const {
    return v.data() + (static_cast<size_t>(i) * c + j) * h * w;
  }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

template <class T>
Tensor<T> grid_to_tensor(const Grid<T>& g) {
  Tensor<T> t(1, 1, g.height, g.width);
  t.v = g.data;
  return t;
}

template <class T>
Grid<T> tensor_to_grid(const Tensor<T>& t, int i = 0, int j = 0) {
  Grid<T> g(t.h, t.w);
  const T* p = t.plane(i, j);
  std::copy(p, p + static_cast<size_t>(t.h) * t.w, g.data.begin());
  return g;
}

}  // namespace pen
