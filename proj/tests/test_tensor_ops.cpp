#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pen/rng.hpp"
#include "pen/tensor_ops.hpp"
#include "testutil.hpp"

using namespace pen;
using testutil::random_tensor;

namespace {

// Independent oracle: direct nested-loop cross-correlation with replicate
// padding, no shared code with the implementation path.
template <class T>
Tensor<T> naive_sobel(const Tensor<T>& x) {
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  Tensor<T> out(x.n, 2, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int r = 0; r < x.h; ++r)
      for (int c = 0; c < x.w; ++c) {
        double sx = 0, sy = 0;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            int rr = std::clamp(r + dr, 0, x.h - 1);
            int cc = std::clamp(c + dc, 0, x.w - 1);
            sx += kx[dr + 1][dc + 1] * static_cast<double>(x.at(i, 0, rr, cc));
            sy += kx[dc + 1][dr + 1] * static_cast<double>(x.at(i, 0, rr, cc));
          }
        out.at(i, 0, r, c) = static_cast<T>(sx);
        out.at(i, 1, r, c) = static_cast<T>(sy);
      }
  return out;
}

}  // namespace

TEST_CASE("constant maps give exactly zero") {
  for (double c : {0.0, 0.3, 1.0, -2.5}) {
    Tensor<double> x(1, 1, 5, 7, c);
    Tensor<double> e = ops::sobel(x);
    for (double v : e.v) CHECK(v == 0.0);
  }
  Tensor<float> xf(1, 1, 9, 4, 0.7f);
  for (float v : ops::sobel(xf).v) CHECK(v == 0.0f);
}

TEST_CASE("step edge response") {
  // columns 0-1 at 0, columns 2-4 at 1: interior x-response 4, y-response 0
  Tensor<double> x(1, 1, 5, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) x.at(0, 0, r, c) = c >= 2 ? 1.0 : 0.0;
  Tensor<double> e = ops::sobel(x);
  CHECK(e.at(0, 0, 2, 2) == doctest::Approx(4.0));
  CHECK(e.at(0, 1, 2, 2) == doctest::Approx(0.0));
}

TEST_CASE("matches naive cross-correlation oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> x = random_tensor(rng, 1, 1, 16, 16, 0.0, 1.0);
    Tensor<double> got = ops::sobel(x);
    Tensor<double> want = naive_sobel(x);
    for (size_t i = 0; i < got.v.size(); ++i)
      CHECK(std::abs(got.v[i] - want.v[i]) < 1e-6);
  }
}

TEST_CASE("transpose symmetry") {
  Rng rng(22);
  Tensor<double> x = random_tensor(rng, 1, 1, 8, 8);
  Tensor<double> xt(1, 1, 8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) xt.at(0, 0, r, c) = x.at(0, 0, c, r);
  Tensor<double> e = ops::sobel(x);
  Tensor<double> et = ops::sobel(xt);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(et.at(0, 0, r, c) ==
            doctest::Approx(e.at(0, 1, c, r)).epsilon(1e-12));
}

TEST_CASE("linearity") {
  Rng rng(23);
  Tensor<double> a = random_tensor(rng, 1, 1, 12, 12);
  Tensor<double> b = random_tensor(rng, 1, 1, 12, 12);
  double s = 0.7, t = -1.3;
  Tensor<double> mix(1, 1, 12, 12);
  for (size_t i = 0; i < mix.v.size(); ++i) mix.v[i] = s * a.v[i] + t * b.v[i];
  Tensor<double> em = ops::sobel(mix);
  Tensor<double> ea = ops::sobel(a);
  Tensor<double> eb = ops::sobel(b);
  for (size_t i = 0; i < em.v.size(); ++i)
    CHECK(std::abs(em.v[i] - (s * ea.v[i] + t * eb.v[i])) < 1e-6);
}

TEST_CASE("attention gate identity, zero and example") {
  Rng rng(24);
  Tensor<double> edge = random_tensor(rng, 1, 2, 4, 4);
  Tensor<double> ones(1, 1, 4, 4, 1.0);
  Tensor<double> zeros(1, 1, 4, 4, 0.0);
  Tensor<double> gated = ops::attention_gate(edge, ones);
  for (size_t i = 0; i < edge.v.size(); ++i) CHECK(gated.v[i] == edge.v[i]);
  for (double v : ops::attention_gate(edge, zeros).v) CHECK(v == 0.0);

  Tensor<double> e(1, 2, 1, 2);
  e.at(0, 0, 0, 0) = 2.0;
  e.at(0, 0, 0, 1) = -4.0;
  Tensor<double> att(1, 1, 1, 2);
  att.at(0, 0, 0, 0) = 0.5;
  att.at(0, 0, 0, 1) = 0.25;
  Tensor<double> g = ops::attention_gate(e, att);
  CHECK(g.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(g.at(0, 0, 0, 1) == doctest::Approx(-1.0));
}

TEST_CASE("attention gate is bilinear") {
  Rng rng(25);
  Tensor<double> e1 = random_tensor(rng, 1, 2, 3, 3);
  Tensor<double> e2 = random_tensor(rng, 1, 2, 3, 3);
  Tensor<double> m = random_tensor(rng, 1, 1, 3, 3);
  double a = 0.4, b = -2.0;
  Tensor<double> mix(1, 2, 3, 3);
  for (size_t i = 0; i < mix.v.size(); ++i)
    mix.v[i] = a * e1.v[i] + b * e2.v[i];
  Tensor<double> lhs = ops::attention_gate(mix, m);
  Tensor<double> r1 = ops::attention_gate(e1, m);
  Tensor<double> r2 = ops::attention_gate(e2, m);
  for (size_t i = 0; i < lhs.v.size(); ++i)
    CHECK(lhs.v[i] == doctest::Approx(a * r1.v[i] + b * r2.v[i]));
}

TEST_CASE("gate rejects shape mismatch") {
  Tensor<double> e(1, 2, 4, 4);
  Tensor<double> m(1, 1, 5, 4);
  CHECK_THROWS(ops::attention_gate(e, m));
}
