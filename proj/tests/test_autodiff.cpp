#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pen/autodiff.hpp"
#include "pen/rng.hpp"
#include "testutil.hpp"

using namespace pen;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

// Sum of an op output with fixed per-element weights gives a scalar whose
// input gradient we can check against central differences.
template <class Fn>
ag::Value<double> weighted_sum(ag::Value<double> y, const Tensor<double>& w,
                               Fn&&) = delete;

ag::Value<double> weighted_sum(ag::Value<double> y, const Tensor<double>& w) {
  double acc = 0;
  for (size_t i = 0; i < y->value.v.size(); ++i) acc += y->value.v[i] * w.v[i];
  auto wp = std::make_shared<Tensor<double>>(w);
  return ag::make_op<double>(
      Tensor<double>::scalar(acc), {y}, [y, wp](ag::Node<double>& n) {
        if (!y->requires_grad) return;
        Tensor<double> g(y->value.n, y->value.c, y->value.h, y->value.w);
        for (size_t i = 0; i < g.v.size(); ++i)
          g.v[i] = n.grad.v[0] * wp->v[i];
        y->accum_grad(g);
      });
}

struct GradCase {
  Tensor<double>* input;
  Tensor<double> analytic;
};

// Builds the graph via `make`, runs backward, returns max relative error of
// d(weighted sum)/d(each leaf) vs finite differences.
double check_op(
    Rng& rng,
    std::vector<Tensor<double>*> leaves,
    const std::function<ag::Value<double>(std::vector<ag::Value<double>>&)>&
        make) {
  std::vector<ag::Value<double>> vals;
  for (Tensor<double>* t : leaves) vals.push_back(ag::leaf(*t, true));
  ag::Value<double> out = make(vals);
  Tensor<double> w = random_tensor(rng, out->value.n, out->value.c,
                                   out->value.h, out->value.w);
  ag::Value<double> root = weighted_sum(out, w);
  ag::backward(root);

  double worst = 0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto eval = [&]() {
      ag::NoGradGuard ng;
      std::vector<ag::Value<double>> fresh;
      for (Tensor<double>* t : leaves) fresh.push_back(ag::leaf(*t, false));
      ag::Value<double> o = make(fresh);
      double acc = 0;
      for (size_t i = 0; i < o->value.v.size(); ++i)
        acc += o->value.v[i] * w.v[i];
      return acc;
    };
    worst = std::max(
        worst, max_rel_error(*leaves[li], vals[li]->grad, eval));
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d gradients, zero and replicate padding") {
  Rng rng(11);
  for (auto mode : {kern::PadMode::Zero, kern::PadMode::Replicate}) {
    for (int stride : {1, 2}) {
      Tensor<double> x = random_tensor(rng, 2, 3, 7, 6);
      Tensor<double> w = random_tensor(rng, 4, 3, 3, 3, -0.5, 0.5);
      Tensor<double> b = random_tensor(rng, 1, 4, 1, 1, -0.2, 0.2);
      double err = check_op(rng, {&x, &w, &b}, [&](auto& v) {
        return ag::conv2d(v[0], v[1], v[2], stride, 1, mode);
      });
      CAPTURE(stride);
      CHECK(err < 1e-7);
    }
  }
}

TEST_CASE("conv2d 1x1 and 7x7 gradients") {
  Rng rng(12);
  {
    Tensor<double> x = random_tensor(rng, 1, 5, 6, 6);
    Tensor<double> w = random_tensor(rng, 3, 5, 1, 1);
    Tensor<double> b = random_tensor(rng, 1, 3, 1, 1);
    double err = check_op(rng, {&x, &w, &b}, [&](auto& v) {
      return ag::conv2d(v[0], v[1], v[2], 1, 0, kern::PadMode::Zero);
    });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> x = random_tensor(rng, 1, 3, 9, 9);
    Tensor<double> w = random_tensor(rng, 2, 3, 7, 7, -0.1, 0.1);
    Tensor<double> b = random_tensor(rng, 1, 2, 1, 1);
    double err = check_op(rng, {&x, &w, &b}, [&](auto& v) {
      return ag::conv2d(v[0], v[1], v[2], 2, 3, kern::PadMode::Zero);
    });
    CHECK(err < 1e-7);
  }
}

TEST_CASE("batch norm training-mode gradients") {
  Rng rng(13);
  Tensor<double> x = random_tensor(rng, 3, 4, 5, 5);
  Tensor<double> gamma = random_tensor(rng, 1, 4, 1, 1, 0.5, 1.5);
  Tensor<double> beta = random_tensor(rng, 1, 4, 1, 1);
  double err = check_op(rng, {&x, &gamma, &beta}, [&](auto& v) {
    return ag::batch_norm(v[0], v[1], v[2], nullptr, nullptr, true);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("batch norm eval mode uses running stats") {
  Rng rng(14);
  Tensor<double> x = random_tensor(rng, 2, 2, 4, 4);
  Tensor<double> gamma(1, 2, 1, 1, 1.0);
  Tensor<double> beta(1, 2, 1, 1, 0.0);
  Tensor<float> rm(1, 2, 1, 1);
  Tensor<float> rv(1, 2, 1, 1, 1.f);
  rm.v = {0.5f, -0.25f};
  rv.v = {4.0f, 0.25f};
  ag::NoGradGuard ng;
  auto out = ag::batch_norm(ag::constant(x), ag::constant(gamma),
                            ag::constant(beta), &rm, &rv, false);
  // (x - 0.5)/sqrt(4 + eps) for channel 0
  double expect = (x.at(0, 0, 0, 0) - 0.5) / std::sqrt(4.0 + 1e-5);
  CHECK(out->value.at(0, 0, 0, 0) == doctest::Approx(expect).epsilon(1e-9));
  // running stats untouched in eval mode
  CHECK(rm.v[0] == 0.5f);
  CHECK(rv.v[1] == 0.25f);
}

TEST_CASE("maxpool, resize, pad, crop, sobel gradients") {
  Rng rng(15);
  {
    Tensor<double> x = random_tensor(rng, 2, 2, 7, 8);
    double err = check_op(rng, {&x},
                          [&](auto& v) { return ag::maxpool3x3s2(v[0]); });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> x = random_tensor(rng, 1, 3, 5, 4);
    double err = check_op(
        rng, {&x}, [&](auto& v) { return ag::resize_bilinear(v[0], 10, 8); });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> x = random_tensor(rng, 1, 2, 6, 9);
    double err = check_op(
        rng, {&x}, [&](auto& v) { return ag::resize_bilinear(v[0], 3, 5); });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> x = random_tensor(rng, 1, 2, 4, 4);
    double err = check_op(rng, {&x}, [&](auto& v) {
      return ag::crop(ag::pad_replicate(v[0], 0, 0, 3, 2), 0, 0, 4, 4);
    });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> x = random_tensor(rng, 2, 1, 6, 6);
    double err = check_op(rng, {&x}, [&](auto& v) { return ag::sobel(v[0]); });
    CHECK(err < 1e-7);
  }
}

TEST_CASE("elementwise op gradients") {
  Rng rng(16);
  {
    Tensor<double> a = random_tensor(rng, 1, 2, 3, 3);
    Tensor<double> b = random_tensor(rng, 1, 2, 3, 3);
    double err = check_op(
        rng, {&a, &b}, [&](auto& v) { return ag::add(v[0], v[1]); });
    CHECK(err < 1e-8);
  }
  {
    // keep away from the ReLU kink
    Tensor<double> x = random_tensor(rng, 1, 2, 4, 4, 0.2, 1.0);
    for (size_t i = 0; i < x.v.size(); i += 2) x.v[i] = -x.v[i];
    double err = check_op(rng, {&x}, [&](auto& v) { return ag::relu(v[0]); });
    CHECK(err < 1e-6);
  }
  {
    Tensor<double> x = random_tensor(rng, 1, 1, 4, 4, -2.0, 2.0);
    double err = check_op(rng, {&x},
                          [&](auto& v) { return ag::sigmoid(v[0]); });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> e = random_tensor(rng, 2, 2, 3, 3);
    Tensor<double> m = random_tensor(rng, 2, 1, 3, 3, 0.1, 0.9);
    double err = check_op(rng, {&e, &m}, [&](auto& v) {
      return ag::broadcast_mul_channel(v[0], v[1]);
    });
    CHECK(err < 1e-7);
  }
  {
    Tensor<double> a = random_tensor(rng, 1, 1, 3, 3);
    Tensor<double> b = random_tensor(rng, 1, 1, 3, 3);
    double err = check_op(rng, {&a, &b}, [&](auto& v) {
      return ag::add_scaled(v[0], v[1], 0.37);
    });
    CHECK(err < 1e-8);
  }
}

TEST_CASE("gradients accumulate across shared subexpressions") {
  // y = x + x should give dy/dx = 2
  Tensor<double> x(1, 1, 2, 2);
  x.v = {1.0, 2.0, 3.0, 4.0};
  auto leaf = ag::leaf(x, true);
  auto y = ag::add(leaf, leaf);
  Tensor<double> w(1, 1, 2, 2, 1.0);
  auto root = weighted_sum(y, w);
  ag::backward(root);
  for (double g : leaf->grad.v) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("no-grad mode records no graph") {
  Tensor<double> x(1, 1, 2, 2, 1.0);
  auto leaf = ag::leaf(x, true);
  ag::NoGradGuard ng;
  auto y = ag::sigmoid(leaf);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}
