#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "pen/loss.hpp"
#include "pen/rng.hpp"
#include "testutil.hpp"

using namespace pen;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

Tensor<uint8_t> label_tensor(std::initializer_list<Label> labels, int h,
                             int w) {
  Tensor<uint8_t> t(1, 1, h, w);
  size_t i = 0;
  for (Label l : labels) t.v[i++] = static_cast<uint8_t>(l);
  return t;
}

// Random labels with a guaranteed labeled pixel.
Tensor<uint8_t> random_labels(Rng& rng, int n, int h, int w) {
  Tensor<uint8_t> t(n, 1, h, w);
  for (auto& v : t.v) {
    double u = rng.uniform();
    v = static_cast<uint8_t>(u < 0.1 ? Label::Positive
                                     : (u < 0.3 ? Label::Negative
                                                : Label::Ignore));
  }
  t.v[0] = static_cast<uint8_t>(Label::Positive);
  return t;
}

// Inputs constructed away from the |.| and clamp kinks so central differences
// are valid: gated edge differs from sobel(seg) by at least 0.05 everywhere.
struct GradCheckInputs {
  Tensor<double> seg, edge, att;
};

GradCheckInputs make_gradcheck_inputs(Rng& rng, bool with_attention) {
  GradCheckInputs in;
  in.seg = random_tensor(rng, 1, 1, 8, 8, 0.05, 0.95);
  in.att = random_tensor(rng, 1, 1, 8, 8, 0.25, 0.9);
  Tensor<double> target = kern::sobel_forward(in.seg);
  in.edge = Tensor<double>(1, 2, 8, 8);
  for (size_t i = 0; i < in.edge.v.size(); ++i) {
    double offset = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 0.5);
    double gated_target = target.v[i] + offset;
    size_t pix = i % (8 * 8);
    in.edge.v[i] =
        with_attention ? gated_target / in.att.v[pix] : gated_target;
  }
  return in;
}

}  // namespace

TEST_CASE("weighted partial CE unit values") {
  loss::LossConfig cfg;
  {
    // perfect prediction -> ~0 after clamping
    Tensor<double> pred(1, 1, 1, 2);
    pred.v = {1.0, 0.0};
    auto labels = label_tensor({Label::Positive, Label::Negative}, 1, 2);
    CHECK(loss::weighted_partial_ce(pred, labels, cfg) <= 1e-6);
  }
  {
    Tensor<double> pred(1, 1, 1, 1, 0.5);
    auto labels = label_tensor({Label::Positive}, 1, 1);
    CHECK(loss::weighted_partial_ce(pred, labels, cfg) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  {
    Tensor<double> pred(1, 1, 1, 1, 0.5);
    auto labels = label_tensor({Label::Negative}, 1, 1);
    CHECK(loss::weighted_partial_ce(pred, labels, cfg) ==
          doctest::Approx(0.1 * std::log(2.0)).epsilon(1e-9));
  }
  {
    Tensor<double> pred(1, 1, 1, 2, 0.5);
    auto labels = label_tensor({Label::Positive, Label::Negative}, 1, 2);
    CHECK(loss::weighted_partial_ce(pred, labels, cfg) ==
          doctest::Approx(1.1 * std::log(2.0) / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("all-ignore labels are an error") {
  loss::LossConfig cfg;
  Tensor<double> pred(1, 1, 2, 2, 0.5);
  auto labels = label_tensor(
      {Label::Ignore, Label::Ignore, Label::Ignore, Label::Ignore}, 2, 2);
  CHECK_THROWS_WITH_AS(loss::weighted_partial_ce(pred, labels, cfg),
                       doctest::Contains("no supervision"),
                       std::invalid_argument);
}

TEST_CASE("ignore pixels contribute exactly nothing") {
  Rng rng(41);
  loss::LossConfig cfg;
  Tensor<double> pred = random_tensor(rng, 1, 1, 6, 6, 0.01, 0.99);
  Tensor<uint8_t> labels = random_labels(rng, 1, 6, 6);
  double before = loss::weighted_partial_ce(pred, labels, cfg);
  for (size_t i = 0; i < labels.v.size(); ++i)
    if (labels.v[i] == static_cast<uint8_t>(Label::Ignore))
      pred.v[i] = rng.uniform(0.01, 0.99);
  double after = loss::weighted_partial_ce(pred, labels, cfg);
  CHECK(before == after);
}

TEST_CASE("edge consistency examples") {
  {
    Rng rng(42);
    Tensor<double> seg = random_tensor(rng, 1, 1, 6, 6, 0.0, 1.0);
    Tensor<double> edge = kern::sobel_forward(seg);
    CHECK(loss::edge_consistency(seg, edge) == 0.0);
  }
  {
    Tensor<double> seg(1, 1, 5, 5, 0.7);
    Tensor<double> edge(1, 2, 5, 5, 0.0);
    CHECK(loss::edge_consistency(seg, edge) == 0.0);
  }
  {
    // reduction check on a given edge field: x-channel [[0,4],[0,4]], y zero,
    // target all-zero -> per-pixel channel-summed L1 averaged over 4 px = 2.0
    Tensor<double> s(1, 2, 2, 2, 0.0);
    s.at(0, 0, 0, 1) = 4.0;
    s.at(0, 0, 1, 1) = 4.0;
    Tensor<double> zeros(1, 2, 2, 2, 0.0);
    ag::NoGradGuard ng;
    auto node = loss::l1_pixel_mean_node(ag::constant(s), ag::constant(zeros));
    CHECK(node->value.v[0] == doctest::Approx(2.0));
  }
  {
    // full step on a 2x2 grid: replicate padding makes every pixel see the
    // step, so sobel x is 4 everywhere and the mean against zero is 4.0
    Tensor<double> seg(1, 1, 2, 2);
    seg.at(0, 0, 0, 0) = 0.0;
    seg.at(0, 0, 0, 1) = 1.0;
    seg.at(0, 0, 1, 0) = 0.0;
    seg.at(0, 0, 1, 1) = 1.0;
    Tensor<double> edge(1, 2, 2, 2, 0.0);
    CHECK(loss::edge_consistency(seg, edge) == doctest::Approx(4.0));
  }
}

TEST_CASE("edge consistency zero iff gated edge equals sobel") {
  Rng rng(43);
  Tensor<double> seg = random_tensor(rng, 1, 1, 8, 8, 0.0, 1.0);
  Tensor<double> att = random_tensor(rng, 1, 1, 8, 8, 0.5, 1.0);
  Tensor<double> target = kern::sobel_forward(seg);
  Tensor<double> edge(1, 2, 8, 8);
  for (size_t i = 0; i < edge.v.size(); ++i)
    edge.v[i] = target.v[i] / att.v[i % (8 * 8)];
  CHECK(loss::edge_consistency(seg, edge, &att) < 1e-9);
  edge.v[5] += 1.0;
  CHECK(loss::edge_consistency(seg, edge, &att) > 1e-3);
}

TEST_CASE("total loss composition and lambda linearity") {
  Rng rng(44);
  Tensor<double> seg = random_tensor(rng, 1, 1, 8, 8, 0.05, 0.95);
  Tensor<double> edge = random_tensor(rng, 1, 2, 8, 8);
  Tensor<uint8_t> labels = random_labels(rng, 1, 8, 8);

  auto eval_total = [&](double lambda) {
    loss::LossConfig cfg;
    cfg.lambda = lambda;
    loss::LossBreakdown bd;
    ag::NoGradGuard ng;
    loss::total_loss(ag::constant(seg), ag::constant(edge),
                     ag::Value<double>{}, labels, cfg, &bd);
    return bd;
  };

  loss::LossBreakdown b0 = eval_total(0.0);
  loss::LossBreakdown b1 = eval_total(1.0);
  loss::LossBreakdown b2 = eval_total(2.5);
  CHECK(b0.total == b0.ce);
  CHECK(b1.total == b1.ce + b1.edge);
  CHECK(b0.ce == b1.ce);
  CHECK(b0.edge == b1.edge);
  CHECK(b2.total - b1.total == doctest::Approx(1.5 * b1.edge).epsilon(1e-12));
  CHECK(b1.ce >= 0.0);
  CHECK(b1.edge >= 0.0);
}

TEST_CASE("worked total: ce 0.3812 plus edge 2.0") {
  // ce from the half-probability positive+negative pair, edge term from the
  // stated field; lambda 1 -> total 2.3812
  loss::LossConfig cfg;
  Tensor<double> pred(1, 1, 1, 2, 0.5);
  auto labels = label_tensor({Label::Positive, Label::Negative}, 1, 2);
  double ce = loss::weighted_partial_ce(pred, labels, cfg);
  Tensor<double> s(1, 2, 2, 2, 0.0);
  s.at(0, 0, 0, 1) = 4.0;
  s.at(0, 0, 1, 1) = 4.0;
  Tensor<double> zeros(1, 2, 2, 2, 0.0);
  ag::NoGradGuard ng;
  double et = loss::l1_pixel_mean_node(ag::constant(s), ag::constant(zeros))
                  ->value.v[0];
  CHECK(ce == doctest::Approx(0.38123).epsilon(1e-3));
  CHECK(et == doctest::Approx(2.0));
  CHECK(ce + 1.0 * et == doctest::Approx(2.38123).epsilon(1e-3));
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(45);
  for (int trial = 0; trial < 8; ++trial) {
    const bool with_attention = trial % 2 == 1;
    GradCheckInputs in = make_gradcheck_inputs(rng, with_attention);
    Tensor<uint8_t> labels = random_labels(rng, 1, 8, 8);
    loss::LossConfig cfg;
    cfg.lambda = trial % 3 == 0 ? 1.0 : 0.7;
    cfg.use_attention = with_attention;

    auto seg_leaf = ag::leaf(in.seg, true);
    auto edge_leaf = ag::leaf(in.edge, true);
    auto att_leaf = with_attention ? ag::leaf(in.att, true)
                                   : ag::Value<double>{};
    loss::LossBreakdown bd;
    auto total =
        loss::total_loss(seg_leaf, edge_leaf, att_leaf, labels, cfg, &bd);
    ag::backward(total);

    auto eval = [&]() {
      ag::NoGradGuard ng;
      loss::LossBreakdown b;
      loss::total_loss(ag::constant(in.seg), ag::constant(in.edge),
                       with_attention ? ag::constant(in.att)
                                      : ag::Value<double>{},
                       labels, cfg, &b);
      return b.total;
    };

    CHECK(max_rel_error(in.seg, seg_leaf->grad, eval, 1e-4) < 1e-4);
    CHECK(max_rel_error(in.edge, edge_leaf->grad, eval, 1e-4) < 1e-4);
    if (with_attention)
      CHECK(max_rel_error(in.att, att_leaf->grad, eval, 1e-4) < 1e-4);
  }
}

TEST_CASE("lambda zero contributes no gradient to any network output") {
  Rng rng(46);
  GradCheckInputs in = make_gradcheck_inputs(rng, true);
  Tensor<uint8_t> labels = random_labels(rng, 1, 8, 8);
  loss::LossConfig cfg;
  cfg.lambda = 0.0;
  cfg.use_attention = true;

  auto seg_leaf = ag::leaf(in.seg, true);
  auto edge_leaf = ag::leaf(in.edge, true);
  auto att_leaf = ag::leaf(in.att, true);
  loss::LossBreakdown bd;
  auto total = loss::total_loss(seg_leaf, edge_leaf, att_leaf, labels, cfg, &bd);
  ag::backward(total);

  CHECK(bd.edge > 0.0);       // still reported
  CHECK(bd.total == bd.ce);
  CHECK(edge_leaf->grad.empty());
  CHECK(att_leaf->grad.empty());
  // seg still gets the CE gradient
  REQUIRE_FALSE(seg_leaf->grad.empty());
  bool any = false;
  for (double g : seg_leaf->grad.v) any = any || g != 0.0;
  CHECK(any);
}
