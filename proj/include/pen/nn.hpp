#pragma once

// Float layers over the autodiff engine plus the named-parameter registry
// used by the optimizer and the checkpoint writer.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pen/autodiff.hpp"
#include "pen/rng.hpp"
#include "pen/tensor.hpp"

namespace pen::nn {

using Val = ag::Value<float>;

// Owns every trainable tensor and persistent buffer of one network, keyed by
// hierarchical name. Buffers live in a deque so pointers stay stable.
struct ParamSet {
  struct Entry {
    std::string name;
    Val value;
  };
  struct Buffer {
    std::string name;
    Tensor<float>* tensor;
  };
  std::vector<Entry> params;
  std::vector<Buffer> buffers;
  std::deque<Tensor<float>> buffer_storage;

  Val add_param(const std::string& name, Tensor<float> init) {
    Val v = ag::leaf(std::move(init), true);
    params.push_back({name, v});
    return v;
  }
  Tensor<float>* add_buffer(const std::string& name, Tensor<float> init) {
    buffer_storage.push_back(std::move(init));
    Tensor<float>* t = &buffer_storage.back();
    buffers.push_back({name, t});
    return t;
  }
  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& e : params) n += e.value->value.numel();
    return n;
  }
};

// Fan-in scaled normal init for convolution weights, zero biases.
inline Tensor<float> he_init(int cout, int cin, int k, Rng& rng) {
  Tensor<float> w(cout, cin, k, k);
  double std = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
  for (auto& v : w.v) v = static_cast<float>(rng.normal(0.0, std));
  return w;
}

struct Conv2d {
  Val w, b;
  int stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParamSet& ps, const std::string& name, int cin, int cout, int k,
         int stride_, Rng& rng, bool bias = true)
      : stride(stride_), pad(k / 2) {
    w = ps.add_param(name + ".weight", he_init(cout, cin, k, rng));
    if (bias) b = ps.add_param(name + ".bias", Tensor<float>(1, cout, 1, 1));
  }
  Val forward(Val x) const { return ag::conv2d(x, w, b, stride, pad); }
};

struct BatchNorm2d {
  Val gamma, beta;
  Tensor<float>* running_mean = nullptr;
  Tensor<float>* running_var = nullptr;

  BatchNorm2d() = default;
  BatchNorm2d(ParamSet& ps, const std::string& name, int channels) {
    gamma = ps.add_param(name + ".gamma", Tensor<float>(1, channels, 1, 1, 1.f));
    beta = ps.add_param(name + ".beta", Tensor<float>(1, channels, 1, 1));
    running_mean =
        ps.add_buffer(name + ".running_mean", Tensor<float>(1, channels, 1, 1));
    running_var = ps.add_buffer(name + ".running_var",
                                Tensor<float>(1, channels, 1, 1, 1.f));
  }
  Val forward(Val x, bool training) const {
    return ag::batch_norm(x, gamma, beta, running_mean, running_var, training);
  }
};

// conv -> BN -> ReLU
struct ConvBnRelu {
  Conv2d conv;
  BatchNorm2d bn;

  ConvBnRelu() = default;
  ConvBnRelu(ParamSet& ps, const std::string& name, int cin, int cout, int k,
             int stride, Rng& rng)
      : conv(ps, name + ".conv", cin, cout, k, stride, rng, /*bias=*/false),
        bn(ps, name + ".bn", cout) {}
  Val forward(Val x, bool training) const {
    return ag::relu(bn.forward(conv.forward(x), training));
  }
};

}  // namespace pen::nn
