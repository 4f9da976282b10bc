#include "pen/model.hpp"

#include <stdexcept>

#include "pen/common.hpp"
#include "pen/rng.hpp"

namespace pen::model {

std::string to_string(Role r) {
  switch (r) {
    case Role::Segmentation: return "segmentation";
    case Role::Edge: return "edge";
    case Role::Attention: return "attention";
  }
  return "?";
}
std::string to_string(Family f) {
  return f == Family::ConvStack ? "conv_stack" : "pyramid";
}
std::string to_string(Preset p) { return p == Preset::Paper ? "paper" : "tiny"; }

Role role_from_string(const std::string& s) {
  if (s == "segmentation") return Role::Segmentation;
  if (s == "edge") return Role::Edge;
  if (s == "attention") return Role::Attention;
  throw InputError("unknown network role: " + s);
}
Family family_from_string(const std::string& s) {
  if (s == "conv_stack") return Family::ConvStack;
  if (s == "pyramid") return Family::Pyramid;
  throw InputError("unknown network family: " + s);
}
Preset preset_from_string(const std::string& s) {
  if (s == "paper") return Preset::Paper;
  if (s == "tiny") return Preset::Tiny;
  throw InputError("unknown network preset: " + s);
}

void NetworkSpec::validate() const {
  if (family == Family::ConvStack) {
    if (role != Role::Edge)
      throw InputError("conv_stack family is only valid for the edge role");
    if (depth != 2 && depth != 4 && depth != 6 && depth != 8)
      throw InputError("conv_stack depth must be one of 2/4/6/8");
  } else {
    if (depth != 18 && depth != 34 && depth != 50)
      throw InputError("pyramid depth label must be one of 18/34/50");
  }
  if (base_channels < 1) throw InputError("base_channels must be >= 1");
}

void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{{"family", to_string(s.family)},
                     {"depth", s.depth},
                     {"base_channels", s.base_channels},
                     {"preset", to_string(s.preset)}};
}

void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.family = family_from_string(j.at("family").get<std::string>());
  s.depth = j.at("depth").get<int>();
  s.base_channels = j.at("base_channels").get<int>();
  s.preset = preset_from_string(j.at("preset").get<std::string>());
}

namespace {

using nn::Val;

int out_channels_for(Role role) { return role == Role::Edge ? 2 : 1; }
bool sigmoid_head_for(Role role) { return role != Role::Edge; }

// Plain stack of 3x3 convolutions: conv+BN+ReLU blocks at a fixed hidden
// width, then a linear output convolution. Conv layers keep their biases so
// the parameter layout matches the documented counts.
struct ConvStackNet : NetImpl {
  struct Block {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
  };
  std::vector<Block> blocks;
  nn::Conv2d out_conv;

  ConvStackNet(const NetworkSpec& spec, int out_ch, uint64_t seed) {
    Rng rng(seed);
    int cin = 3;
    for (int i = 0; i + 1 < spec.depth; ++i) {
      Block b;
      std::string name = "layer" + std::to_string(i);
      b.conv = nn::Conv2d(params, name, cin, spec.base_channels, 3, 1, rng);
      b.bn = nn::BatchNorm2d(params, name, spec.base_channels);
      blocks.push_back(std::move(b));
      cin = spec.base_channels;
    }
    out_conv = nn::Conv2d(params, "out", cin, out_ch, 3, 1, rng);
    downsample = 1;
  }

  Val raw_forward(Val x, bool training) override {
    for (const auto& b : blocks)
      x = ag::relu(b.bn.forward(b.conv.forward(x), training));
    return out_conv.forward(x);
  }
};

// Three-level encoder-decoder with lateral sum fusion. Desk-scale stand-in
// for the full pyramid: downsample factor 4, widths B/2B/4B, decoder width B.
struct TinyPyramidNet : NetImpl {
  nn::ConvBnRelu enc0, enc1, enc2;
  nn::Conv2d lat0, lat1, lat2;
  nn::ConvBnRelu smooth, head;
  nn::Conv2d out_conv;
  bool sigmoid_head;

  TinyPyramidNet(int base, int out_ch, bool sigmoid, uint64_t seed)
      : sigmoid_head(sigmoid) {
    Rng rng(seed);
    enc0 = nn::ConvBnRelu(params, "enc0", 3, base, 3, 1, rng);
    enc1 = nn::ConvBnRelu(params, "enc1", base, 2 * base, 3, 2, rng);
    enc2 = nn::ConvBnRelu(params, "enc2", 2 * base, 4 * base, 3, 2, rng);
    lat0 = nn::Conv2d(params, "lat0", base, base, 1, 1, rng);
    lat1 = nn::Conv2d(params, "lat1", 2 * base, base, 1, 1, rng);
    lat2 = nn::Conv2d(params, "lat2", 4 * base, base, 1, 1, rng);
    smooth = nn::ConvBnRelu(params, "smooth", base, base, 3, 1, rng);
    head = nn::ConvBnRelu(params, "head", base, base, 3, 1, rng);
    out_conv = nn::Conv2d(params, "out", base, out_ch, 1, 1, rng);
    downsample = 4;
  }

  Val raw_forward(Val x, bool training) override {
    Val e0 = enc0.forward(x, training);
    Val e1 = enc1.forward(e0, training);
    Val e2 = enc2.forward(e1, training);
    Val p2 = lat2.forward(e2);
    Val p1 = ag::add(lat1.forward(e1),
                     ag::resize_bilinear(p2, e1->value.h, e1->value.w));
    Val p0 = ag::add(lat0.forward(e0),
                     ag::resize_bilinear(p1, e0->value.h, e0->value.w));
    Val s = smooth.forward(p0, training);
    Val h = head.forward(s, training);
    Val out = out_conv.forward(h);
    return sigmoid_head ? ag::sigmoid(out) : out;
  }
};

// Residual encoder (18/34 basic blocks, 50 bottleneck) with a pyramid
// decoder: 1x1 laterals onto a fixed decoder width, top-down sum, per-level
// smoothing, then all levels fused at 1/4 scale and upsampled to full
// resolution.
struct ResNetFpnNet : NetImpl {
  struct BasicBlock {
    nn::ConvBnRelu conv1;
    nn::Conv2d conv2;
    nn::BatchNorm2d bn2;
    nn::Conv2d down_conv;  // optional projection
    nn::BatchNorm2d down_bn;
    bool has_down = false;

    BasicBlock() = default;
    BasicBlock(nn::ParamSet& ps, const std::string& name, int cin, int cout,
               int stride, Rng& rng) {
      conv1 = nn::ConvBnRelu(ps, name + ".c1", cin, cout, 3, stride, rng);
      conv2 = nn::Conv2d(ps, name + ".c2", cout, cout, 3, 1, rng, false);
      bn2 = nn::BatchNorm2d(ps, name + ".b2", cout);
      if (stride != 1 || cin != cout) {
        has_down = true;
        down_conv = nn::Conv2d(ps, name + ".down", cin, cout, 1, stride, rng,
                               false);
        down_bn = nn::BatchNorm2d(ps, name + ".downbn", cout);
      }
    }
    Val forward(Val x, bool training) const {
      Val y = bn2.forward(conv2.forward(conv1.forward(x, training)), training);
      Val skip = has_down
                     ? down_bn.forward(down_conv.forward(x), training)
                     : x;
      return ag::relu(ag::add(y, skip));
    }
  };

  struct Bottleneck {
    nn::ConvBnRelu conv1, conv2;
    nn::Conv2d conv3;
    nn::BatchNorm2d bn3;
    nn::Conv2d down_conv;
    nn::BatchNorm2d down_bn;
    bool has_down = false;

    Bottleneck() = default;
    Bottleneck(nn::ParamSet& ps, const std::string& name, int cin, int mid,
               int cout, int stride, Rng& rng) {
      conv1 = nn::ConvBnRelu(ps, name + ".c1", cin, mid, 1, 1, rng);
      conv2 = nn::ConvBnRelu(ps, name + ".c2", mid, mid, 3, stride, rng);
      conv3 = nn::Conv2d(ps, name + ".c3", mid, cout, 1, 1, rng, false);
      bn3 = nn::BatchNorm2d(ps, name + ".b3", cout);
      if (stride != 1 || cin != cout) {
        has_down = true;
        down_conv = nn::Conv2d(ps, name + ".down", cin, cout, 1, stride, rng,
                               false);
        down_bn = nn::BatchNorm2d(ps, name + ".downbn", cout);
      }
    }
    Val forward(Val x, bool training) const {
      Val y = conv2.forward(conv1.forward(x, training), training);
      y = bn3.forward(conv3.forward(y), training);
      Val skip = has_down
                     ? down_bn.forward(down_conv.forward(x), training)
                     : x;
      return ag::relu(ag::add(y, skip));
    }
  };

  nn::ConvBnRelu stem;
  std::vector<std::vector<BasicBlock>> basic_stages;
  std::vector<std::vector<Bottleneck>> bottleneck_stages;
  bool use_bottleneck = false;
  std::vector<nn::Conv2d> laterals;
  std::vector<nn::ConvBnRelu> smooths;
  nn::ConvBnRelu merge;
  nn::Conv2d out_conv;
  bool sigmoid_head;
  static constexpr int kDecoderWidth = 128;

  ResNetFpnNet(int label, int base, int out_ch, bool sigmoid, uint64_t seed)
      : sigmoid_head(sigmoid) {
    Rng rng(seed);
    std::vector<int> block_counts;
    if (label == 18) block_counts = {2, 2, 2, 2};
    else if (label == 34) block_counts = {3, 4, 6, 3};
    else block_counts = {3, 4, 6, 3};
    use_bottleneck = (label == 50);

    stem = nn::ConvBnRelu(params, "stem", 3, base, 7, 2, rng);
    std::vector<int> stage_out;
    int cin = base;
    for (int s = 0; s < 4; ++s) {
      int width = base << s;
      int cout = use_bottleneck ? width * 4 : width;
      stage_out.push_back(cout);
      int stride = s == 0 ? 1 : 2;
      std::string sname = "stage" + std::to_string(s);
      if (use_bottleneck) {
        std::vector<Bottleneck> blocks;
        for (int b = 0; b < block_counts[s]; ++b) {
          blocks.emplace_back(params, sname + ".b" + std::to_string(b), cin,
                              width, cout, b == 0 ? stride : 1, rng);
          cin = cout;
        }
        bottleneck_stages.push_back(std::move(blocks));
      } else {
        std::vector<BasicBlock> blocks;
        for (int b = 0; b < block_counts[s]; ++b) {
          blocks.emplace_back(params, sname + ".b" + std::to_string(b), cin,
                              cout, b == 0 ? stride : 1, rng);
          cin = cout;
        }
        basic_stages.push_back(std::move(blocks));
      }
    }
    for (int s = 0; s < 4; ++s) {
      laterals.emplace_back(params, "lat" + std::to_string(s), stage_out[s],
                            kDecoderWidth, 1, 1, rng);
      smooths.emplace_back(params, "smooth" + std::to_string(s), kDecoderWidth,
                           kDecoderWidth, 3, 1, rng);
    }
    merge = nn::ConvBnRelu(params, "merge", kDecoderWidth, kDecoderWidth, 3, 1,
                           rng);
    out_conv = nn::Conv2d(params, "out", kDecoderWidth, out_ch, 1, 1, rng);
    downsample = 32;
  }

  Val raw_forward(Val x, bool training) override {
    const int in_h = x->value.h, in_w = x->value.w;
    Val y = ag::maxpool3x3s2(stem.forward(x, training));
    std::vector<Val> feats;
    for (int s = 0; s < 4; ++s) {
      if (use_bottleneck) {
        for (const auto& b : bottleneck_stages[s]) y = b.forward(y, training);
      } else {
        for (const auto& b : basic_stages[s]) y = b.forward(y, training);
      }
      feats.push_back(y);
    }
    Val top = laterals[3].forward(feats[3]);
    std::vector<Val> pyramid(4);
    pyramid[3] = top;
    for (int s = 2; s >= 0; --s) {
      Val up = ag::resize_bilinear(pyramid[s + 1], feats[s]->value.h,
                                   feats[s]->value.w);
      pyramid[s] = ag::add(laterals[s].forward(feats[s]), up);
    }
    Val fused;
    for (int s = 0; s < 4; ++s) {
      Val p = smooths[s].forward(pyramid[s], training);
      p = ag::resize_bilinear(p, feats[0]->value.h, feats[0]->value.w);
      fused = fused ? ag::add(fused, p) : p;
    }
    Val m = merge.forward(fused, training);
    Val out = ag::resize_bilinear(out_conv.forward(m), in_h, in_w);
    return sigmoid_head ? ag::sigmoid(out) : out;
  }
};

std::shared_ptr<NetImpl> make_impl(const NetworkSpec& spec, uint64_t seed) {
  spec.validate();
  const int out_ch = out_channels_for(spec.role);
  const bool sig = sigmoid_head_for(spec.role);
  if (spec.family == Family::ConvStack)
    return std::make_shared<ConvStackNet>(spec, out_ch, seed);
  if (spec.preset == Preset::Tiny)
    return std::make_shared<TinyPyramidNet>(spec.base_channels, out_ch, sig,
                                            seed);
  return std::make_shared<ResNetFpnNet>(spec.depth, spec.base_channels, out_ch,
                                        sig, seed);
}

}  // namespace

nn::Val Network::forward(nn::Val x, bool training) const {
  const int h = x->value.h, w = x->value.w;
  const int d = impl->downsample;
  const int ph = (d - h % d) % d, pw = (d - w % d) % d;
  nn::Val padded = ag::pad_replicate(x, 0, 0, ph, pw);
  nn::Val out = impl->raw_forward(padded, training);
  return ag::crop(out, 0, 0, h, w);
}

Tensor<float> Network::forward_plain(const Tensor<float>& x,
                                     bool training) const {
  ag::NoGradGuard ng;
  return forward(ag::constant(x), training)->value;
}

Network build_segmentation_network(const NetworkSpec& spec, uint64_t seed) {
  if (spec.role != Role::Segmentation)
    throw InputError("build_segmentation_network: wrong role");
  if (spec.family != Family::Pyramid)
    throw InputError("segmentation network must use the pyramid family");
  return Network{spec, make_impl(spec, seed)};
}

Network build_edge_network(const NetworkSpec& spec, uint64_t seed) {
  if (spec.role != Role::Edge) throw InputError("build_edge_network: wrong role");
  return Network{spec, make_impl(spec, seed)};
}

Network build_attention_network(const NetworkSpec& spec, uint64_t seed) {
  if (spec.role != Role::Attention)
    throw InputError("build_attention_network: wrong role");
  if (spec.family != Family::Pyramid)
    throw InputError("attention network must use the pyramid family");
  return Network{spec, make_impl(spec, seed)};
}

Network build_network(const NetworkSpec& spec, uint64_t seed) {
  switch (spec.role) {
    case Role::Segmentation: return build_segmentation_network(spec, seed);
    case Role::Edge: return build_edge_network(spec, seed);
    case Role::Attention: return build_attention_network(spec, seed);
  }
  throw InputError("build_network: bad role");
}

std::vector<NetworkSpec> capacity_ladder() {
  std::vector<NetworkSpec> specs;
  for (int depth : {2, 4, 6, 8})
    specs.push_back({Role::Edge, Family::ConvStack, depth, 64, Preset::Paper});
  for (int label : {18, 34, 50})
    specs.push_back({Role::Edge, Family::Pyramid, label, 64, Preset::Paper});
  return specs;
}

NetworkSpec default_spec(Role role, Preset preset) {
  NetworkSpec s;
  s.role = role;
  s.preset = preset;
  if (role == Role::Edge) {
    s.family = Family::ConvStack;
    s.depth = 4;
    s.base_channels = preset == Preset::Paper ? 64 : 16;
  } else {
    s.family = Family::Pyramid;
    s.depth = (role == Role::Segmentation && preset == Preset::Paper) ? 50 : 18;
    s.base_channels = preset == Preset::Paper ? 64 : 16;
  }
  return s;
}

}  // namespace pen::model
