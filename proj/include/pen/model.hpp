#pragma once

// Builders for the three networks: segmentation (pyramid encoder-decoder),
// edge (shallow conv stack, or a pyramid for the "large" variant) and
// attention (pyramid with sigmoid head), plus the capacity ladder used by the
// edge-network ablation.

#include <memory>
#include <string>
#include <vector>

#include "pen/nn.hpp"

#include "json.hpp"

namespace pen::model {

enum class Role { Segmentation, Edge, Attention };
enum class Family { ConvStack, Pyramid };
enum class Preset { Paper, Tiny };

std::string to_string(Role r);
std::string to_string(Family f);
std::string to_string(Preset p);
Role role_from_string(const std::string& s);
Family family_from_string(const std::string& s);
Preset preset_from_string(const std::string& s);

struct NetworkSpec {
  Role role = Role::Segmentation;
  Family family = Family::Pyramid;
  // Conv layers for ConvStack; residual stage label (18/34/50) for Pyramid.
  int depth = 18;
  // Hidden width for ConvStack; backbone base width for Pyramid.
  int base_channels = 64;
  Preset preset = Preset::Paper;

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

void to_json(nlohmann::json& j, const NetworkSpec& s);
void from_json(const nlohmann::json& j, NetworkSpec& s);

struct NetImpl {
  nn::ParamSet params;
  int downsample = 1;
  virtual nn::Val raw_forward(nn::Val x, bool training) = 0;
  virtual ~NetImpl() = default;
};

// Trainable image -> map function. Output spatial shape always equals input
// shape; inputs that are not a multiple of the downsample factor are
// replicate-padded internally and cropped back.
struct Network {
  NetworkSpec spec;
  std::shared_ptr<NetImpl> impl;

  nn::Val forward(nn::Val x, bool training) const;
  Tensor<float> forward_plain(const Tensor<float>& x, bool training) const;
  nn::ParamSet& params() const { return impl->params; }
  int64_t parameter_count() const { return impl->params.parameter_count(); }
  int downsample_factor() const { return impl->downsample; }
  explicit operator bool() const { return impl != nullptr; }
};

Network build_segmentation_network(const NetworkSpec& spec, uint64_t seed);
Network build_edge_network(const NetworkSpec& spec, uint64_t seed);
Network build_attention_network(const NetworkSpec& spec, uint64_t seed);
Network build_network(const NetworkSpec& spec, uint64_t seed);

// The seven edge-network specs of the capacity ablation: conv stacks of depth
// 2/4/6/8 and pyramids 18/34/50, all paper preset.
std::vector<NetworkSpec> capacity_ladder();

NetworkSpec default_spec(Role role, Preset preset);

}  // namespace pen::model
