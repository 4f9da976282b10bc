#pragma once

// Joint optimization of the segmentation network (optionally with the edge
// network and its attention module), plateau learning-rate scheduling and
// validation-based model selection.

#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pen/data.hpp"
#include "pen/loss.hpp"
#include "pen/model.hpp"

#include "json.hpp"

namespace pen::trainer {

enum class Method { BaselineCe, PseudoEdge, PseudoEdgeAttention };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SchedulerConfig {
  double factor = 0.5;
  int patience = 5;
};

// Halves the learning rate whenever the monitored quantity fails to improve
// on its running best for `patience` consecutive observations.
struct PlateauScheduler {
  double lr;
  double factor;
  int patience;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  PlateauScheduler(double lr0, const SchedulerConfig& cfg)
      : lr(lr0), factor(cfg.factor), patience(cfg.patience) {}

  void observe(double value) {
    if (value < best) {
      best = value;
      bad_epochs = 0;
      return;
    }
    if (++bad_epochs >= patience) {
      lr *= factor;
      bad_epochs = 0;
    }
  }
};

struct TrainConfig {
  Method method = Method::PseudoEdgeAttention;
  model::NetworkSpec f = model::default_spec(model::Role::Segmentation,
                                             model::Preset::Tiny);
  model::NetworkSpec g =
      model::default_spec(model::Role::Edge, model::Preset::Tiny);
  model::NetworkSpec h =
      model::default_spec(model::Role::Attention, model::Preset::Tiny);
  loss::LossConfig loss;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  int epochs = 30;
  int batch_size = 16;
  int patch_size = 64;
  double threshold = 0.5;
  uint64_t seed = 1;
  data::AugmentationConfig augmentation;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double ce = 0, edge = 0, total = 0;
  double val_iou = 0;
  double lr = 0;  // rate in effect during this epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // argmax val IoU, ties -> earliest
  double best_val_iou = 0;
};

nlohmann::json history_to_json(const TrainHistory& h);
TrainHistory history_from_json(const nlohmann::json& j);

struct Normalization {
  float mean[3] = {0, 0, 0};
  float std[3] = {1, 1, 1};
};

// Parameter archive: tensors keyed by "role/param" names plus the spec of
// each stored network, the training-split normalization and the config hash.
struct Checkpoint {
  std::string config_hash;
  double threshold = 0.5;
  Normalization norm;
  std::map<std::string, model::NetworkSpec> specs;
  std::map<std::string, Tensor<float>> tensors;

  bool has_network(const std::string& key) const { return specs.count(key) > 0; }
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds a stored network and copies its tensors back in.
model::Network instantiate_network(const Checkpoint& c, const std::string& key);

struct TrainResult {
  Checkpoint checkpoint;                 // segmentation network only
  std::optional<Checkpoint> sidecar;     // edge/attention, figure rendering
  TrainHistory history;
};

TrainResult train(const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set,
                  const TrainConfig& cfg, const std::string& config_hash = "");

// Deterministic eval-mode forward of a live segmentation network.
Grid<float> predict_with(const model::Network& f, const Normalization& norm,
                         const data::Image& img);

// Deterministic eval-mode forward pass from a checkpoint.
Grid<float> predict(const Checkpoint& ckpt, const data::Image& img);

Normalization compute_normalization(const std::vector<data::Sample>& samples);

}  // namespace pen::trainer
