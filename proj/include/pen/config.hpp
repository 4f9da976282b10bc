#pragma once

// Experiment configuration: one JSON document drives every CLI command.
// Unknown keys are rejected; the resolved copy written next to outputs is
// fully explicit (no silent defaults for method-critical fields).

#include <filesystem>
#include <optional>
#include <string>

#include "pen/data.hpp"
#include "pen/trainer.hpp"

#include "json.hpp"

namespace pen::config {

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string output_dir = "results/experiment";
  int threads = 1;  // fold-level workers for crossval/ablate

  std::string dataset_root;  // may be empty for synth-only use
  data::Layout layout = data::Layout::Generic;
  int positive_radius = 0;

  std::optional<data::SynthConfig> synth;

  int k = 3;
  int fold_index = 0;

  trainer::TrainConfig train;
  bool pretrained_backbone = false;

  void validate() const;
};

// Parse + validate. `PSEUDOEDGE_SEED` in the environment overrides the seed.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Fully explicit, key-sorted form. `for_hash` drops execution-context fields
// (output_dir, threads) that do not affect results.
nlohmann::json to_canonical_json(const ExperimentConfig& cfg,
                                 bool for_hash = false);

std::string config_hash(const ExperimentConfig& cfg);

// Canonical copy plus its hash, written next to command outputs.
void write_resolved(const std::filesystem::path& path,
                    const ExperimentConfig& cfg);

}  // namespace pen::config
