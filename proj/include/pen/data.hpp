#pragma once

// Dataset loading, synthetic corpus generation, paired augmentation and
// k-fold splitting. Directory layout (fixed):
//   root/images/{id}.png|tif   RGB image
//   root/masks/{id}.png        16-bit instance mask, 0 = background
//   root/points/{id}.csv       optional "row,col" point annotations

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pen/annotation.hpp"
#include "pen/rng.hpp"
#include "pen/tensor.hpp"

#include "json.hpp"

namespace pen::data {

// Planar CHW float image in [0,1], 3 channels.
struct Image {
  int height = 0, width = 0;
  std::vector<float> chw;

  Image() = default;
  Image(int h, int w) : height(h), width(w), chw(3ull * h * w, 0.f) {}
  float& at(int c, int r, int col) {
    return chw[(static_cast<size_t>(c) * height + r) * width + col];
  }
  float at(int c, int r, int col) const {
    return chw[(static_cast<size_t>(c) * height + r) * width + col];
  }
  float* plane(int c) {
    return chw.data() + static_cast<size_t>(c) * height * width;
  }
  const float* plane(int c) const {
    return chw.data() + static_cast<size_t>(c) * height * width;
  }
};

struct Sample {
  std::string id;
  Image image;
  std::optional<annotation::InstanceMask> instance_mask;  // evaluation only
  annotation::PointSet points;
  LabelMap labels;
};

enum class Layout { Generic, MoNuSeg, Tnbc };
Layout layout_from_string(const std::string& s);
std::string to_string(Layout l);

struct DatasetOptions {
  Layout layout = Layout::Generic;
  int positive_radius = 0;
};

std::vector<Sample> load_dataset(const std::filesystem::path& root,
                                 const DatasetOptions& opts = {});

// ---- synthetic corpus ----

struct SynthConfig {
  int n_images = 0;
  int height = 0, width = 0;
  int nuclei_min = 0, nuclei_max = 0;
  uint64_t seed = 0;
};

// Deterministic under seed: textured background with stain-like color
// variation and diffuse dark distractors, plus crisp-edged textured ellipses
// as nuclei with exact instance masks.
std::vector<Sample> synth_generate(const SynthConfig& cfg);

void write_corpus(const std::filesystem::path& root,
                  const std::vector<Sample>& samples);

// ---- augmentation ----

struct AugmentationConfig {
  double hflip_prob = 0.0;
  double vflip_prob = 0.0;
  double rotation_degrees_min = 0.0;  // exact quarter-turns when the drawn
  double rotation_degrees_max = 0.0;  // angle is a multiple of 90
  double affine_scale_min = 1.0;
  double affine_scale_max = 1.0;
  double affine_shear_degrees = 0.0;
  double affine_translate_frac = 0.0;
  double elastic_alpha = 0.0;  // displacement in pixels at 256x256, scaled
  double elastic_sigma = 4.0;  // smoothing in pixels at 256x256, scaled
  double color_brightness = 0.0;
  double color_contrast = 0.0;
  double color_saturation = 0.0;
  double color_hue = 0.0;
  double blur_sigma_min = 0.0;
  double blur_sigma_max = 0.0;
  double noise_sigma = 0.0;

  void validate() const;
  bool any_geometric() const;
};

void to_json(nlohmann::json& j, const AugmentationConfig& c);
void from_json(const nlohmann::json& j, AugmentationConfig& c);

// A fully resolved geometric transform (all randomness already drawn), applied
// identically to image, masks, labels and point coordinates.
struct GeoTransform {
  int height = 0, width = 0;
  bool hflip = false, vflip = false;
  int quarter_turns = 0;  // exact index permutation; square images only
  bool has_affine = false;
  double fwd[6] = {1, 0, 0, 0, 1, 0};  // row-major 2x3, about image center
  double inv[6] = {1, 0, 0, 0, 1, 0};
  bool has_elastic = false;
  Grid<float> disp_r, disp_c;  // sampling displacement on the output grid
};

GeoTransform resolve_geo(const AugmentationConfig& cfg, Rng& rng, int height,
                         int width);

Image warp_image(const Image& img, const GeoTransform& gt);
Grid<int32_t> warp_mask(const Grid<int32_t>& mask, const GeoTransform& gt);
LabelMap warp_labels(const LabelMap& labels, const GeoTransform& gt);
// Returns transformed in-bounds points; out-of-bounds points are dropped.
annotation::PointSet transform_points(const annotation::PointSet& pts,
                                      const GeoTransform& gt);

// Photometric ops touch the image only; geometric ops are applied identically
// to image (bilinear), instance mask and labels (nearest) and points (exact
// transform then rounding). Pure function of (sample, cfg, draw_seed).
Sample augment(const Sample& sample, const AugmentationConfig& cfg,
               uint64_t draw_seed);

// ---- folds ----

struct FoldSplit {
  int k = 0;
  int fold_index = 0;
  std::vector<std::string> train_ids, val_ids, test_ids;
};

// Shuffles once by seed, partitions into k near-equal folds; test gets
// `fold_index`, val the next fold, train the remaining k-2.
FoldSplit kfold_split(const std::vector<std::string>& ids, int k,
                      int fold_index, uint64_t seed);

// ---- image helpers shared with eval/trainer ----

Image gaussian_blur(const Image& img, double sigma);

}  // namespace pen::data
