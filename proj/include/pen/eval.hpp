#pragma once

// Thresholding, IoU, cross-validation aggregation and qualitative panel
// rendering. Fold IoU is dataset-level: confusion counts are summed over all
// test images before the ratio is taken (per-image values kept for
// diagnostics).

#include <filesystem>
#include <string>
#include <vector>

#include "pen/data.hpp"
#include "pen/trainer.hpp"

#include "json.hpp"

namespace pen::eval {

// pixel positive iff value > threshold (strict)
Grid<uint8_t> binarize(const Grid<float>& prob, double threshold);

// |a n b| / |a u b|; defined as 1.0 when both masks are empty
double iou(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt);

struct FoldResult {
  int fold_index = 0;
  double iou = 0.0;  // dataset-level, from the counts below
  int64_t tp = 0, fp = 0, fn = 0;
  std::vector<double> per_image_ious;
  std::string checkpoint_path;
};

nlohmann::json fold_to_json(const FoldResult& fr);
FoldResult fold_from_json(const nlohmann::json& j);

FoldResult evaluate_fold(const trainer::Checkpoint& ckpt,
                         const std::vector<data::Sample>& test_samples,
                         double threshold);

struct MethodReport {
  std::string method;
  double mean_iou = 0.0;
  double std_iou = 0.0;  // population std over fold IoUs
  std::vector<FoldResult> folds;
};

struct CrossValOptions {
  std::filesystem::path results_dir;  // empty -> no persistence / no resume
  std::string config_hash;
  int workers = 1;
  bool quiet = false;
};

// Trains and evaluates every fold with deterministic per-fold seeds.
// Completed folds found in results_dir with a matching config hash are
// reused instead of retrained.
MethodReport cross_validate(const std::vector<data::Sample>& corpus, int k,
                            const trainer::TrainConfig& base_cfg,
                            const CrossValOptions& opts = {});

// "0.6136 (±0.04)": mean half-even rounded to 4 decimals, std to 2.
std::string format_report_cell(double mean, double std);

// CSV + aligned text tables, one row per report, stable input order. The
// header logs the aggregation choice and the published full-scale reference
// numbers for context.
void emit_tables(const std::vector<MethodReport>& reports,
                 const std::filesystem::path& csv_path,
                 const std::filesystem::path& txt_path);

struct PanelOptions {
  int tile = 128;
  double threshold = 0.5;
};

// One row per sample: input, attention, raw edge mean, gated edge mean,
// probability, binarized prediction, ground truth. Columns whose network is
// absent from the checkpoints are omitted. Signed edge maps render with zero
// as mid-gray.
void render_panels(const std::vector<data::Sample>& samples,
                   const trainer::Checkpoint& main_ckpt,
                   const trainer::Checkpoint* sidecar,
                   const std::filesystem::path& out_path,
                   const PanelOptions& opts = {});

}  // namespace pen::eval
