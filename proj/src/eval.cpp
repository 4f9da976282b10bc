#include "pen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "pen/common.hpp"
#include "pen/image_io.hpp"
#include "pen/rng.hpp"
#include "pen/tensor_ops.hpp"

namespace pen::eval {

namespace fs = std::filesystem;

Grid<uint8_t> binarize(const Grid<float>& prob, double threshold) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw InputError("binarize: threshold must lie in (0,1)");
  Grid<uint8_t> out(prob.height, prob.width);
  for (size_t i = 0; i < prob.data.size(); ++i)
    out.data[i] = prob.data[i] > threshold ? 1 : 0;
  return out;
}

double iou(const Grid<uint8_t>& pred, const Grid<uint8_t>& gt) {
  if (!pred.same_shape(gt)) throw InputError("iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

nlohmann::json fold_to_json(const FoldResult& fr) {
  return {{"fold_index", fr.fold_index}, {"iou", fr.iou},
          {"tp", fr.tp},                 {"fp", fr.fp},
          {"fn", fr.fn},                 {"per_image_ious", fr.per_image_ious},
          {"checkpoint", fr.checkpoint_path}};
}

FoldResult fold_from_json(const nlohmann::json& j) {
  FoldResult fr;
  fr.fold_index = j.at("fold_index").get<int>();
  fr.iou = j.at("iou").get<double>();
  fr.tp = j.at("tp").get<int64_t>();
  fr.fp = j.at("fp").get<int64_t>();
  fr.fn = j.at("fn").get<int64_t>();
  fr.per_image_ious = j.at("per_image_ious").get<std::vector<double>>();
  fr.checkpoint_path = j.at("checkpoint").get<std::string>();
  return fr;
}

FoldResult evaluate_fold(const trainer::Checkpoint& ckpt,
                         const std::vector<data::Sample>& test_samples,
                         double threshold) {
  model::Network f = trainer::instantiate_network(ckpt, "f");
  FoldResult fr;
  for (const data::Sample& s : test_samples) {
    if (!s.instance_mask)
      throw InputError("evaluate_fold: sample '" + s.id +
                       "' has no ground-truth mask");
    Grid<float> prob = trainer::predict_with(f, ckpt.norm, s.image);
    Grid<uint8_t> pred = binarize(prob, threshold);
    Grid<uint8_t> gt(s.instance_mask->height, s.instance_mask->width);
    for (size_t i = 0; i < gt.data.size(); ++i)
      gt.data[i] = s.instance_mask->data[i] > 0 ? 1 : 0;
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < gt.data.size(); ++i) {
      bool p = pred.data[i] != 0, g = gt.data[i] != 0;
      tp += (p && g) ? 1 : 0;
      fp += (p && !g) ? 1 : 0;
      fn += (!p && g) ? 1 : 0;
    }
    fr.tp += tp;
    fr.fp += fp;
    fr.fn += fn;
    int64_t uni = tp + fp + fn;
    fr.per_image_ious.push_back(
        uni == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(uni));
  }
  int64_t uni = fr.tp + fr.fp + fr.fn;
  fr.iou = uni == 0 ? 1.0 : static_cast<double>(fr.tp) / static_cast<double>(uni);
  return fr;
}

MethodReport cross_validate(const std::vector<data::Sample>& corpus, int k,
                            const trainer::TrainConfig& base_cfg,
                            const CrossValOptions& opts) {
  if (static_cast<int>(corpus.size()) < k)
    throw InputError("cross_validate: corpus smaller than k");

  std::vector<std::string> ids;
  std::map<std::string, const data::Sample*> by_id;
  for (const data::Sample& s : corpus) {
    ids.push_back(s.id);
    by_id[s.id] = &s;
  }

  const fs::path folds_dir = opts.results_dir.empty()
                                 ? fs::path{}
                                 : opts.results_dir / "folds";
  if (!folds_dir.empty()) fs::create_directories(folds_dir);

  std::mutex io_mutex;
  auto run_fold = [&](int fold) -> FoldResult {
    fs::path fold_json =
        folds_dir.empty() ? fs::path{}
                          : folds_dir / (std::to_string(fold) + ".json");
    if (!fold_json.empty() && fs::exists(fold_json)) {
      std::ifstream in(fold_json);
      nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
      if (!j.is_discarded() && j.value("config_hash", "") == opts.config_hash &&
          !opts.config_hash.empty()) {
        return fold_from_json(j);
      }
    }

    data::FoldSplit split = data::kfold_split(ids, k, fold, base_cfg.seed);
    auto gather = [&](const std::vector<std::string>& want) {
      std::vector<data::Sample> out;
      out.reserve(want.size());
      for (const std::string& id : want) out.push_back(*by_id.at(id));
      return out;
    };
    std::vector<data::Sample> train_set = gather(split.train_ids);
    std::vector<data::Sample> val_set = gather(split.val_ids);
    std::vector<data::Sample> test_set = gather(split.test_ids);

    trainer::TrainConfig cfg = base_cfg;
    cfg.seed = derive_seed(base_cfg.seed, "fold", static_cast<uint64_t>(fold));
    trainer::TrainResult tr =
        trainer::train(train_set, val_set, cfg, opts.config_hash);

    FoldResult fr = evaluate_fold(tr.checkpoint, test_set, base_cfg.threshold);
    fr.fold_index = fold;

    if (!folds_dir.empty()) {
      fs::path fold_dir = folds_dir / std::to_string(fold);
      fs::create_directories(fold_dir);
      fs::path ckpt_path = fold_dir / "checkpoint.penck";
      trainer::save_checkpoint(ckpt_path, tr.checkpoint);
      if (tr.sidecar)
        trainer::save_checkpoint(fold_dir / "sidecar.penck", *tr.sidecar);
      {
        std::ofstream hist(fold_dir / "history.json");
        hist << trainer::history_to_json(tr.history).dump(2) << "\n";
      }
      fr.checkpoint_path = ckpt_path.string();
      nlohmann::json j = fold_to_json(fr);
      j["config_hash"] = opts.config_hash;
      std::lock_guard<std::mutex> lock(io_mutex);
      std::ofstream out(fold_json);
      out << j.dump(2) << "\n";
    }
    return fr;
  };

  MethodReport report;
  report.method = trainer::to_string(base_cfg.method);
  report.folds.resize(k);

  const int workers = std::max(1, opts.workers);
  std::vector<int> pending(k);
  for (int i = 0; i < k; ++i) pending[i] = i;
  std::mutex queue_mutex;
  std::exception_ptr first_error;
  auto worker = [&]() {
    for (;;) {
      int fold = -1;
      {
        std::lock_guard<std::mutex> lock(queue_mutex);
        if (pending.empty() || first_error) return;
        fold = pending.front();
        pending.erase(pending.begin());
      }
      try {
        FoldResult fr = run_fold(fold);
        std::lock_guard<std::mutex> lock(queue_mutex);
        report.folds[fold] = fr;
      } catch (...) {
        std::lock_guard<std::mutex> lock(queue_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  double mean = 0;
  for (const FoldResult& fr : report.folds) mean += fr.iou;
  mean /= k;
  double var = 0;
  for (const FoldResult& fr : report.folds)
    var += (fr.iou - mean) * (fr.iou - mean);
  report.mean_iou = mean;
  report.std_iou = std::sqrt(var / k);
  return report;
}

std::string format_report_cell(double mean, double std) {
  return format_decimal(mean, 4) + " (±" + format_decimal(std, 2) + ")";
}

void emit_tables(const std::vector<MethodReport>& reports,
                 const fs::path& csv_path, const fs::path& txt_path) {
  if (reports.empty()) throw InputError("emit_tables: no reports");
  for (const MethodReport& r : reports)
    if (r.folds.empty())
      throw InputError("emit_tables: report '" + r.method + "' has no folds");

  const char* header_note =
      "fold IoU aggregation: dataset-level (confusion counts summed over the "
      "test fold before the ratio)";
  const char* reference_note =
      "published full-scale reference (MoNuSeg, 10-fold IoU): baseline "
      "0.5710, edge-consistency 0.6059, with attention 0.6136";

  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << "# " << header_note << "\n";
  csv << "# " << reference_note << "\n";
  size_t max_folds = 0;
  for (const MethodReport& r : reports)
    max_folds = std::max(max_folds, r.folds.size());
  csv << "method,k,iou_cell,mean_iou,std_iou";
  for (size_t i = 0; i < max_folds; ++i) csv << ",fold_" << i;
  csv << "\n";
  for (const MethodReport& r : reports) {
    csv << r.method << "," << r.folds.size() << ",\""
        << format_report_cell(r.mean_iou, r.std_iou) << "\","
        << format_decimal(r.mean_iou, 4) << "," << format_decimal(r.std_iou, 2);
    for (size_t i = 0; i < max_folds; ++i) {
      csv << ",";
      if (i < r.folds.size()) csv << format_decimal(r.folds[i].iou, 6);
    }
    csv << "\n";
  }

  std::ofstream txt(txt_path);
  if (!txt) throw std::runtime_error("cannot write " + txt_path.string());
  size_t name_w = 6;
  for (const MethodReport& r : reports)
    name_w = std::max(name_w, r.method.size());
  txt << "# " << header_note << "\n";
  txt << "# " << reference_note << "\n";
  txt << std::string(name_w + 2, ' ').replace(0, 6, "method") << "| IoU\n";
  txt << std::string(name_w + 2, '-') << "+" << std::string(18, '-') << "\n";
  for (const MethodReport& r : reports) {
    std::string name = r.method;
    name.resize(name_w + 2, ' ');
    txt << name << "| " << format_report_cell(r.mean_iou, r.std_iou) << "\n";
  }
}

// ---- panels ----

namespace {

struct Tile {
  int h = 0, w = 0;
  std::vector<float> rgb;  // interleaved, [0,1]

  Tile(int h_, int w_) : h(h_), w(w_), rgb(3ull * h_ * w_, 0.5f) {}
  void set(int r, int c, float rr, float gg, float bb) {
    size_t i = (static_cast<size_t>(r) * w + c) * 3;
    rgb[i] = rr;
    rgb[i + 1] = gg;
    rgb[i + 2] = bb;
  }
};

// nearest-neighbor resample of any per-pixel accessor into a tile
template <class Fn>
Tile render_tile(int src_h, int src_w, int tile, Fn&& pixel) {
  Tile t(tile, tile);
  for (int r = 0; r < tile; ++r) {
    int sr = std::min(src_h - 1, r * src_h / tile);
    for (int c = 0; c < tile; ++c) {
      int sc = std::min(src_w - 1, c * src_w / tile);
      auto [rr, gg, bb] = pixel(sr, sc);
      t.set(r, c, rr, gg, bb);
    }
  }
  return t;
}

Tile gray_tile(const Grid<float>& g, int tile) {
  return render_tile(g.height, g.width, tile, [&](int r, int c) {
    float v = std::clamp(g.at(r, c), 0.f, 1.f);
    return std::tuple<float, float, float>(v, v, v);
  });
}

// zero -> mid-gray, positive -> bright, negative -> dark; per-tile scale
Tile signed_tile(const Grid<float>& g, int tile) {
  float max_abs = 0.f;
  for (float v : g.data) max_abs = std::max(max_abs, std::abs(v));
  float scale = max_abs > 0 ? 0.5f / max_abs : 0.f;
  return render_tile(g.height, g.width, tile, [&](int r, int c) {
    float v = 0.5f + g.at(r, c) * scale;
    return std::tuple<float, float, float>(v, v, v);
  });
}

}  // namespace

void render_panels(const std::vector<data::Sample>& samples,
                   const trainer::Checkpoint& main_ckpt,
                   const trainer::Checkpoint* sidecar,
                   const fs::path& out_path, const PanelOptions& opts) {
  model::Network f = trainer::instantiate_network(main_ckpt, "f");
  model::Network g, h;
  if (sidecar && sidecar->has_network("g"))
    g = trainer::instantiate_network(*sidecar, "g");
  if (sidecar && sidecar->has_network("h"))
    h = trainer::instantiate_network(*sidecar, "h");

  const int tile = opts.tile;
  const bool has_g = static_cast<bool>(g);
  const bool has_h = static_cast<bool>(h);
  // columns: input, [h], [g], [g (x) h], prob, binarized, ground truth
  const int cols = 4 + (has_h ? 1 : 0) + (has_g ? 1 : 0) +
                   ((has_g && has_h) ? 1 : 0);
  const int rows = static_cast<int>(samples.size());

  std::vector<uint8_t> canvas(static_cast<size_t>(rows * tile) *
                              (cols * tile) * 3);
  auto blit = [&](const Tile& t, int row, int col) {
    for (int r = 0; r < tile; ++r)
      for (int c = 0; c < tile; ++c) {
        size_t src = (static_cast<size_t>(r) * tile + c) * 3;
        size_t dst = ((static_cast<size_t>(row * tile + r) * cols * tile) +
                      col * tile + c) * 3;
        for (int ch = 0; ch < 3; ++ch) {
          float v = std::clamp(t.rgb[src + ch], 0.f, 1.f);
          canvas[dst + ch] = static_cast<uint8_t>(v * 255.0f + 0.5f);
        }
      }
  };

  for (int row = 0; row < rows; ++row) {
    const data::Sample& s = samples[row];
    int col = 0;
    blit(render_tile(s.image.height, s.image.width, tile,
                     [&](int r, int c) {
                       return std::tuple<float, float, float>(
                           s.image.at(0, r, c), s.image.at(1, r, c),
                           s.image.at(2, r, c));
                     }),
         row, col++);

    Grid<float> att;
    if (has_h) {
      att = trainer::predict_with(h, sidecar->norm, s.image);
      blit(gray_tile(att, tile), row, col++);
    }
    if (has_g) {
      std::vector<const data::Image*> one{&s.image};
      Tensor<float> x(1, 3, s.image.height, s.image.width);
      for (int c = 0; c < 3; ++c) {
        const float* src = s.image.plane(c);
        float* dst = x.plane(0, c);
        const float mu = sidecar->norm.mean[c], sd = sidecar->norm.std[c];
        for (int q = 0; q < s.image.height * s.image.width; ++q)
          dst[q] = (src[q] - mu) / sd;
      }
      Tensor<float> edge = g.forward_plain(x, false);
      Grid<float> edge_mean(edge.h, edge.w);
      for (int r = 0; r < edge.h; ++r)
        for (int c = 0; c < edge.w; ++c)
          edge_mean.at(r, c) =
              0.5f * (edge.at(0, 0, r, c) + edge.at(0, 1, r, c));
      blit(signed_tile(edge_mean, tile), row, col++);
      if (has_h) {
        Grid<float> gated(edge.h, edge.w);
        for (int r = 0; r < edge.h; ++r)
          for (int c = 0; c < edge.w; ++c)
            gated.at(r, c) = edge_mean.at(r, c) * att.at(r, c);
        blit(signed_tile(gated, tile), row, col++);
      }
    }

    Grid<float> prob = trainer::predict_with(f, main_ckpt.norm, s.image);
    blit(gray_tile(prob, tile), row, col++);
    Grid<uint8_t> bin = binarize(prob, opts.threshold);
    Grid<float> binf(bin.height, bin.width);
    for (size_t i = 0; i < bin.data.size(); ++i)
      binf.data[i] = bin.data[i] ? 1.f : 0.f;
    blit(gray_tile(binf, tile), row, col++);

    Grid<float> gt(s.image.height, s.image.width, 0.5f);
    if (s.instance_mask) {
      for (size_t i = 0; i < gt.data.size(); ++i)
        gt.data[i] = s.instance_mask->data[i] > 0 ? 1.f : 0.f;
    }
    blit(gray_tile(gt, tile), row, col++);
  }

  io::write_rgb_png(out_path, rows * tile, cols * tile, canvas);
}

}  // namespace pen::eval
