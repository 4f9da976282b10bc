// Command-line entry point: points extraction, synthetic corpora, training,
// evaluation, the edge-network capacity ablation and method cross-validation.
// Exit codes: 0 success, 2 usage/input error, 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "pen/annotation.hpp"
#include "pen/common.hpp"
#include "pen/config.hpp"
#include "pen/data.hpp"
#include "pen/eval.hpp"
#include "pen/image_io.hpp"
#include "pen/model.hpp"
#include "pen/trainer.hpp"

namespace fs = std::filesystem;
using namespace pen;

namespace {

int cmd_points(const std::string& masks_dir, const std::string& out_dir) {
  if (!fs::is_directory(masks_dir))
    throw InputError("--masks is not a directory: " + masks_dir);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(masks_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    annotation::InstanceMask mask = io::read_mask_png(f);
    annotation::PointSet pts = annotation::extract_points(mask);
    annotation::write_points_csv(
        fs::path(out_dir) / (f.stem().string() + ".csv"), pts);
  }
  std::cout << "wrote " << files.size() << " point files to " << out_dir
            << "\n";
  return 0;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  config::ExperimentConfig cfg = config::load_config(config_path);
  if (!cfg.synth)
    throw InputError("config has no 'synth' section: " + config_path);
  data::SynthConfig sc = *cfg.synth;
  sc.seed = cfg.seed;
  std::vector<data::Sample> samples = data::synth_generate(sc);
  data::write_corpus(out_dir, samples);
  config::write_resolved(fs::path(out_dir) / "resolved_config.json", cfg);
  std::cout << "wrote " << samples.size() << " synthetic samples to "
            << out_dir << "\n";
  return 0;
}

std::vector<data::Sample> load_corpus(const config::ExperimentConfig& cfg) {
  if (cfg.dataset_root.empty())
    throw InputError("config: dataset.root is required for this command");
  if (!fs::is_directory(cfg.dataset_root))
    throw InputError("dataset root does not exist: " + cfg.dataset_root);
  data::DatasetOptions opts;
  opts.layout = cfg.layout;
  opts.positive_radius = cfg.positive_radius;
  return data::load_dataset(cfg.dataset_root, opts);
}

int cmd_train(const std::string& config_path, int fold_override) {
  config::ExperimentConfig cfg = config::load_config(config_path);
  int fold = fold_override >= 0 ? fold_override : cfg.fold_index;
  if (fold >= cfg.k) throw InputError("--fold out of range for configured k");

  std::vector<data::Sample> corpus = load_corpus(cfg);
  std::vector<std::string> ids;
  for (const auto& s : corpus) ids.push_back(s.id);
  data::FoldSplit split = data::kfold_split(ids, cfg.k, fold, cfg.seed);

  auto gather = [&](const std::vector<std::string>& want) {
    std::vector<data::Sample> out;
    for (const std::string& id : want)
      for (const auto& s : corpus)
        if (s.id == id) out.push_back(s);
    return out;
  };

  trainer::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "fold", static_cast<uint64_t>(fold));
  std::string hash = config::config_hash(cfg);

  trainer::TrainResult result =
      trainer::train(gather(split.train_ids), gather(split.val_ids), tc, hash);

  fs::path out_dir = fs::path(cfg.output_dir);
  fs::path fold_dir = out_dir / ("fold_" + std::to_string(fold));
  fs::create_directories(fold_dir);
  trainer::save_checkpoint(fold_dir / "checkpoint.penck", result.checkpoint);
  if (result.sidecar)
    trainer::save_checkpoint(fold_dir / "sidecar.penck", *result.sidecar);
  {
    std::ofstream hist(fold_dir / "history.json");
    hist << trainer::history_to_json(result.history).dump(2) << "\n";
  }
  config::write_resolved(out_dir / "resolved_config.json", cfg);
  std::cout << "fold " << fold << ": best epoch " << result.history.best_epoch
            << ", best val IoU "
            << format_decimal(result.history.best_val_iou, 4) << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             double threshold, const std::string& out_path,
             const std::string& panels_path, const std::string& sidecar_path,
             int panel_rows) {
  if (!fs::exists(ckpt_path))
    throw InputError("checkpoint does not exist: " + ckpt_path);
  trainer::Checkpoint ckpt = trainer::load_checkpoint(ckpt_path);
  std::vector<data::Sample> samples = data::load_dataset(data_dir);
  eval::FoldResult fr = eval::evaluate_fold(ckpt, samples, threshold);
  nlohmann::json j = eval::fold_to_json(fr);
  j["threshold"] = threshold;
  j["n_images"] = samples.size();
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    out << j.dump(2) << "\n";
    std::cout << "IoU " << format_decimal(fr.iou, 4) << " over "
              << samples.size() << " images -> " << out_path << "\n";
  }
  if (!panels_path.empty()) {
    std::optional<trainer::Checkpoint> sidecar;
    if (!sidecar_path.empty())
      sidecar = trainer::load_checkpoint(sidecar_path);
    std::vector<data::Sample> subset(
        samples.begin(),
        samples.begin() + std::min<size_t>(samples.size(), panel_rows));
    eval::PanelOptions popts;
    popts.threshold = threshold;
    eval::render_panels(subset, ckpt, sidecar ? &*sidecar : nullptr,
                        panels_path, popts);
    std::cout << "panels -> " << panels_path << "\n";
  }
  return 0;
}

// Maps a paper-scale ladder spec onto desk-scale widths when the experiment
// runs the tiny preset.
model::NetworkSpec adapt_to_tiny(const model::NetworkSpec& spec) {
  model::NetworkSpec s = spec;
  s.preset = model::Preset::Tiny;
  if (s.family == model::Family::ConvStack) {
    s.base_channels = 16;
  } else {
    s.base_channels = s.depth == 18 ? 16 : (s.depth == 34 ? 24 : 32);
  }
  return s;
}

std::string spec_row_name(const model::NetworkSpec& s) {
  if (s.family == model::Family::ConvStack)
    return "conv_stack_depth" + std::to_string(s.depth);
  return "pyramid_" + std::to_string(s.depth);
}

int cmd_ablate(const std::string& config_path) {
  config::ExperimentConfig cfg = config::load_config(config_path);
  if (cfg.train.method == trainer::Method::BaselineCe)
    throw InputError(
        "ablate varies the edge network; method must not be baseline_ce");
  std::vector<data::Sample> corpus = load_corpus(cfg);

  const bool tiny = cfg.train.f.preset == model::Preset::Tiny;
  std::vector<eval::MethodReport> reports;
  nlohmann::json rows = nlohmann::json::array();
  for (const model::NetworkSpec& ladder_spec : model::capacity_ladder()) {
    config::ExperimentConfig row_cfg = cfg;
    row_cfg.train.g = tiny ? adapt_to_tiny(ladder_spec) : ladder_spec;
    std::string hash = config::config_hash(row_cfg);
    std::string name = spec_row_name(ladder_spec);

    eval::CrossValOptions opts;
    opts.results_dir = fs::path(cfg.output_dir) / "ablate" / name;
    opts.config_hash = hash;
    opts.workers = cfg.threads;
    eval::MethodReport rep =
        eval::cross_validate(corpus, cfg.k, row_cfg.train, opts);
    rep.method = name;
    reports.push_back(rep);
    rows.push_back({{"edge_network", name},
                    {"config_hash", hash},
                    {"mean_iou", rep.mean_iou},
                    {"std_iou", rep.std_iou}});
    std::cout << name << ": "
              << eval::format_report_cell(rep.mean_iou, rep.std_iou) << "\n";
  }
  fs::path out_dir = fs::path(cfg.output_dir);
  fs::create_directories(out_dir);
  eval::emit_tables(reports, out_dir / "report.csv", out_dir / "report.txt");
  std::ofstream rj(out_dir / "ablate_rows.json");
  rj << rows.dump(2) << "\n";
  config::write_resolved(out_dir / "resolved_config.json", cfg);
  return 0;
}

int cmd_crossval(const std::string& config_path,
                 std::vector<std::string> methods) {
  config::ExperimentConfig cfg = config::load_config(config_path);
  std::vector<data::Sample> corpus = load_corpus(cfg);
  if (methods.empty())
    methods = {"baseline_ce", "pseudo_edge", "pseudo_edge_attention"};

  std::vector<eval::MethodReport> reports;
  for (const std::string& m : methods) {
    config::ExperimentConfig mcfg = cfg;
    mcfg.train.method = trainer::method_from_string(m);
    eval::CrossValOptions opts;
    opts.results_dir = fs::path(cfg.output_dir) / m;
    opts.config_hash = config::config_hash(mcfg);
    opts.workers = cfg.threads;
    eval::MethodReport rep =
        eval::cross_validate(corpus, cfg.k, mcfg.train, opts);
    reports.push_back(rep);
    std::cout << m << ": "
              << eval::format_report_cell(rep.mean_iou, rep.std_iou) << "\n";
  }
  fs::path out_dir = fs::path(cfg.output_dir);
  fs::create_directories(out_dir);
  eval::emit_tables(reports, out_dir / "report.csv", out_dir / "report.txt");
  config::write_resolved(out_dir / "resolved_config.json", cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised nuclei segmentation from point annotations"};
  app.require_subcommand(1);

  auto* points = app.add_subcommand(
      "points", "Extract per-nucleus points from instance masks");
  std::string masks_dir, points_out;
  points->add_option("--masks", masks_dir, "Directory of 16-bit instance mask PNGs")
      ->required();
  points->add_option("--out", points_out, "Output directory for CSV files")
      ->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  std::string synth_config, synth_out;
  synth->add_option("--config", synth_config, "Experiment config JSON")
      ->required();
  synth->add_option("--out", synth_out, "Corpus output directory")->required();

  auto* train = app.add_subcommand("train", "Train one fold");
  std::string train_config;
  int train_fold = -1;
  train->add_option("--config", train_config, "Experiment config JSON")
      ->required();
  train->add_option("--fold", train_fold, "Fold index override");

  auto* eval_cmd = app.add_subcommand(
      "eval", "Evaluate a checkpoint on a dataset directory");
  std::string eval_ckpt, eval_data, eval_out, eval_panels, eval_sidecar;
  double eval_threshold = 0.5;
  int panel_rows = 6;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--threshold", eval_threshold, "Binarization threshold");
  eval_cmd->add_option("--out", eval_out, "Write the fold result JSON here");
  eval_cmd->add_option("--panels", eval_panels,
                       "Render qualitative panels to this PNG");
  eval_cmd->add_option("--sidecar", eval_sidecar,
                       "Edge/attention sidecar checkpoint for panels");
  eval_cmd->add_option("--panel-rows", panel_rows,
                       "Number of samples in the panel grid");

  auto* ablate = app.add_subcommand("ablate", "Edge-network capacity ladder");
  std::string ablate_config;
  ablate->add_option("--config", ablate_config, "Experiment config JSON")
      ->required();

  auto* crossval =
      app.add_subcommand("crossval", "k-fold cross-validation per method");
  std::string crossval_config;
  std::vector<std::string> methods;
  crossval->add_option("--config", crossval_config, "Experiment config JSON")
      ->required();
  crossval
      ->add_option("--methods", methods, "Methods to compare (default: all three)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (points->parsed()) return cmd_points(masks_dir, points_out);
    if (synth->parsed()) return cmd_synth(synth_config, synth_out);
    if (train->parsed()) return cmd_train(train_config, train_fold);
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_threshold, eval_out,
                      eval_panels, eval_sidecar, panel_rows);
    if (ablate->parsed()) return cmd_ablate(ablate_config);
    if (crossval->parsed()) return cmd_crossval(crossval_config, methods);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
