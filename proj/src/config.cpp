#include "pen/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "pen/common.hpp"

namespace pen::config {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw InputError("config: unknown key '" + it.key() + "' in " + where);
  }
}

model::NetworkSpec spec_from_json(const json& j, model::Role role,
                                  const std::string& where) {
  reject_unknown(j, {"family", "depth", "base_channels", "preset"}, where);
  model::NetworkSpec s = model::default_spec(role, model::Preset::Tiny);
  if (j.contains("family"))
    s.family = model::family_from_string(j.at("family").get<std::string>());
  if (j.contains("depth")) s.depth = j.at("depth").get<int>();
  if (j.contains("base_channels"))
    s.base_channels = j.at("base_channels").get<int>();
  if (j.contains("preset"))
    s.preset = model::preset_from_string(j.at("preset").get<std::string>());
  s.role = role;
  s.validate();
  return s;
}

json spec_to_json(const model::NetworkSpec& s) {
  json j;
  model::to_json(j, s);
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (k < 3) throw InputError("config: kfold.k must be >= 3");
  if (fold_index < 0 || fold_index >= k)
    throw InputError("config: kfold.fold_index out of range");
  if (positive_radius < 0)
    throw InputError("config: dataset.positive_radius must be >= 0");
  if (threads < 1) throw InputError("config: threads must be >= 1");
  if (pretrained_backbone)
    throw InputError(
        "config: pretrained_backbone=true is not supported (no pretrained "
        "weights are bundled); use random initialization");
  if (synth) {
    if (synth->n_images < 0) throw InputError("config: synth.n_images < 0");
    if (synth->n_images > 0 && (synth->height <= 0 || synth->width <= 0))
      throw InputError("config: synth sizes must be positive");
    if (synth->nuclei_min < 0 || synth->nuclei_max < synth->nuclei_min)
      throw InputError("config: bad synth nuclei range");
  }
}

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"seed", "output_dir", "threads", "dataset", "synth", "kfold",
                  "method", "networks", "loss", "optimizer", "scheduler",
                  "train", "augmentation"},
                 "top level");
  ExperimentConfig cfg;
  if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
  if (j.contains("output_dir"))
    cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"root", "layout", "positive_radius"}, "dataset");
    if (d.contains("root")) cfg.dataset_root = d.at("root").get<std::string>();
    if (d.contains("layout"))
      cfg.layout = data::layout_from_string(d.at("layout").get<std::string>());
    if (d.contains("positive_radius"))
      cfg.positive_radius = d.at("positive_radius").get<int>();
  }

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    reject_unknown(s, {"n_images", "height", "width", "nuclei_min",
                       "nuclei_max"},
                   "synth");
    data::SynthConfig sc;
    sc.n_images = s.at("n_images").get<int>();
    sc.height = s.value("height", 128);
    sc.width = s.value("width", 128);
    sc.nuclei_min = s.value("nuclei_min", 8);
    sc.nuclei_max = s.value("nuclei_max", 20);
    cfg.synth = sc;
  }

  if (j.contains("kfold")) {
    const json& kf = j.at("kfold");
    reject_unknown(kf, {"k", "fold_index"}, "kfold");
    if (kf.contains("k")) cfg.k = kf.at("k").get<int>();
    if (kf.contains("fold_index"))
      cfg.fold_index = kf.at("fold_index").get<int>();
  }

  if (j.contains("method"))
    cfg.train.method =
        trainer::method_from_string(j.at("method").get<std::string>());

  if (j.contains("networks")) {
    const json& n = j.at("networks");
    reject_unknown(
        n, {"segmentation", "edge", "attention", "pretrained_backbone"},
        "networks");
    if (n.contains("segmentation"))
      cfg.train.f = spec_from_json(n.at("segmentation"),
                                   model::Role::Segmentation, "segmentation");
    if (n.contains("edge"))
      cfg.train.g = spec_from_json(n.at("edge"), model::Role::Edge, "edge");
    if (n.contains("attention"))
      cfg.train.h = spec_from_json(n.at("attention"), model::Role::Attention,
                                   "attention");
    if (n.contains("pretrained_backbone"))
      cfg.pretrained_backbone = n.at("pretrained_backbone").get<bool>();
  }

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"lambda", "weight_positive", "weight_negative"}, "loss");
    if (l.contains("lambda"))
      cfg.train.loss.lambda = l.at("lambda").get<double>();
    if (l.contains("weight_positive"))
      cfg.train.loss.weight_positive = l.at("weight_positive").get<double>();
    if (l.contains("weight_negative"))
      cfg.train.loss.weight_negative = l.at("weight_negative").get<double>();
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"lr", "beta1", "beta2", "eps"}, "optimizer");
    if (o.contains("lr")) cfg.train.optimizer.lr = o.at("lr").get<double>();
    if (o.contains("beta1"))
      cfg.train.optimizer.beta1 = o.at("beta1").get<double>();
    if (o.contains("beta2"))
      cfg.train.optimizer.beta2 = o.at("beta2").get<double>();
    if (o.contains("eps")) cfg.train.optimizer.eps = o.at("eps").get<double>();
  }

  if (j.contains("scheduler")) {
    const json& s = j.at("scheduler");
    reject_unknown(s, {"factor", "patience"}, "scheduler");
    if (s.contains("factor"))
      cfg.train.scheduler.factor = s.at("factor").get<double>();
    if (s.contains("patience"))
      cfg.train.scheduler.patience = s.at("patience").get<int>();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "batch_size", "patch_size", "threshold"},
                   "train");
    if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
    if (t.contains("batch_size"))
      cfg.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("patch_size"))
      cfg.train.patch_size = t.at("patch_size").get<int>();
    if (t.contains("threshold"))
      cfg.train.threshold = t.at("threshold").get<double>();
  }

  if (j.contains("augmentation"))
    data::from_json(j.at("augmentation"), cfg.train.augmentation);

  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file: " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw InputError("config is not valid JSON: " + path.string());
  ExperimentConfig cfg = config_from_json(j);
  if (const char* env = std::getenv("PSEUDOEDGE_SEED")) {
    cfg.seed = std::strtoull(env, nullptr, 10);
    cfg.train.seed = cfg.seed;
  }
  return cfg;
}

nlohmann::json to_canonical_json(const ExperimentConfig& cfg, bool for_hash) {
  json j;
  j["seed"] = cfg.seed;
  if (!for_hash) {
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
  }
  j["dataset"] = {{"root", cfg.dataset_root},
                  {"layout", data::to_string(cfg.layout)},
                  {"positive_radius", cfg.positive_radius}};
  if (cfg.synth) {
    j["synth"] = {{"n_images", cfg.synth->n_images},
                  {"height", cfg.synth->height},
                  {"width", cfg.synth->width},
                  {"nuclei_min", cfg.synth->nuclei_min},
                  {"nuclei_max", cfg.synth->nuclei_max}};
  }
  j["kfold"] = {{"k", cfg.k}, {"fold_index", cfg.fold_index}};
  j["method"] = trainer::to_string(cfg.train.method);
  j["networks"] = {{"segmentation", spec_to_json(cfg.train.f)},
                   {"edge", spec_to_json(cfg.train.g)},
                   {"attention", spec_to_json(cfg.train.h)},
                   {"pretrained_backbone", cfg.pretrained_backbone}};
  j["loss"] = {{"lambda", cfg.train.loss.lambda},
               {"weight_positive", cfg.train.loss.weight_positive},
               {"weight_negative", cfg.train.loss.weight_negative}};
  j["optimizer"] = {{"lr", cfg.train.optimizer.lr},
                    {"beta1", cfg.train.optimizer.beta1},
                    {"beta2", cfg.train.optimizer.beta2},
                    {"eps", cfg.train.optimizer.eps}};
  j["scheduler"] = {{"factor", cfg.train.scheduler.factor},
                    {"patience", cfg.train.scheduler.patience}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"patch_size", cfg.train.patch_size},
                {"threshold", cfg.train.threshold}};
  json aug;
  data::to_json(aug, cfg.train.augmentation);
  j["augmentation"] = aug;
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
  return to_hex16(fnv1a64(to_canonical_json(cfg, /*for_hash=*/true).dump()));
}

void write_resolved(const std::filesystem::path& path,
                    const ExperimentConfig& cfg) {
  nlohmann::json j = to_canonical_json(cfg);
  j["config_hash"] = config_hash(cfg);
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace pen::config
