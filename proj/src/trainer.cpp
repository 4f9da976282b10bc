#include "pen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pen/common.hpp"
#include "pen/rng.hpp"

namespace pen::trainer {

namespace fs = std::filesystem;

std::string to_string(Method m) {
  switch (m) {
    case Method::BaselineCe: return "baseline_ce";
    case Method::PseudoEdge: return "pseudo_edge";
    case Method::PseudoEdgeAttention: return "pseudo_edge_attention";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "baseline_ce") return Method::BaselineCe;
  if (s == "pseudo_edge") return Method::PseudoEdge;
  if (s == "pseudo_edge_attention") return Method::PseudoEdgeAttention;
  throw InputError("unknown method: " + s);
}

void TrainConfig::validate() const {
  loss.validate();
  augmentation.validate();
  if (epochs < 1) throw InputError("train: epochs must be >= 1");
  if (batch_size < 1) throw InputError("train: batch_size must be >= 1");
  if (patch_size < 8) throw InputError("train: patch_size must be >= 8");
  if (threshold <= 0.0 || threshold >= 1.0)
    throw InputError("train: threshold must lie in (0,1)");
  if (optimizer.lr <= 0) throw InputError("train: lr must be > 0");
  if (scheduler.factor <= 0 || scheduler.factor >= 1)
    throw InputError("train: scheduler factor must lie in (0,1)");
  if (scheduler.patience < 1) throw InputError("train: patience must be >= 1");
}

nlohmann::json history_to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const EpochRecord& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"ce", e.ce},
                      {"edge", e.edge},
                      {"total", e.total},
                      {"val_iou", e.val_iou},
                      {"lr", e.lr}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"best_val_iou", h.best_val_iou}};
}

TrainHistory history_from_json(const nlohmann::json& j) {
  TrainHistory h;
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.ce = e.at("ce").get<double>();
    r.edge = e.at("edge").get<double>();
    r.total = e.at("total").get<double>();
    r.val_iou = e.at("val_iou").get<double>();
    r.lr = e.at("lr").get<double>();
    h.epochs.push_back(r);
  }
  h.best_epoch = j.at("best_epoch").get<int>();
  h.best_val_iou = j.at("best_val_iou").get<double>();
  return h;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[8] = {'P', 'E', 'N', 'C', 'K', 'P', 'T', '1'};

void capture_network(Checkpoint& c, const std::string& key,
                     const model::Network& net) {
  c.specs[key] = net.spec;
  for (const auto& e : net.params().params)
    c.tensors[key + "/" + e.name] = e.value->value;
  for (const auto& b : net.params().buffers)
    c.tensors[key + "/" + b.name] = *b.tensor;
}

void restore_network(const Checkpoint& c, const std::string& key,
                     model::Network& net) {
  auto fetch = [&](const std::string& name) -> const Tensor<float>& {
    auto it = c.tensors.find(key + "/" + name);
    if (it == c.tensors.end())
      throw InputError("checkpoint missing tensor: " + key + "/" + name);
    return it->second;
  };
  for (auto& e : net.params().params) {
    const Tensor<float>& t = fetch(e.name);
    if (!t.same_shape(e.value->value))
      throw InputError("checkpoint tensor shape mismatch: " + e.name);
    e.value->value = t;
  }
  for (auto& b : net.params().buffers) {
    const Tensor<float>& t = fetch(b.name);
    if (!t.same_shape(*b.tensor))
      throw InputError("checkpoint buffer shape mismatch: " + b.name);
    *b.tensor = t;
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& c) {
  nlohmann::json specs;
  for (const auto& [key, spec] : c.specs) {
    nlohmann::json js;
    model::to_json(js, spec);
    js["role"] = model::to_string(spec.role);
    specs[key] = js;
  }
  nlohmann::json tensors = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : c.tensors) {
    tensors.push_back({{"name", name},
                       {"shape", {t.n, t.c, t.h, t.w}},
                       {"offset", offset}});
    offset += t.v.size();
  }
  nlohmann::json header{
      {"format", 1},
      {"config_hash", c.config_hash},
      {"threshold", c.threshold},
      {"normalization",
       {{"mean", {c.norm.mean[0], c.norm.mean[1], c.norm.mean[2]}},
        {"std", {c.norm.std[0], c.norm.std[1], c.norm.std[2]}}}},
      {"specs", specs},
      {"tensors", tensors}};
  std::string hs = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), hs.size());
  for (const auto& [name, t] : c.tensors)
    out.write(reinterpret_cast<const char*>(t.v.data()),
              static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read checkpoint: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw InputError("not a checkpoint file: " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || hlen > (1ull << 30))
    throw InputError("corrupted checkpoint header: " + path.string());
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw InputError("corrupted checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception&) {
    throw InputError("corrupted checkpoint header: " + path.string());
  }
  Checkpoint c;
  c.config_hash = header.at("config_hash").get<std::string>();
  c.threshold = header.at("threshold").get<double>();
  for (int i = 0; i < 3; ++i) {
    c.norm.mean[i] = header.at("normalization").at("mean").at(i).get<float>();
    c.norm.std[i] = header.at("normalization").at("std").at(i).get<float>();
  }
  for (auto it = header.at("specs").begin(); it != header.at("specs").end();
       ++it) {
    model::NetworkSpec spec;
    model::from_json(it.value(), spec);
    spec.role = model::role_from_string(it.value().at("role").get<std::string>());
    c.specs[it.key()] = spec;
  }
  for (const auto& jt : header.at("tensors")) {
    std::string name = jt.at("name").get<std::string>();
    auto shape = jt.at("shape");
    Tensor<float> t(shape.at(0).get<int>(), shape.at(1).get<int>(),
                    shape.at(2).get<int>(), shape.at(3).get<int>());
    in.read(reinterpret_cast<char*>(t.v.data()),
            static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!in) throw InputError("truncated checkpoint: " + path.string());
    c.tensors[name] = std::move(t);
  }
  return c;
}

model::Network instantiate_network(const Checkpoint& c, const std::string& key) {
  auto it = c.specs.find(key);
  if (it == c.specs.end())
    throw InputError("checkpoint has no network '" + key + "'");
  model::Network net = model::build_network(it->second, /*seed=*/0);
  restore_network(c, key, net);
  return net;
}

// ---- training ----

namespace {

struct Adam {
  OptimizerConfig cfg;
  struct Slot {
    Tensor<float> m, v;
  };
  std::vector<nn::Val> params;
  std::vector<Slot> slots;
  int64_t t = 0;

  void init(const std::vector<nn::Val>& ps, const OptimizerConfig& c) {
    cfg = c;
    params = ps;
    slots.resize(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
      const Tensor<float>& v = ps[i]->value;
      slots[i].m = Tensor<float>(v.n, v.c, v.h, v.w);
      slots[i].v = Tensor<float>(v.n, v.c, v.h, v.w);
    }
  }

  void step(double lr) {
    t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const float b1 = static_cast<float>(cfg.beta1);
    const float b2 = static_cast<float>(cfg.beta2);
    for (size_t i = 0; i < params.size(); ++i) {
      nn::Val& p = params[i];
      Slot& s = slots[i];
      const bool has_grad = !p->grad.empty();
      for (size_t q = 0; q < p->value.v.size(); ++q) {
        float g = has_grad ? p->grad.v[q] : 0.f;
        s.m.v[q] = b1 * s.m.v[q] + (1.f - b1) * g;
        s.v.v[q] = b2 * s.v.v[q] + (1.f - b2) * g * g;
        double mhat = s.m.v[q] / bc1;
        double vhat = s.v.v[q] / bc2;
        p->value.v[q] -= static_cast<float>(lr * mhat /
                                            (std::sqrt(vhat) + cfg.eps));
      }
      p->clear_grad();
    }
  }
};

Tensor<float> make_input_batch(const std::vector<const data::Image*>& imgs,
                               const Normalization& norm) {
  const int h = imgs[0]->height, w = imgs[0]->width;
  Tensor<float> x(static_cast<int>(imgs.size()), 3, h, w);
  for (size_t i = 0; i < imgs.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const float* src = imgs[i]->plane(c);
      float* dst = x.plane(static_cast<int>(i), c);
      const float mu = norm.mean[c], sd = norm.std[c];
      for (int q = 0; q < h * w; ++q) dst[q] = (src[q] - mu) / sd;
    }
  }
  return x;
}

double dataset_iou(const model::Network& f, const Normalization& norm,
                   const std::vector<data::Sample>& samples,
                   double threshold) {
  int64_t inter = 0, uni = 0;
  for (const data::Sample& s : samples) {
    if (!s.instance_mask)
      throw InputError("sample '" + s.id + "' has no mask for evaluation");
    Grid<float> prob = predict_with(f, norm, s.image);
    for (int r = 0; r < prob.height; ++r)
      for (int c = 0; c < prob.width; ++c) {
        bool p = prob.at(r, c) > threshold;
        bool g = s.instance_mask->at(r, c) > 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
      }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

Normalization compute_normalization(const std::vector<data::Sample>& samples) {
  Normalization norm;
  double sum[3] = {0, 0, 0}, sum2[3] = {0, 0, 0};
  int64_t count = 0;
  for (const data::Sample& s : samples) {
    const int64_t plane = static_cast<int64_t>(s.image.height) * s.image.width;
    for (int c = 0; c < 3; ++c) {
      const float* p = s.image.plane(c);
      for (int64_t q = 0; q < plane; ++q) {
        sum[c] += p[q];
        sum2[c] += static_cast<double>(p[q]) * p[q];
      }
    }
    count += plane;
  }
  for (int c = 0; c < 3; ++c) {
    double mu = count ? sum[c] / count : 0.0;
    double var = count ? std::max(0.0, sum2[c] / count - mu * mu) : 1.0;
    norm.mean[c] = static_cast<float>(mu);
    norm.std[c] = static_cast<float>(std::max(1e-3, std::sqrt(var)));
  }
  return norm;
}

Grid<float> predict_with(const model::Network& f, const Normalization& norm,
                         const data::Image& img) {
  std::vector<const data::Image*> one{&img};
  Tensor<float> x = make_input_batch(one, norm);
  Tensor<float> out = f.forward_plain(x, /*training=*/false);
  return tensor_to_grid(out);
}

Grid<float> predict(const Checkpoint& ckpt, const data::Image& img) {
  model::Network f = instantiate_network(ckpt, "f");
  return predict_with(f, ckpt.norm, img);
}

TrainResult train(const std::vector<data::Sample>& train_set,
                  const std::vector<data::Sample>& val_set,
                  const TrainConfig& cfg, const std::string& config_hash) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw InputError("train: empty train or validation set");

  const bool use_edge = cfg.method != Method::BaselineCe;
  const bool use_attention = cfg.method == Method::PseudoEdgeAttention;

  model::Network f = model::build_segmentation_network(
      cfg.f, derive_seed(cfg.seed, "init_f"));
  model::Network g, h;
  if (use_edge)
    g = model::build_edge_network(cfg.g, derive_seed(cfg.seed, "init_g"));
  if (use_attention)
    h = model::build_attention_network(cfg.h, derive_seed(cfg.seed, "init_h"));

  Normalization norm = compute_normalization(train_set);

  std::vector<nn::Val> all_params;
  for (const auto& e : f.params().params) all_params.push_back(e.value);
  if (g) for (const auto& e : g.params().params) all_params.push_back(e.value);
  if (h) for (const auto& e : h.params().params) all_params.push_back(e.value);
  Adam adam;
  adam.init(all_params, cfg.optimizer);

  PlateauScheduler sched(cfg.optimizer.lr, cfg.scheduler);

  loss::LossConfig loss_cfg = cfg.loss;
  loss_cfg.use_attention = use_attention;

  int patch = cfg.patch_size;
  for (const data::Sample& s : train_set)
    patch = std::min({patch, s.image.height, s.image.width});

  TrainHistory history;
  Checkpoint best;
  std::optional<Checkpoint> best_sidecar;
  double best_iou = -1.0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order(train_set.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng order_rng(cfg.seed, "order", static_cast<uint64_t>(epoch));
    order_rng.shuffle(order);
    Rng aug_rng(cfg.seed, "augment", static_cast<uint64_t>(epoch));

    double sum_ce = 0, sum_edge = 0, sum_total = 0;
    int64_t n_patches = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t bn =
          std::min(order.size() - start, static_cast<size_t>(cfg.batch_size));
      std::vector<data::Sample> batch;
      batch.reserve(bn);
      Tensor<uint8_t> labels(static_cast<int>(bn), 1, patch, patch);
      std::vector<data::Image> patches(bn);
      for (size_t bi = 0; bi < bn; ++bi) {
        const data::Sample& src = train_set[order[start + bi]];
        uint64_t draw = aug_rng.next_u64();
        int top = aug_rng.uniform_int(src.image.height - patch + 1);
        int left = aug_rng.uniform_int(src.image.width - patch + 1);
        data::Sample aug = data::augment(src, cfg.augmentation, draw);
        data::Image& pimg = patches[bi];
        pimg = data::Image(patch, patch);
        for (int c = 0; c < 3; ++c)
          for (int r = 0; r < patch; ++r)
            for (int q = 0; q < patch; ++q)
              pimg.at(c, r, q) = aug.image.at(c, top + r, left + q);
        for (int r = 0; r < patch; ++r)
          for (int q = 0; q < patch; ++q)
            labels.at(static_cast<int>(bi), 0, r, q) =
                static_cast<uint8_t>(aug.labels.at(top + r, left + q));
      }
      std::vector<const data::Image*> ptrs;
      for (const auto& p : patches) ptrs.push_back(&p);
      Tensor<float> x = make_input_batch(ptrs, norm);

      nn::Val input = ag::constant(x);
      nn::Val seg = f.forward(input, /*training=*/true);
      nn::Val edge_out, att_out;
      if (use_edge) edge_out = g.forward(input, true);
      if (use_attention) att_out = h.forward(input, true);

      loss::LossBreakdown bd;
      nn::Val total =
          loss::total_loss(seg, edge_out, att_out, labels, loss_cfg, &bd);
      ag::backward(total);
      adam.step(sched.lr);

      sum_ce += bd.ce * static_cast<double>(bn);
      sum_edge += bd.edge * static_cast<double>(bn);
      sum_total += bd.total * static_cast<double>(bn);
      n_patches += static_cast<int64_t>(bn);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.ce = sum_ce / static_cast<double>(n_patches);
    rec.edge = sum_edge / static_cast<double>(n_patches);
    rec.total = sum_total / static_cast<double>(n_patches);
    rec.lr = sched.lr;
    if (!std::isfinite(rec.total))
      throw DivergenceError("training diverged at epoch " +
                            std::to_string(epoch) +
                            ": mean loss = " + std::to_string(rec.total));

    rec.val_iou = dataset_iou(f, norm, val_set, cfg.threshold);
    history.epochs.push_back(rec);

    if (rec.val_iou > best_iou) {
      best_iou = rec.val_iou;
      history.best_epoch = epoch;
      history.best_val_iou = rec.val_iou;
      best = Checkpoint{};
      best.config_hash = config_hash;
      best.threshold = cfg.threshold;
      best.norm = norm;
      capture_network(best, "f", f);
      if (g || h) {
        best_sidecar = Checkpoint{};
        best_sidecar->config_hash = config_hash;
        best_sidecar->threshold = cfg.threshold;
        best_sidecar->norm = norm;
        if (g) capture_network(*best_sidecar, "g", g);
        if (h) capture_network(*best_sidecar, "h", h);
      }
    }

    // the new rate takes effect from the next epoch
    sched.observe(rec.total);
  }

  TrainResult result;
  result.checkpoint = std::move(best);
  result.sidecar = std::move(best_sidecar);
  result.history = std::move(history);
  return result;
}

}  // namespace pen::trainer
