#include <algorithm>
#include <cmath>
#include <map>

#include "pen/common.hpp"
#include "pen/data.hpp"
#include "pen/rng.hpp"

// Synthetic stained-tissue corpus. Nuclei are crisp-edged textured ellipses;
// the background carries low-frequency tone variation plus diffuse dark
// blotches whose color overlaps the nuclei, so appearance alone is ambiguous
// and edge structure carries signal.

namespace pen::data {

namespace {

struct Nucleus {
  double row, col;    // center
  double a, b;        // semi-axes
  double cos_t, sin_t;
  float color[3];
  float pale;         // lightness factor
};

struct PackingFailure {};

constexpr double kMinCenterSep = 6.0;  // pixels, Euclidean
constexpr int kMinInstanceArea = 20;

double ellipse_rho(const Nucleus& n, double r, double c) {
  double dr = r - n.row, dc = c - n.col;
  double u = dc * n.cos_t + dr * n.sin_t;
  double v = -dc * n.sin_t + dr * n.cos_t;
  double ua = u / n.a, vb = v / n.b;
  return std::sqrt(ua * ua + vb * vb);
}

// Coarse value-noise field bilinearly upsampled to (h, w), range ~ [-1, 1].
Grid<float> value_noise(Rng& rng, int h, int w, int cell) {
  int gh = h / cell + 2, gw = w / cell + 2;
  Grid<float> nodes(gh, gw);
  for (auto& v : nodes.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  Grid<float> out(h, w);
  for (int r = 0; r < h; ++r) {
    double fr = static_cast<double>(r) / cell;
    int r0 = static_cast<int>(fr);
    double wr = fr - r0;
    for (int c = 0; c < w; ++c) {
      double fc = static_cast<double>(c) / cell;
      int c0 = static_cast<int>(fc);
      double wc = fc - c0;
      double v = (1 - wr) * (1 - wc) * nodes.at(r0, c0) +
                 (1 - wr) * wc * nodes.at(r0, c0 + 1) +
                 wr * (1 - wc) * nodes.at(r0 + 1, c0) +
                 wr * wc * nodes.at(r0 + 1, c0 + 1);
      out.at(r, c) = static_cast<float>(v);
    }
  }
  return out;
}

Sample generate_one(Rng& rng, const SynthConfig& cfg, const std::string& id) {
  const int h = cfg.height, w = cfg.width;
  const int n_nuclei = rng.uniform_int(cfg.nuclei_min, cfg.nuclei_max);

  // place nuclei first so their draws dominate the stream layout
  std::vector<Nucleus> nuclei;
  const double margin = 4.0;
  for (int j = 0; j < n_nuclei; ++j) {
    bool placed = false;
    for (int tries = 0; tries < 300 && !placed; ++tries) {
      double r = rng.uniform(margin, h - 1 - margin);
      double c = rng.uniform(margin, w - 1 - margin);
      bool ok = true;
      for (const Nucleus& o : nuclei) {
        double dr = r - o.row, dc = c - o.col;
        if (dr * dr + dc * dc < kMinCenterSep * kMinCenterSep) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      Nucleus n;
      n.row = r;
      n.col = c;
      n.a = rng.uniform(4.2, 9.5);
      n.b = n.a * rng.uniform(0.55, 1.0);
      double theta = rng.uniform(0.0, 3.14159265358979323846);
      n.cos_t = std::cos(theta);
      n.sin_t = std::sin(theta);
      n.pale = static_cast<float>(rng.uniform(0.8, 1.45));
      n.color[0] = static_cast<float>(0.36 + rng.uniform(-0.05, 0.05));
      n.color[1] = static_cast<float>(0.21 + rng.uniform(-0.05, 0.05));
      n.color[2] = static_cast<float>(0.50 + rng.uniform(-0.06, 0.06));
      nuclei.push_back(n);
      placed = true;
    }
    if (!placed) throw PackingFailure{};
  }

  // exact instance mask; overlap pixels go to the later instance
  annotation::InstanceMask mask(h, w, 0);
  for (size_t j = 0; j < nuclei.size(); ++j) {
    const Nucleus& n = nuclei[j];
    double rad = std::max(n.a, n.b) + 1.0;
    int r0 = std::max(0, static_cast<int>(std::floor(n.row - rad)));
    int r1 = std::min(h - 1, static_cast<int>(std::ceil(n.row + rad)));
    int c0 = std::max(0, static_cast<int>(std::floor(n.col - rad)));
    int c1 = std::min(w - 1, static_cast<int>(std::ceil(n.col + rad)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (ellipse_rho(n, r, c) <= 1.0)
          mask.at(r, c) = static_cast<int32_t>(j + 1);
  }

  // overlap can starve an instance or push its centroid out; reject and retry
  std::map<int32_t, int64_t> area;
  std::map<int32_t, std::pair<int64_t, int64_t>> csum;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int32_t id_at = mask.at(r, c);
      if (id_at == 0) continue;
      area[id_at] += 1;
      csum[id_at].first += r;
      csum[id_at].second += c;
    }
  if (static_cast<int>(area.size()) != n_nuclei) throw PackingFailure{};
  for (const auto& [iid, a] : area) {
    if (a < kMinInstanceArea) throw PackingFailure{};
    int cr = static_cast<int>(
        std::floor(static_cast<double>(csum[iid].first) / a + 0.5));
    int cc = static_cast<int>(
        std::floor(static_cast<double>(csum[iid].second) / a + 0.5));
    if (cr < 0 || cr >= h || cc < 0 || cc >= w) throw PackingFailure{};
  }

  // background: stain-tinted base, low-frequency tone, diffuse dark blotches
  Image img(h, w);
  float base[3] = {static_cast<float>(0.80 + rng.uniform(-0.05, 0.05)),
                   static_cast<float>(0.68 + rng.uniform(-0.05, 0.05)),
                   static_cast<float>(0.76 + rng.uniform(-0.05, 0.05))};
  Grid<float> tone = value_noise(rng, h, w, 16);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      float t = 1.0f + 0.07f * tone.at(r, c);
      img.at(0, r, c) = base[0] * t;
      img.at(1, r, c) = base[1] * t;
      img.at(2, r, c) = base[2] * t * 1.01f;
    }

  int n_blotches = rng.uniform_int(3, 7);
  for (int bi = 0; bi < n_blotches; ++bi) {
    double br = rng.uniform(0.0, h - 1.0);
    double bc = rng.uniform(0.0, w - 1.0);
    double rad = rng.uniform(7.0, 18.0);
    double strength = rng.uniform(0.22, 0.42);
    int r0 = std::max(0, static_cast<int>(br - 3 * rad));
    int r1 = std::min(h - 1, static_cast<int>(br + 3 * rad));
    int c0 = std::max(0, static_cast<int>(bc - 3 * rad));
    int c1 = std::min(w - 1, static_cast<int>(bc + 3 * rad));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        double d2 = (r - br) * (r - br) + (c - bc) * (c - bc);
        // wide Gaussian falloff: dark but without a crisp rim
        double fall = std::exp(-d2 / (2.0 * rad * rad));
        float s = static_cast<float>(strength * fall);
        img.at(0, r, c) *= (1.0f - s * 0.95f);
        img.at(1, r, c) *= (1.0f - s);
        img.at(2, r, c) *= (1.0f - s * 0.55f);
      }
  }

  // nuclei: crisp rims, chromatin speckle, ~2 px anti-aliased edge in the
  // image (the mask stays exact)
  Grid<float> speckle = value_noise(rng, h, w, 3);
  for (size_t j = 0; j < nuclei.size(); ++j) {
    const Nucleus& n = nuclei[j];
    double rad = std::max(n.a, n.b) + 2.0;
    int r0 = std::max(0, static_cast<int>(std::floor(n.row - rad)));
    int r1 = std::min(h - 1, static_cast<int>(std::ceil(n.row + rad)));
    int c0 = std::max(0, static_cast<int>(std::floor(n.col - rad)));
    int c1 = std::min(w - 1, static_cast<int>(std::ceil(n.col + rad)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        double rho = ellipse_rho(n, r, c);
        if (rho > 1.10) continue;
        double alpha = std::clamp((1.06 - rho) / 0.12, 0.0, 1.0);
        float rim = (rho > 0.78 && rho <= 1.02) ? 0.84f : 1.0f;
        float tex = 1.0f + 0.10f * speckle.at(r, c);
        for (int ch = 0; ch < 3; ++ch) {
          float nucleus_v = n.color[ch] * n.pale * rim * tex;
          float bg = img.at(ch, r, c);
          img.at(ch, r, c) =
              static_cast<float>(alpha * nucleus_v + (1.0 - alpha) * bg);
        }
      }
  }

  Image blurred = gaussian_blur(img, 0.6);
  for (auto& v : blurred.chw)
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.025)), 0.f, 1.f);

  Sample s;
  s.id = id;
  s.image = std::move(blurred);
  s.points = annotation::extract_points(mask);
  s.labels =
      annotation::voronoi_labels(s.points, h, w, /*positive_radius=*/0);
  s.instance_mask = std::move(mask);
  return s;
}

}  // namespace

std::vector<Sample> synth_generate(const SynthConfig& cfg) {
  if (cfg.height <= 0 || cfg.width <= 0)
    throw InputError("synth_generate: sizes must be positive");
  if (cfg.nuclei_min < 0 || cfg.nuclei_max < cfg.nuclei_min)
    throw InputError("synth_generate: bad nuclei range");

  std::vector<Sample> out;
  out.reserve(cfg.n_images);
  for (int i = 0; i < cfg.n_images; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    bool done = false;
    for (int attempt = 0; attempt < 50 && !done; ++attempt) {
      Rng rng(cfg.seed, "synth", static_cast<uint64_t>(i),
              static_cast<uint64_t>(attempt));
      try {
        out.push_back(generate_one(rng, cfg, name));
        done = true;
      } catch (const PackingFailure&) {
      }
    }
    if (!done)
      throw InputError(
          "synth_generate: infeasible packing (cannot place nuclei at the "
          "required separation)");
  }
  return out;
}

}  // namespace pen::data
