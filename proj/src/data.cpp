#include "pen/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pen/common.hpp"
#include "pen/image_io.hpp"
#include "pen/rng.hpp"

namespace pen::data {

namespace fs = std::filesystem;

Layout layout_from_string(const std::string& s) {
  if (s == "generic") return Layout::Generic;
  if (s == "monuseg") return Layout::MoNuSeg;
  if (s == "tnbc") return Layout::Tnbc;
  throw InputError("unknown dataset layout: " + s);
}

std::string to_string(Layout l) {
  switch (l) {
    case Layout::Generic: return "generic";
    case Layout::MoNuSeg: return "monuseg";
    case Layout::Tnbc: return "tnbc";
  }
  return "?";
}

std::vector<Sample> load_dataset(const fs::path& root,
                                 const DatasetOptions& opts) {
  fs::path images = root / "images";
  if (!fs::is_directory(images))
    throw InputError("dataset root has no images/ directory: " + root.string());

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".png" || ext == ".tif" || ext == ".tiff")
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<Sample> out;
  out.reserve(files.size());
  for (const fs::path& f : files) {
    Sample s;
    s.id = f.stem().string();
    s.image = io::read_image(f);
    fs::path mask_path = root / "masks" / (s.id + ".png");
    fs::path points_path = root / "points" / (s.id + ".csv");
    bool have_mask = fs::exists(mask_path);
    bool have_points = fs::exists(points_path);
    if (!have_mask && !have_points)
      throw InputError("sample '" + s.id + "': neither mask nor points found");
    if (have_mask) {
      s.instance_mask = io::read_mask_png(mask_path);
      if (s.instance_mask->height != s.image.height ||
          s.instance_mask->width != s.image.width)
        throw InputError("sample '" + s.id + "': mask/image shape mismatch");
    }
    if (have_points) {
      s.points =
          annotation::read_points_csv(points_path, s.image.height, s.image.width);
    } else {
      s.points = annotation::extract_points(*s.instance_mask);
    }
    s.labels = annotation::voronoi_labels(s.points, s.image.height,
                                          s.image.width, opts.positive_radius);
    out.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  fs::create_directories(root / "points");
  nlohmann::json ids = nlohmann::json::array();
  for (const Sample& s : samples) {
    io::write_image_png(root / "images" / (s.id + ".png"), s.image);
    if (s.instance_mask)
      io::write_mask_png16(root / "masks" / (s.id + ".png"), *s.instance_mask);
    annotation::write_points_csv(root / "points" / (s.id + ".csv"), s.points);
    ids.push_back(s.id);
  }
  nlohmann::json manifest{
      {"count", samples.size()},
      {"ids", ids},
      {"height", samples.empty() ? 0 : samples.front().image.height},
      {"width", samples.empty() ? 0 : samples.front().image.width}};
  std::ofstream mf(root / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

// ---- augmentation config ----

void AugmentationConfig::validate() const {
  auto range_ok = [](double lo, double hi) { return lo <= hi; };
  if (!range_ok(rotation_degrees_min, rotation_degrees_max) ||
      !range_ok(affine_scale_min, affine_scale_max) ||
      !range_ok(blur_sigma_min, blur_sigma_max))
    throw InputError("augmentation: range minimum exceeds maximum");
  if (hflip_prob < 0 || hflip_prob > 1 || vflip_prob < 0 || vflip_prob > 1)
    throw InputError("augmentation: flip probability outside [0,1]");
  if (affine_scale_min <= 0)
    throw InputError("augmentation: affine scale must be positive");
  if (elastic_alpha < 0 || elastic_sigma <= 0)
    throw InputError("augmentation: bad elastic parameters");
  if (noise_sigma < 0 || blur_sigma_min < 0)
    throw InputError("augmentation: negative sigma");
}

bool AugmentationConfig::any_geometric() const {
  return hflip_prob > 0 || vflip_prob > 0 ||
         rotation_degrees_min != rotation_degrees_max ||
         rotation_degrees_min != 0.0 || affine_scale_min != 1.0 ||
         affine_scale_max != 1.0 || affine_shear_degrees != 0.0 ||
         affine_translate_frac != 0.0 || elastic_alpha > 0;
}

void to_json(nlohmann::json& j, const AugmentationConfig& c) {
  j = nlohmann::json{
      {"hflip_prob", c.hflip_prob},
      {"vflip_prob", c.vflip_prob},
      {"rotation_degrees", {c.rotation_degrees_min, c.rotation_degrees_max}},
      {"affine_scale", {c.affine_scale_min, c.affine_scale_max}},
      {"affine_shear_degrees", c.affine_shear_degrees},
      {"affine_translate_frac", c.affine_translate_frac},
      {"elastic_alpha", c.elastic_alpha},
      {"elastic_sigma", c.elastic_sigma},
      {"color_brightness", c.color_brightness},
      {"color_contrast", c.color_contrast},
      {"color_saturation", c.color_saturation},
      {"color_hue", c.color_hue},
      {"blur_sigma", {c.blur_sigma_min, c.blur_sigma_max}},
      {"noise_sigma", c.noise_sigma}};
}

void from_json(const nlohmann::json& j, AugmentationConfig& c) {
  j.at("hflip_prob").get_to(c.hflip_prob);
  j.at("vflip_prob").get_to(c.vflip_prob);
  c.rotation_degrees_min = j.at("rotation_degrees").at(0).get<double>();
  c.rotation_degrees_max = j.at("rotation_degrees").at(1).get<double>();
  c.affine_scale_min = j.at("affine_scale").at(0).get<double>();
  c.affine_scale_max = j.at("affine_scale").at(1).get<double>();
  j.at("affine_shear_degrees").get_to(c.affine_shear_degrees);
  j.at("affine_translate_frac").get_to(c.affine_translate_frac);
  j.at("elastic_alpha").get_to(c.elastic_alpha);
  j.at("elastic_sigma").get_to(c.elastic_sigma);
  j.at("color_brightness").get_to(c.color_brightness);
  j.at("color_contrast").get_to(c.color_contrast);
  j.at("color_saturation").get_to(c.color_saturation);
  j.at("color_hue").get_to(c.color_hue);
  c.blur_sigma_min = j.at("blur_sigma").at(0).get<double>();
  c.blur_sigma_max = j.at("blur_sigma").at(1).get<double>();
  j.at("noise_sigma").get_to(c.noise_sigma);
  c.validate();
}

// ---- geometric transforms ----

namespace {

constexpr double kPi = 3.14159265358979323846;

void mat_identity(double m[6]) {
  m[0] = 1; m[1] = 0; m[2] = 0;
  m[3] = 0; m[4] = 1; m[5] = 0;
}

// (r,c) -> m * (r,c) + t
void mat_apply(const double m[6], double r, double c, double& ro, double& co) {
  ro = m[0] * r + m[1] * c + m[2];
  co = m[3] * r + m[4] * c + m[5];
}

void mat_invert(const double m[6], double out[6]) {
  double det = m[0] * m[4] - m[1] * m[3];
  double ia = m[4] / det, ib = -m[1] / det;
  double ic = -m[3] / det, id = m[0] / det;
  out[0] = ia; out[1] = ib;
  out[3] = ic; out[4] = id;
  out[2] = -(ia * m[2] + ib * m[5]);
  out[5] = -(ic * m[2] + id * m[5]);
}

Grid<float> smooth_field(Rng& rng, int h, int w, double sigma, double alpha) {
  Grid<float> field(h, w);
  for (auto& v : field.data)
    v = static_cast<float>(rng.uniform(-1.0, 1.0));
  // separable Gaussian on the raw noise, then rescale to +-alpha
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  Grid<float> tmp(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * field.at(r, std::clamp(c + i, 0, w - 1));
      tmp.at(r, c) = static_cast<float>(acc);
    }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp.at(std::clamp(r + i, 0, h - 1), c);
      field.at(r, c) = static_cast<float>(acc * alpha * 2.5);
    }
  return field;
}

}  // namespace

GeoTransform resolve_geo(const AugmentationConfig& cfg, Rng& rng, int height,
                         int width) {
  GeoTransform gt;
  gt.height = height;
  gt.width = width;
  if (cfg.hflip_prob > 0) gt.hflip = rng.bernoulli(cfg.hflip_prob);
  if (cfg.vflip_prob > 0) gt.vflip = rng.bernoulli(cfg.vflip_prob);

  double angle = 0.0;
  if (cfg.rotation_degrees_min != 0.0 || cfg.rotation_degrees_max != 0.0)
    angle = rng.uniform(cfg.rotation_degrees_min, cfg.rotation_degrees_max);

  double scale = 1.0, shear = 0.0, tr = 0.0, tc = 0.0;
  bool affine_enabled = cfg.affine_scale_min != 1.0 ||
                        cfg.affine_scale_max != 1.0 ||
                        cfg.affine_shear_degrees != 0.0 ||
                        cfg.affine_translate_frac != 0.0;
  if (affine_enabled) {
    scale = rng.uniform(cfg.affine_scale_min, cfg.affine_scale_max);
    if (cfg.affine_shear_degrees != 0.0)
      shear = rng.uniform(-cfg.affine_shear_degrees, cfg.affine_shear_degrees);
    if (cfg.affine_translate_frac != 0.0) {
      tr = rng.uniform(-cfg.affine_translate_frac, cfg.affine_translate_frac) *
           height;
      tc = rng.uniform(-cfg.affine_translate_frac, cfg.affine_translate_frac) *
           width;
    }
  }

  // Quarter-turn rotations of square images take the exact permutation path.
  bool exact_turn = !affine_enabled && std::fmod(angle, 90.0) == 0.0 &&
                    (height == width || std::fmod(angle, 180.0) == 0.0);
  if (exact_turn) {
    int k = static_cast<int>(std::lround(angle / 90.0));
    gt.quarter_turns = ((k % 4) + 4) % 4;
  } else if (angle != 0.0 || affine_enabled) {
    gt.has_affine = true;
    double a = angle * kPi / 180.0;
    double sh = std::tan(shear * kPi / 180.0);
    // A = R(angle) * Shear * Scale, about the image center.
    double r00 = std::cos(a), r01 = -std::sin(a);
    double r10 = std::sin(a), r11 = std::cos(a);
    double m00 = scale * (r00 + r01 * sh);
    double m01 = scale * r01;
    double m10 = scale * (r10 + r11 * sh);
    double m11 = scale * r11;
    double cr = (height - 1) / 2.0, cc = (width - 1) / 2.0;
    gt.fwd[0] = m00; gt.fwd[1] = m01;
    gt.fwd[3] = m10; gt.fwd[4] = m11;
    gt.fwd[2] = cr - m00 * cr - m01 * cc + tr;
    gt.fwd[5] = cc - m10 * cr - m11 * cc + tc;
    mat_invert(gt.fwd, gt.inv);
  }

  if (cfg.elastic_alpha > 0) {
    gt.has_elastic = true;
    double unit = std::min(height, width) / 256.0;
    double sigma = std::max(0.5, cfg.elastic_sigma * unit);
    double alpha = cfg.elastic_alpha * unit;
    gt.disp_r = smooth_field(rng, height, width, sigma, alpha);
    gt.disp_c = smooth_field(rng, height, width, sigma, alpha);
  }
  return gt;
}

namespace {

// Stage-wise application: flips -> quarter turns -> affine -> elastic.
// Sampling is inverse (output pixel fetches its source location).

enum class FlipKind { H, V };

template <class T>
Grid<T> flip_grid(const Grid<T>& g, FlipKind kind) {
  Grid<T> out(g.height, g.width);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      out.at(r, c) = kind == FlipKind::H ? g.at(r, g.width - 1 - c)
                                         : g.at(g.height - 1 - r, c);
  return out;
}

// counterclockwise quarter turns; exact index permutation
template <class T>
Grid<T> rot90_grid(const Grid<T>& g, int k) {
  Grid<T> cur = g;
  for (int t = 0; t < k; ++t) {
    Grid<T> out(cur.width, cur.height);
    for (int r = 0; r < out.height; ++r)
      for (int c = 0; c < out.width; ++c)
        out.at(r, c) = cur.at(c, cur.width - 1 - r);
    cur = std::move(out);
  }
  return cur;
}

Image flip_image(const Image& img, FlipKind kind) {
  Image out(img.height, img.width);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        out.at(ch, r, c) = kind == FlipKind::H
                               ? img.at(ch, r, img.width - 1 - c)
                               : img.at(ch, img.height - 1 - r, c);
  return out;
}

Image rot90_image(const Image& img, int k) {
  Image cur = img;
  for (int t = 0; t < k; ++t) {
    Image out(cur.width, cur.height);
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c)
          out.at(ch, r, c) = cur.at(ch, c, cur.width - 1 - r);
    cur = std::move(out);
  }
  return cur;
}

float sample_bilinear_clamped(const Image& img, int ch, double r, double c) {
  r = std::clamp(r, 0.0, static_cast<double>(img.height - 1));
  c = std::clamp(c, 0.0, static_cast<double>(img.width - 1));
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  int r1 = std::min(r0 + 1, img.height - 1);
  int c1 = std::min(c0 + 1, img.width - 1);
  double fr = r - r0, fc = c - c0;
  return static_cast<float>((1 - fr) * (1 - fc) * img.at(ch, r0, c0) +
                            (1 - fr) * fc * img.at(ch, r0, c1) +
                            fr * (1 - fc) * img.at(ch, r1, c0) +
                            fr * fc * img.at(ch, r1, c1));
}

Image affine_image(const Image& img, const double inv[6]) {
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double sr, sc;
      mat_apply(inv, r, c, sr, sc);
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r, c) = sample_bilinear_clamped(img, ch, sr, sc);
    }
  return out;
}

template <class T>
Grid<T> affine_grid_nearest(const Grid<T>& g, const double inv[6], T fill) {
  Grid<T> out(g.height, g.width, fill);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      double sr, sc;
      mat_apply(inv, r, c, sr, sc);
      int ir = static_cast<int>(std::lround(sr));
      int ic = static_cast<int>(std::lround(sc));
      if (g.in_bounds(ir, ic)) out.at(r, c) = g.at(ir, ic);
    }
  return out;
}

Image elastic_image(const Image& img, const Grid<float>& dr,
                    const Grid<float>& dc) {
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        out.at(ch, r, c) = sample_bilinear_clamped(
            img, ch, r + dr.at(r, c), c + dc.at(r, c));
  return out;
}

template <class T>
Grid<T> elastic_grid_nearest(const Grid<T>& g, const Grid<float>& dr,
                             const Grid<float>& dc, T fill) {
  Grid<T> out(g.height, g.width, fill);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c) {
      int ir = static_cast<int>(std::lround(r + dr.at(r, c)));
      int ic = static_cast<int>(std::lround(c + dc.at(r, c)));
      if (g.in_bounds(ir, ic)) out.at(r, c) = g.at(ir, ic);
    }
  return out;
}

}  // namespace

Image warp_image(const Image& img, const GeoTransform& gt) {
  Image cur = img;
  if (gt.hflip) cur = flip_image(cur, FlipKind::H);
  if (gt.vflip) cur = flip_image(cur, FlipKind::V);
  if (gt.quarter_turns) cur = rot90_image(cur, gt.quarter_turns);
  if (gt.has_affine) cur = affine_image(cur, gt.inv);
  if (gt.has_elastic) cur = elastic_image(cur, gt.disp_r, gt.disp_c);
  return cur;
}

Grid<int32_t> warp_mask(const Grid<int32_t>& mask, const GeoTransform& gt) {
  Grid<int32_t> cur = mask;
  if (gt.hflip) cur = flip_grid(cur, FlipKind::H);
  if (gt.vflip) cur = flip_grid(cur, FlipKind::V);
  if (gt.quarter_turns) cur = rot90_grid(cur, gt.quarter_turns);
  if (gt.has_affine) cur = affine_grid_nearest(cur, gt.inv, 0);
  if (gt.has_elastic)
    cur = elastic_grid_nearest(cur, gt.disp_r, gt.disp_c, 0);
  return cur;
}

LabelMap warp_labels(const LabelMap& labels, const GeoTransform& gt) {
  LabelMap cur = labels;
  if (gt.hflip) cur = flip_grid(cur, FlipKind::H);
  if (gt.vflip) cur = flip_grid(cur, FlipKind::V);
  if (gt.quarter_turns) cur = rot90_grid(cur, gt.quarter_turns);
  if (gt.has_affine) cur = affine_grid_nearest(cur, gt.inv, Label::Ignore);
  if (gt.has_elastic)
    cur = elastic_grid_nearest(cur, gt.disp_r, gt.disp_c, Label::Ignore);
  return cur;
}

annotation::PointSet transform_points(const annotation::PointSet& pts,
                                      const GeoTransform& gt) {
  annotation::PointSet out;
  out.height = gt.height;
  out.width = gt.width;
  for (const annotation::Point& p : pts.points) {
    double r = p.row, c = p.col;
    if (gt.hflip) c = pts.width - 1 - c;
    if (gt.vflip) r = pts.height - 1 - r;
    int cur_w = pts.width;
    for (int t = 0; t < gt.quarter_turns; ++t) {
      // counterclockwise: (r,c) -> (w-1-c, r)
      double nr = cur_w - 1 - c;
      double nc = r;
      r = nr;
      c = nc;
      cur_w = (t % 2 == 0) ? pts.height : pts.width;
    }
    if (gt.has_affine) {
      double nr, nc;
      mat_apply(gt.fwd, r, c, nr, nc);
      r = nr;
      c = nc;
    }
    if (gt.has_elastic) {
      int ir = std::clamp(static_cast<int>(std::lround(r)), 0, gt.height - 1);
      int ic = std::clamp(static_cast<int>(std::lround(c)), 0, gt.width - 1);
      // first-order inverse of output(p) = input(p + D(p))
      r -= gt.disp_r.at(ir, ic);
      c -= gt.disp_c.at(ir, ic);
    }
    int rr = static_cast<int>(std::lround(r));
    int cc = static_cast<int>(std::lround(c));
    if (rr >= 0 && rr < gt.height && cc >= 0 && cc < gt.width)
      out.points.push_back({rr, cc});
  }
  return out;
}

// ---- photometric ----

namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  float d = mx - mn;
  s = mx == 0 ? 0 : d / mx;
  if (d == 0) {
    h = 0;
    return;
  }
  if (mx == r) h = std::fmod((g - b) / d, 6.0f);
  else if (mx == g) h = (b - r) / d + 2.0f;
  else h = (r - g) / d + 4.0f;
  h /= 6.0f;
  if (h < 0) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  float i = std::floor(h * 6.0f);
  float f = h * 6.0f - i;
  float p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_photometric(Image& img, const AugmentationConfig& cfg, Rng& rng) {
  const size_t plane = static_cast<size_t>(img.height) * img.width;
  if (cfg.color_brightness > 0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - cfg.color_brightness, 1.0 + cfg.color_brightness));
    for (auto& v : img.chw) v *= f;
  }
  if (cfg.color_contrast > 0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - cfg.color_contrast, 1.0 + cfg.color_contrast));
    double mean = 0;
    for (size_t i = 0; i < plane; ++i)
      mean += 0.299 * img.chw[i] + 0.587 * img.chw[plane + i] +
              0.114 * img.chw[2 * plane + i];
    float m = static_cast<float>(mean / plane);
    for (auto& v : img.chw) v = f * v + (1 - f) * m;
  }
  if (cfg.color_saturation > 0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - cfg.color_saturation, 1.0 + cfg.color_saturation));
    for (size_t i = 0; i < plane; ++i) {
      float gray = 0.299f * img.chw[i] + 0.587f * img.chw[plane + i] +
                   0.114f * img.chw[2 * plane + i];
      img.chw[i] = f * img.chw[i] + (1 - f) * gray;
      img.chw[plane + i] = f * img.chw[plane + i] + (1 - f) * gray;
      img.chw[2 * plane + i] = f * img.chw[2 * plane + i] + (1 - f) * gray;
    }
  }
  if (cfg.color_hue > 0) {
    float dh = static_cast<float>(rng.uniform(-cfg.color_hue, cfg.color_hue));
    for (size_t i = 0; i < plane; ++i) {
      float r = std::clamp(img.chw[i], 0.f, 1.f);
      float g = std::clamp(img.chw[plane + i], 0.f, 1.f);
      float b = std::clamp(img.chw[2 * plane + i], 0.f, 1.f);
      float h, s, v;
      rgb_to_hsv(r, g, b, h, s, v);
      h = h + dh;
      h -= std::floor(h);
      hsv_to_rgb(h, s, v, r, g, b);
      img.chw[i] = r;
      img.chw[plane + i] = g;
      img.chw[2 * plane + i] = b;
    }
  }
  if (cfg.blur_sigma_max > 0) {
    double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    if (sigma > 0.05) img = gaussian_blur(img, sigma);
  }
  if (cfg.noise_sigma > 0) {
    for (auto& v : img.chw)
      v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
  }
  for (auto& v : img.chw) v = std::clamp(v, 0.f, 1.f);
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  Image tmp(img.height, img.width), out(img.height, img.width);
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] *
                 img.at(ch, r, std::clamp(c + i, 0, img.width - 1));
        tmp.at(ch, r, c) = static_cast<float>(acc);
      }
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[i + radius] *
                 tmp.at(ch, std::clamp(r + i, 0, img.height - 1), c);
        out.at(ch, r, c) = static_cast<float>(acc);
      }
  }
  return out;
}

Sample augment(const Sample& sample, const AugmentationConfig& cfg,
               uint64_t draw_seed) {
  cfg.validate();
  Rng rng(draw_seed);
  GeoTransform gt =
      resolve_geo(cfg, rng, sample.image.height, sample.image.width);
  Sample out;
  out.id = sample.id;
  out.image = warp_image(sample.image, gt);
  if (sample.instance_mask)
    out.instance_mask = warp_mask(*sample.instance_mask, gt);
  out.points = transform_points(sample.points, gt);
  out.labels = warp_labels(sample.labels, gt);
  apply_photometric(out.image, cfg, rng);
  return out;
}

// ---- folds ----

FoldSplit kfold_split(const std::vector<std::string>& ids, int k,
                      int fold_index, uint64_t seed) {
  if (k < 3) throw InputError("kfold_split: k must be >= 3");
  if (static_cast<size_t>(k) > ids.size())
    throw InputError("kfold_split: k exceeds corpus size");
  if (fold_index < 0 || fold_index >= k)
    throw InputError("kfold_split: fold_index out of range");

  std::vector<std::string> shuffled = ids;
  Rng rng(seed, "kfold");
  rng.shuffle(shuffled);

  const int n = static_cast<int>(shuffled.size());
  const int base = n / k, rem = n % k;
  std::vector<std::vector<std::string>> folds(k);
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    int size = base + (f < rem ? 1 : 0);
    for (int i = 0; i < size; ++i) folds[f].push_back(shuffled[pos++]);
  }

  FoldSplit split;
  split.k = k;
  split.fold_index = fold_index;
  split.test_ids = folds[fold_index];
  split.val_ids = folds[(fold_index + 1) % k];
  for (int f = 0; f < k; ++f) {
    if (f == fold_index || f == (fold_index + 1) % k) continue;
    split.train_ids.insert(split.train_ids.end(), folds[f].begin(),
                           folds[f].end());
  }
  return split;
}

}  // namespace pen::data
