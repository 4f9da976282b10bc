#include "pen/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "pen/common.hpp"

namespace pen::annotation {

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

PointSet extract_points(const InstanceMask& mask) {
  struct Acc {
    int64_t sum_r = 0, sum_c = 0, count = 0;
  };
  std::map<int32_t, Acc> acc;  // ordered by instance id
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      int32_t id = mask.at(r, c);
      if (id <= 0) continue;
      Acc& a = acc[id];
      a.sum_r += r;
      a.sum_c += c;
      a.count += 1;
    }
  }
  PointSet ps;
  ps.height = mask.height;
  ps.width = mask.width;
  ps.points.reserve(acc.size());
  for (const auto& [id, a] : acc) {
    double cr = static_cast<double>(a.sum_r) / a.count;
    double cc = static_cast<double>(a.sum_c) / a.count;
    ps.points.push_back(Point{round_half_up(cr), round_half_up(cc)});
  }
  return ps;
}

Partition nearest_point_partition(const PointSet& ps) {
  if (ps.points.empty()) throw InputError("nearest_point_partition: no points");
  const int h = ps.height, w = ps.width;
  const int n = static_cast<int>(ps.points.size());
  Partition out;
  out.distance = Grid<double>(h, w);
  out.owner = Grid<int32_t>(h, w, -1);

  // Bucket the points so the per-pixel scan touches only nearby candidates.
  const int side = std::clamp(
      static_cast<int>(std::sqrt(static_cast<double>(h) * w / n)), 1,
      std::max(h, w));
  const int bh = (h + side - 1) / side;
  const int bw = (w + side - 1) / side;
  std::vector<std::vector<int>> buckets(static_cast<size_t>(bh) * bw);
  for (int i = 0; i < n; ++i) {
    const Point& p = ps.points[i];
    buckets[static_cast<size_t>(p.row / side) * bw + p.col / side].push_back(i);
  }

  auto scan_bucket = [&](int bi, int bj, int r, int c, int64_t& best_d2,
                         int& best_i) {
    for (int idx : buckets[static_cast<size_t>(bi) * bw + bj]) {
      int64_t dr = ps.points[idx].row - r;
      int64_t dc = ps.points[idx].col - c;
      int64_t d2 = dr * dr + dc * dc;
      if (d2 < best_d2 || (d2 == best_d2 && idx < best_i)) {
        best_d2 = d2;
        best_i = idx;
      }
    }
  };

  const int max_ring = bh + bw + 2;
  for (int r = 0; r < h; ++r) {
    const int pbr = r / side;
    for (int c = 0; c < w; ++c) {
      const int pbc = c / side;
      int64_t best_d2 = std::numeric_limits<int64_t>::max();
      int best_i = std::numeric_limits<int>::max();
      for (int ring = 0; ring <= max_ring; ++ring) {
        if (best_i != std::numeric_limits<int>::max() && ring > 0) {
          // Any point in ring `ring` is at least (ring-1)*side+1 away; once
          // that bound exceeds the best distance no tie can appear either.
          int64_t lo = static_cast<int64_t>(ring - 1) * side + 1;
          if (lo * lo > best_d2) break;
        }
        int i0 = pbr - ring, i1 = pbr + ring;
        int j0 = pbc - ring, j1 = pbc + ring;
        for (int j = std::max(0, j0); j <= std::min(bw - 1, j1); ++j) {
          if (i0 >= 0) scan_bucket(i0, j, r, c, best_d2, best_i);
          if (i1 < bh && ring > 0) scan_bucket(i1, j, r, c, best_d2, best_i);
        }
        for (int i = std::max(0, i0 + 1); i <= std::min(bh - 1, i1 - 1); ++i) {
          if (j0 >= 0) scan_bucket(i, j0, r, c, best_d2, best_i);
          if (j1 < bw) scan_bucket(i, j1, r, c, best_d2, best_i);
        }
      }
      out.owner.at(r, c) = best_i;
      out.distance.at(r, c) = std::sqrt(static_cast<double>(best_d2));
    }
  }
  return out;
}

LabelMap voronoi_labels(const PointSet& ps, int height, int width,
                        int positive_radius) {
  LabelMap labels(height, width, Label::Ignore);
  if (ps.points.empty()) return labels;
  for (const Point& p : ps.points) {
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width)
      throw InputError("voronoi_labels: point out of bounds");
  }

  PointSet bounded = ps;
  bounded.height = height;
  bounded.width = width;
  Partition part = nearest_point_partition(bounded);

  // Owner changes under 4-connectivity mark both sides of the boundary.
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      int32_t own = part.owner.at(r, c);
      if (c + 1 < width && part.owner.at(r, c + 1) != own) {
        labels.at(r, c) = Label::Negative;
        labels.at(r, c + 1) = Label::Negative;
      }
      if (r + 1 < height && part.owner.at(r + 1, c) != own) {
        labels.at(r, c) = Label::Negative;
        labels.at(r + 1, c) = Label::Negative;
      }
    }
  }

  for (const Point& p : ps.points) {
    for (int dr = -positive_radius; dr <= positive_radius; ++dr) {
      for (int dc = -positive_radius; dc <= positive_radius; ++dc) {
        int r = p.row + dr, c = p.col + dc;
        if (r >= 0 && r < height && c >= 0 && c < width)
          labels.at(r, c) = Label::Positive;
      }
    }
  }
  return labels;
}

void write_points_csv(const std::filesystem::path& path, const PointSet& ps) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write points file: " + path.string());
  out << "row,col\n";
  for (const Point& p : ps.points) out << p.row << "," << p.col << "\n";
  if (!out) throw InputError("failed writing points file: " + path.string());
}

PointSet read_points_csv(const std::filesystem::path& path, int height,
                         int width) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read points file: " + path.string());
  PointSet ps;
  ps.height = height;
  ps.width = width;
  std::string line;
  if (!std::getline(in, line) || line.rfind("row,col", 0) != 0)
    throw InputError("points file missing 'row,col' header: " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b))
      throw InputError("malformed points line in " + path.string());
    Point p{std::stoi(a), std::stoi(b)};
    if (p.row < 0 || p.row >= height || p.col < 0 || p.col >= width)
      throw InputError("point out of bounds in " + path.string());
    for (const Point& q : ps.points)
      if (q == p) throw InputError("duplicate point in " + path.string());
    ps.points.push_back(p);
  }
  return ps;
}

}  // namespace pen::annotation
