#pragma once

// Point-annotation machinery: instance masks -> points, and points ->
// tri-state label maps via the nearest-point (Voronoi) partition.

#include <filesystem>
#include <vector>

#include "pen/tensor.hpp"

namespace pen::annotation {

struct Point {
  int row = 0;
  int col = 0;
  bool operator==(const Point&) const = default;
};

// One marker per nucleus plus the host image extent.
struct PointSet {
  std::vector<Point> points;
  int height = 0;
  int width = 0;
};

// 0 = background, k >= 1 = instance id. Ids need not be contiguous.
using InstanceMask = Grid<int32_t>;

struct Partition {
  Grid<double> distance;  // Euclidean distance to the nearest point
  Grid<int32_t> owner;    // index into the point list; ties -> lowest index
};

// Per-instance center of mass, rounded half-up per axis. The rounded centroid
// of a non-convex instance may fall outside the instance and is kept. Output
// is sorted by instance id.
PointSet extract_points(const InstanceMask& mask);

// Exact nearest-point partition (bucketed search, identical results to a
// brute-force scan including the lowest-index tie rule).
Partition nearest_point_partition(const PointSet& points);

// POSITIVE within Chebyshev `positive_radius` of a point, NEGATIVE on owner
// changes under 4-connectivity, IGNORE elsewhere. POSITIVE wins ties.
LabelMap voronoi_labels(const PointSet& points, int height, int width,
                        int positive_radius = 0);

// CSV with header "row,col", one integer pair per line.
void write_points_csv(const std::filesystem::path& path, const PointSet& ps);
PointSet read_points_csv(const std::filesystem::path& path, int height,
                         int width);

}  // namespace pen::annotation
