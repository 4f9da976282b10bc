#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "pen/annotation.hpp"
#include "pen/common.hpp"
#include "pen/rng.hpp"

using namespace pen;
using annotation::InstanceMask;
using annotation::Point;
using annotation::PointSet;

namespace {

// O(H*W*n) oracle with the same tie rule: lowest index wins.
void brute_force_partition(const PointSet& ps, Grid<int32_t>& owner,
                           Grid<double>& dist) {
  owner = Grid<int32_t>(ps.height, ps.width, -1);
  dist = Grid<double>(ps.height, ps.width, 0.0);
  for (int r = 0; r < ps.height; ++r)
    for (int c = 0; c < ps.width; ++c) {
      int64_t best = std::numeric_limits<int64_t>::max();
      int best_i = -1;
      for (size_t i = 0; i < ps.points.size(); ++i) {
        int64_t dr = ps.points[i].row - r, dc = ps.points[i].col - c;
        int64_t d2 = dr * dr + dc * dc;
        if (d2 < best) {
          best = d2;
          best_i = static_cast<int>(i);
        }
      }
      owner.at(r, c) = best_i;
      dist.at(r, c) = std::sqrt(static_cast<double>(best));
    }
}

PointSet random_points(Rng& rng, int h, int w, int n) {
  PointSet ps;
  ps.height = h;
  ps.width = w;
  std::set<std::pair<int, int>> used;
  while (static_cast<int>(ps.points.size()) < n) {
    int r = rng.uniform_int(h), c = rng.uniform_int(w);
    if (used.insert({r, c}).second) ps.points.push_back({r, c});
  }
  return ps;
}

std::set<std::pair<int, int>> negative_set(const LabelMap& labels) {
  std::set<std::pair<int, int>> out;
  for (int r = 0; r < labels.height; ++r)
    for (int c = 0; c < labels.width; ++c)
      if (labels.at(r, c) == Label::Negative) out.insert({r, c});
  return out;
}

}  // namespace

TEST_CASE("extract_points: symmetric square, empty mask, L-shape") {
  InstanceMask m(9, 9, 0);
  for (int r = 4; r <= 6; ++r)
    for (int c = 4; c <= 6; ++c) m.at(r, c) = 1;
  PointSet ps = annotation::extract_points(m);
  REQUIRE(ps.points.size() == 1);
  CHECK(ps.points[0] == Point{5, 5});

  InstanceMask empty(4, 4, 0);
  CHECK(annotation::extract_points(empty).points.empty());

  // centroid (1.4, 0.6) -> rounded half-up (1, 1), outside the L but kept
  InstanceMask l(3, 3, 0);
  l.at(0, 0) = 7;
  l.at(1, 0) = 7;
  l.at(2, 0) = 7;
  l.at(2, 1) = 7;
  l.at(2, 2) = 7;
  PointSet lp = annotation::extract_points(l);
  REQUIRE(lp.points.size() == 1);
  CHECK(lp.points[0] == Point{1, 1});
}

TEST_CASE("extract_points: output sorted by instance id") {
  InstanceMask m(4, 8, 0);
  m.at(0, 7) = 9;   // later id placed first spatially
  m.at(0, 0) = 2;
  m.at(3, 3) = 5;
  PointSet ps = annotation::extract_points(m);
  REQUIRE(ps.points.size() == 3);
  CHECK(ps.points[0] == Point{0, 0});  // id 2
  CHECK(ps.points[1] == Point{3, 3});  // id 5
  CHECK(ps.points[2] == Point{0, 7});  // id 9
}

TEST_CASE("partition examples") {
  {
    PointSet ps{{{0, 0}}, 1, 3};
    auto part = annotation::nearest_point_partition(ps);
    CHECK(part.distance.at(0, 0) == 0.0);
    CHECK(part.distance.at(0, 1) == 1.0);
    CHECK(part.distance.at(0, 2) == 2.0);
    for (int c = 0; c < 3; ++c) CHECK(part.owner.at(0, c) == 0);
  }
  {
    PointSet ps{{{0, 0}, {0, 4}}, 1, 5};
    auto part = annotation::nearest_point_partition(ps);
    std::vector<int32_t> want{0, 0, 0, 1, 1};  // tie at col 2 -> index 0
    for (int c = 0; c < 5; ++c) CHECK(part.owner.at(0, c) == want[c]);
  }
  {
    PointSet ps{{{0, 0}, {2, 2}}, 3, 3};
    auto part = annotation::nearest_point_partition(ps);
    CHECK(part.owner.at(1, 1) == 0);  // sqrt(2) from both
    CHECK(part.distance.at(1, 1) == doctest::Approx(std::sqrt(2.0)));
  }
}

TEST_CASE("partition rejects empty point set") {
  PointSet ps;
  ps.height = 4;
  ps.width = 4;
  CHECK_THROWS_AS(annotation::nearest_point_partition(ps), InputError);
}

TEST_CASE("partition matches brute force on random point sets") {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    int h = 8 + rng.uniform_int(57);  // up to 64
    int w = 8 + rng.uniform_int(57);
    int n = 1 + rng.uniform_int(20);
    PointSet ps = random_points(rng, h, w, n);
    auto part = annotation::nearest_point_partition(ps);
    Grid<int32_t> owner;
    Grid<double> dist;
    brute_force_partition(ps, owner, dist);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        REQUIRE(part.owner.at(r, c) == owner.at(r, c));
        REQUIRE(part.distance.at(r, c) == dist.at(r, c));
      }
  }
}

TEST_CASE("voronoi label examples") {
  {
    LabelMap l = annotation::voronoi_labels({{{2, 2}}, 5, 5}, 5, 5, 0);
    int pos = 0, neg = 0;
    for (auto v : l.data) {
      pos += v == Label::Positive;
      neg += v == Label::Negative;
    }
    CHECK(pos == 1);
    CHECK(neg == 0);
    CHECK(l.at(2, 2) == Label::Positive);
  }
  {
    PointSet empty;
    empty.height = 4;
    empty.width = 4;
    LabelMap l = annotation::voronoi_labels(empty, 4, 4, 0);
    for (auto v : l.data) CHECK(v == Label::Ignore);
  }
  {
    LabelMap l =
        annotation::voronoi_labels({{{0, 0}, {0, 9}}, 1, 10}, 1, 10, 0);
    CHECK(l.at(0, 0) == Label::Positive);
    CHECK(l.at(0, 9) == Label::Positive);
    CHECK(l.at(0, 4) == Label::Negative);
    CHECK(l.at(0, 5) == Label::Negative);
    for (int c : {1, 2, 3, 6, 7, 8}) CHECK(l.at(0, c) == Label::Ignore);
  }
}

TEST_CASE("positive radius dilation and positive-over-negative") {
  // two close points: the boundary between them would cross the dilated
  // positives; POSITIVE must win
  LabelMap l = annotation::voronoi_labels({{{2, 2}, {2, 5}}, 5, 8}, 5, 8, 1);
  int pos = 0;
  for (int r = 1; r <= 3; ++r)
    for (int c = 1; c <= 3; ++c) pos += l.at(r, c) == Label::Positive;
  CHECK(pos == 9);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c) {
      bool in_ball = (std::abs(r - 2) <= 1 && std::abs(c - 2) <= 1) ||
                     (std::abs(r - 2) <= 1 && std::abs(c - 5) <= 1);
      if (in_ball) CHECK(l.at(r, c) == Label::Positive);
    }
}

TEST_CASE("labels partition the grid and negatives sit on owner changes") {
  Rng rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    int h = 16 + rng.uniform_int(33), w = 16 + rng.uniform_int(33);
    int n = 2 + rng.uniform_int(12);
    PointSet ps = random_points(rng, h, w, n);
    LabelMap l = annotation::voronoi_labels(ps, h, w, 0);
    Grid<int32_t> owner;
    Grid<double> dist;
    brute_force_partition(ps, owner, dist);
    std::set<std::pair<int, int>> points;
    for (const Point& p : ps.points) points.insert({p.row, p.col});
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        bool boundary = false;
        if (r + 1 < h && owner.at(r, c) != owner.at(r + 1, c)) boundary = true;
        if (r > 0 && owner.at(r, c) != owner.at(r - 1, c)) boundary = true;
        if (c + 1 < w && owner.at(r, c) != owner.at(r, c + 1)) boundary = true;
        if (c > 0 && owner.at(r, c) != owner.at(r, c - 1)) boundary = true;
        Label want = points.count({r, c})
                         ? Label::Positive
                         : (boundary ? Label::Negative : Label::Ignore);
        REQUIRE(l.at(r, c) == want);
      }
  }
}

TEST_CASE("negative set is permutation invariant without ties") {
  Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    int h = 24, w = 24;
    PointSet ps = random_points(rng, h, w, 6);
    auto part = annotation::nearest_point_partition(ps);
    // skip trials with an exact tie anywhere
    bool tie = false;
    for (int r = 0; r < h && !tie; ++r)
      for (int c = 0; c < w && !tie; ++c) {
        int hits = 0;
        for (const Point& p : ps.points) {
          int64_t dr = p.row - r, dc = p.col - c;
          double d = std::sqrt(static_cast<double>(dr * dr + dc * dc));
          if (d == part.distance.at(r, c)) ++hits;
        }
        if (hits > 1) tie = true;
      }
    if (tie) continue;
    PointSet rev = ps;
    std::reverse(rev.points.begin(), rev.points.end());
    auto l1 = annotation::voronoi_labels(ps, h, w, 0);
    auto l2 = annotation::voronoi_labels(rev, h, w, 0);
    CHECK(negative_set(l1) == negative_set(l2));
  }
}

TEST_CASE("single-pixel instances round-trip through points to positives") {
  Rng rng(34);
  InstanceMask m(20, 20, 0);
  std::set<std::pair<int, int>> placed;
  int id = 1;
  while (placed.size() < 8) {
    int r = rng.uniform_int(20), c = rng.uniform_int(20);
    if (placed.insert({r, c}).second) m.at(r, c) = id++;
  }
  PointSet ps = annotation::extract_points(m);
  LabelMap l = annotation::voronoi_labels(ps, 20, 20, 0);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c)
      CHECK((l.at(r, c) == Label::Positive) == (placed.count({r, c}) > 0));
}

TEST_CASE("points csv round-trip and validation") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "pen_points_test";
  fs::create_directories(dir);
  PointSet ps{{{0, 0}, {3, 7}, {9, 2}}, 10, 8};
  annotation::write_points_csv(dir / "a.csv", ps);
  PointSet back = annotation::read_points_csv(dir / "a.csv", 10, 8);
  CHECK(back.points == ps.points);

  PointSet oob{{{10, 0}}, 10, 8};  // row == height
  annotation::write_points_csv(dir / "bad.csv", oob);
  CHECK_THROWS_AS(annotation::read_points_csv(dir / "bad.csv", 10, 8),
                  InputError);
  fs::remove_all(dir);
}
