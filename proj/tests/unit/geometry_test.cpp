#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "dualobs/core/rng.hpp"
#include "dualobs/geometry/clough_tocher.hpp"
#include "dualobs/geometry/delaunay.hpp"

namespace dualobs::geometry {
namespace {

using Edges = std::vector<std::pair<int, int>>;

// Brute-force oracle: a triangle (i, j, k) is Delaunay when no other point
// lies strictly inside its circumcircle. Works in long double; test inputs
// are in general position.
std::set<std::pair<int, int>> brute_force_edges(const std::vector<Point2>& p) {
  std::set<std::pair<int, int>> e;
  const int n = static_cast<int>(p.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        const long double ax = p[i].x, ay = p[i].y, bx = p[j].x, by = p[j].y, cx = p[k].x, cy = p[k].y;
        const long double d = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        if (std::abs(d) < 1e-18L) continue;
        const long double ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) +
                                (cx * cx + cy * cy) * (ay - by)) / d;
        const long double uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) +
                                (cx * cx + cy * cy) * (bx - ax)) / d;
        const long double r2 = (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy);
        bool empty = true;
        for (int m = 0; m < n && empty; ++m) {
          if (m == i || m == j || m == k) continue;
          const long double d2 = (p[m].x - ux) * (p[m].x - ux) + (p[m].y - uy) * (p[m].y - uy);
          if (d2 < r2 * (1 - 1e-12L)) empty = false;
        }
        if (empty) {
          e.insert({i, j});
          e.insert({i, k});
          e.insert({j, k});
        }
      }
  return e;
}

TEST(Delaunay, UnitSquareKeepsEarlierDiagonal) {
  const std::vector<Point2> sq = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  const auto e = delaunay(sq).undirected_edges();
  EXPECT_EQ(e, (Edges{{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 3}}));
}

TEST(Delaunay, TriangleAndBothDirections) {
  const std::vector<Point2> p = {{0, 0}, {1, 0}, {0.3, 0.8}};
  EXPECT_EQ(delaunay(p).undirected_edges().size(), 3u);
  EXPECT_EQ(delaunay_edges(p), (Edges{{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}}));
}

TEST(Delaunay, DegenerateInputsThrow) {
  const std::vector<Point2> two = {{0, 0}, {1, 1}};
  const std::vector<Point2> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  const std::vector<Point2> dup = {{0, 0}, {1, 0}, {0, 1}, {1, 0}};
  EXPECT_THROW(delaunay(two), DegenerateInputError);
  EXPECT_THROW(delaunay(line), DegenerateInputError);
  EXPECT_THROW(delaunay(dup), DegenerateInputError);
}

TEST(Delaunay, MatchesBruteForceOnRandomSets) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(40));
    std::vector<Point2> p(n);
    for (auto& q : p) q = {rng.uniform(), rng.uniform()};
    const auto got = delaunay(p).undirected_edges();
    const auto want = brute_force_edges(p);
    const std::set<std::pair<int, int>> got_set(got.begin(), got.end());
    EXPECT_EQ(got_set, want) << "trial " << trial;
  }
}

TEST(Delaunay, EulerCountOnGridSubsets) {
  // Many co-circular quadruples: the result must still be a triangulation
  // of the hull (V - E + F = 1 for F interior faces).
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> idx = rng.choose(256, 64);
    std::vector<Point2> p;
    for (int i : idx) p.push_back({(i % 16) / 16.0, (i / 16) / 16.0});
    const auto t = delaunay(p);
    const auto e = t.undirected_edges();
    EXPECT_EQ(static_cast<int>(p.size()) - static_cast<int>(e.size()) + static_cast<int>(t.triangles.size()), 1);
    for (const auto& tr : t.triangles) EXPECT_GT(orientation(p[tr[0]], p[tr[1]], p[tr[2]]), 0);
  }
}

TEST(Delaunay, CollinearPrefixHandled) {
  const std::vector<Point2> p = {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {1.5, 1}};
  const auto t = delaunay(p);
  EXPECT_EQ(t.triangles.size(), 3u);
}

TEST(Delaunay, DeterministicGivenOrder) {
  Rng rng(3);
  std::vector<Point2> p(50);
  for (auto& q : p) q = {rng.uniform(), rng.uniform()};
  EXPECT_EQ(delaunay(p).triangles, delaunay(p).triangles);
}

std::vector<Point2> grid_targets(int n) {
  std::vector<Point2> t;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) t.push_back({static_cast<double>(x) / n, static_cast<double>(y) / n});
  return t;
}

std::vector<Point2> random_grid_sites(Rng& rng, int n, int count) {
  std::vector<int> idx = rng.choose(n * n, count);
  std::sort(idx.begin(), idx.end());
  std::vector<Point2> s;
  for (int i : idx) s.push_back({(i % n) / static_cast<double>(n), (i / n) / static_cast<double>(n)});
  return s;
}

TEST(CloughTocher, ExactAtSitesAndConstants) {
  Rng rng(4);
  const auto targets = grid_targets(16);
  const auto sites = random_grid_sites(rng, 16, 64);
  CloughTocherInterpolator ct(sites, targets);
  EXPECT_EQ(ct.fallback_count(), 0);
  std::vector<double> v(sites.size());
  for (auto& x : v) x = rng.normal();
  const auto out = ct.evaluate(v);
  for (std::size_t s = 0; s < sites.size(); ++s) {
    const int t = static_cast<int>(std::lround(sites[s].y * 16)) * 16 + static_cast<int>(std::lround(sites[s].x * 16));
    EXPECT_DOUBLE_EQ(out[t], v[s]);
  }
  const auto flat = ct.evaluate(std::vector<double>(sites.size(), 2.5));
  for (double x : flat) EXPECT_NEAR(x, 2.5, 1e-12);
}

TEST(CloughTocher, ReproducesPeriodicSmoothFieldAccurately) {
  // Smooth periodic field: error must fall as the sampling densifies.
  auto f = [](double x, double y) { return std::sin(2 * M_PI * x) * std::cos(2 * M_PI * y); };
  Rng rng(5);
  double prev = 1e9;
  for (int n : {16, 32, 64}) {
    const auto sites = random_grid_sites(rng, n, n * n / 4);
    const auto targets = grid_targets(n);
    CloughTocherInterpolator ct(sites, targets);
    std::vector<double> v;
    for (const auto& s : sites) v.push_back(f(s.x, s.y));
    const auto out = ct.evaluate(v);
    double err = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) err = std::max(err, std::abs(out[t] - f(targets[t].x, targets[t].y)));
    std::printf("n=%d max error %.3e\n", n, err);
    EXPECT_LT(err, prev / 4) << n;
    prev = err;
  }
  EXPECT_LT(prev, 1e-2);
}

TEST(CloughTocher, QuadraticReproducedInsideHull) {
  // Quadratic precision: gradients from the quadratic fit are exact and the
  // element reproduces quadratics. Non-periodic, so only check far from the
  // seam where images break the polynomial.
  auto f = [](double x, double y) { return 1 + 2 * x - y + 0.5 * x * x + x * y - 2 * y * y; };
  Rng rng(6);
  const auto sites = random_grid_sites(rng, 32, 400);
  std::vector<Point2> targets;
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) targets.push_back({x / 32.0 + 0.01, y / 32.0 + 0.007});
  CloughTocherInterpolator ct(sites, targets);
  std::vector<double> v;
  for (const auto& s : sites) v.push_back(f(s.x, s.y));
  const auto out = ct.evaluate(v);
  for (std::size_t t = 0; t < targets.size(); ++t) EXPECT_NEAR(out[t], f(targets[t].x, targets[t].y), 1e-9);
}

double max_second_difference(int m) {
  Rng rng(7);
  const auto sites = random_grid_sites(rng, 16, 40);
  std::vector<Point2> line;
  for (int i = 0; i <= m; ++i) line.push_back({0.2 + 0.6 * i / m, 0.31 + 0.37 * i / m});
  CloughTocherInterpolator ct(sites, line);
  std::vector<double> v(sites.size());
  for (auto& x : v) x = rng.normal();
  const auto out = ct.evaluate(v);
  double worst = 0;
  for (int i = 1; i < m; ++i) worst = std::max(worst, std::abs(out[i + 1] - 2 * out[i] + out[i - 1]));
  return worst;
}

TEST(CloughTocher, ContinuousGradientAcrossPatches) {
  // Random data along a line crossing many patches. With a C1 interpolant
  // the largest second difference shrinks like h^2; a gradient jump would
  // make it shrink only like h.
  const double coarse = max_second_difference(2000);
  const double fine = max_second_difference(4000);
  EXPECT_GT(coarse / fine, 3.5);
}

TEST(CloughTocher, FallsBackToNearestWhenTooFewSites) {
  // Collinear sites (and images) cannot be triangulated.
  const std::vector<Point2> sites = {{0.1, 0.5}, {0.6, 0.5}};
  const std::vector<Point2> targets = {{0.15, 0.1}, {0.55, 0.7}};
  CloughTocherInterpolator ct(sites, targets, 0.1);
  EXPECT_EQ(ct.fallback_count(), 2);
  EXPECT_EQ(ct.evaluate(std::vector<double>{1.0, 2.0}), (std::vector<double>{1.0, 2.0}));
}

TEST(PeriodicNearest, WrapsAround) {
  const std::vector<Point2> sites = {{0.05, 0.5}, {0.5, 0.5}};
  const std::vector<Point2> targets = {{0.97, 0.5}};
  EXPECT_EQ(periodic_nearest(sites, targets), std::vector<int>{0});
}

}  // namespace
}  // namespace dualobs::geometry
