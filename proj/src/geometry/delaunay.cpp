#include "dualobs/geometry/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>

namespace dualobs::geometry {
namespace {

using i64 = std::int64_t;
using i128 = __int128;

constexpr double kLattice = 67108864.0;  // 2^26
constexpr int kGhost = -1;

struct IPoint {
  i64 x, y;
};

IPoint snap(const Point2& p) {
  if (!(std::abs(p.x) < 16.0 && std::abs(p.y) < 16.0))
    throw DegenerateInputError("delaunay: coordinates must be finite with magnitude < 16");
  return {static_cast<i64>(std::llround(p.x * kLattice)), static_cast<i64>(std::llround(p.y * kLattice))};
}

int sign(i128 v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

int orient(const IPoint& a, const IPoint& b, const IPoint& c) {
  const i128 det = static_cast<i128>(b.x - a.x) * (c.y - a.y) - static_cast<i128>(b.y - a.y) * (c.x - a.x);
  return sign(det);
}

// > 0 when d is strictly inside the circumcircle of counter-clockwise (a, b, c).
int incircle(const IPoint& a, const IPoint& b, const IPoint& c, const IPoint& d) {
  const i128 adx = a.x - d.x, ady = a.y - d.y;
  const i128 bdx = b.x - d.x, bdy = b.y - d.y;
  const i128 cdx = c.x - d.x, cdy = c.y - d.y;
  const i128 alift = adx * adx + ady * ady;
  const i128 blift = bdx * bdx + bdy * bdy;
  const i128 clift = cdx * cdx + cdy * cdy;
  const i128 det = alift * (bdx * cdy - bdy * cdx) - blift * (adx * cdy - ady * cdx) +
                   clift * (adx * bdy - ady * bdx);
  return sign(det);
}

// Whether p lies strictly between a and b on their common line.
bool strictly_between(const IPoint& a, const IPoint& b, const IPoint& p) {
  const i128 dot = static_cast<i128>(p.x - a.x) * (b.x - a.x) + static_cast<i128>(p.y - a.y) * (b.y - a.y);
  const i128 len = static_cast<i128>(b.x - a.x) * (b.x - a.x) + static_cast<i128>(b.y - a.y) * (b.y - a.y);
  return dot > 0 && dot < len;
}

using Tri = std::array<int, 3>;  // ghost triangles keep kGhost in slot 2

class Builder {
 public:
  explicit Builder(std::vector<IPoint> pts) : p_(std::move(pts)) {}

  Triangulation run() {
    const int n = static_cast<int>(p_.size());
    if (n < 3) throw DegenerateInputError("delaunay: need at least 3 points, got " + std::to_string(n));
    check_duplicates();
    int third = -1;
    for (int k = 2; k < n && third < 0; ++k)
      if (orient(p_[0], p_[1], p_[k]) != 0) third = k;
    if (third < 0) throw DegenerateInputError("delaunay: all points are collinear");

    int a = 0, b = 1, c = third;
    if (orient(p_[a], p_[b], p_[c]) < 0) std::swap(b, c);
    tris_ = {{a, b, c}, {b, a, kGhost}, {c, b, kGhost}, {a, c, kGhost}};
    for (int k = 2; k < n; ++k)
      if (k != third) insert(k);

    Triangulation out;
    for (const auto& t : tris_)
      if (t[2] != kGhost) out.triangles.push_back(t);
    std::sort(out.triangles.begin(), out.triangles.end());
    return out;
  }

 private:
  void check_duplicates() const {
    std::vector<std::pair<std::pair<i64, i64>, int>> keys;
    for (int i = 0; i < static_cast<int>(p_.size()); ++i) keys.push_back({{p_[i].x, p_[i].y}, i});
    std::sort(keys.begin(), keys.end());
    for (std::size_t i = 1; i < keys.size(); ++i)
      if (keys[i].first == keys[i - 1].first)
        throw DegenerateInputError("delaunay: duplicate points " + std::to_string(keys[i - 1].second) +
                                   " and " + std::to_string(keys[i].second));
  }

  bool conflicts(const Tri& t, const IPoint& q) const {
    if (t[2] != kGhost) return incircle(p_[t[0]], p_[t[1]], p_[t[2]], q) > 0;
    // Ghost (u, v) covers the open half-plane left of u -> v plus the open
    // segment uv itself.
    const int o = orient(p_[t[0]], p_[t[1]], q);
    return o > 0 || (o == 0 && strictly_between(p_[t[0]], p_[t[1]], q));
  }

  void insert(int k) {
    const IPoint& q = p_[k];
    std::vector<Tri> keep;
    std::map<std::pair<int, int>, int> boundary;  // directed edge -> count
    keep.reserve(tris_.size() + 4);
    for (const auto& t : tris_) {
      if (!conflicts(t, q)) {
        keep.push_back(t);
        continue;
      }
      for (int e = 0; e < 3; ++e) {
        const std::pair<int, int> edge{t[e], t[(e + 1) % 3]};
        const std::pair<int, int> twin{edge.second, edge.first};
        if (auto it = boundary.find(twin); it != boundary.end())
          boundary.erase(it);
        else
          boundary.emplace(edge, 1);
      }
    }
    for (const auto& [edge, count] : boundary) {
      (void)count;
      const auto [u, v] = edge;
      if (u == kGhost)
        keep.push_back({v, k, kGhost});
      else if (v == kGhost)
        keep.push_back({k, u, kGhost});
      else
        keep.push_back({u, v, k});
    }
    tris_ = std::move(keep);
  }

  std::vector<IPoint> p_;
  std::vector<Tri> tris_;
};

}  // namespace

std::vector<std::pair<int, int>> Triangulation::undirected_edges() const {
  std::vector<std::pair<int, int>> e;
  e.reserve(triangles.size() * 3);
  for (const auto& t : triangles)
    for (int i = 0; i < 3; ++i) {
      int a = t[i], b = t[(i + 1) % 3];
      if (a > b) std::swap(a, b);
      e.emplace_back(a, b);
    }
  std::sort(e.begin(), e.end());
  e.erase(std::unique(e.begin(), e.end()), e.end());
  return e;
}

Triangulation delaunay(std::span<const Point2> points) {
  std::vector<IPoint> snapped;
  snapped.reserve(points.size());
  for (const auto& p : points) snapped.push_back(snap(p));
  return Builder(std::move(snapped)).run();
}

std::vector<std::pair<int, int>> delaunay_edges(std::span<const Point2> points) {
  std::vector<std::pair<int, int>> out;
  for (const auto& [i, j] : delaunay(points).undirected_edges()) {
    out.emplace_back(i, j);
    out.emplace_back(j, i);
  }
  return out;
}

int orientation(const Point2& a, const Point2& b, const Point2& c) {
  return orient(snap(a), snap(b), snap(c));
}

}  // namespace dualobs::geometry
