#include "dualobs/geometry/clough_tocher.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

namespace dualobs::geometry {
namespace {

double periodic_delta(double d) { return d - std::round(d); }

double sq(double v) { return v * v; }

// Cubic Bezier patch on sub-triangle (Pi, Pj, C) in barycentrics (u, v, w).
double bezier(const std::array<double, 10>& b, double u, double v, double w) {
  // order: 300 030 003 210 120 201 021 102 012 111
  return b[0] * u * u * u + b[1] * v * v * v + b[2] * w * w * w +
         3.0 * (b[3] * u * u * v + b[4] * u * v * v + b[5] * u * u * w + b[6] * v * v * w +
                b[7] * u * w * w + b[8] * v * w * w) +
         6.0 * b[9] * u * v * w;
}

}  // namespace

std::vector<int> periodic_nearest(std::span<const Point2> sites, std::span<const Point2> targets) {
  std::vector<int> out(targets.size(), -1);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < sites.size(); ++s) {
      const double d = sq(periodic_delta(sites[s].x - targets[t].x)) +
                       sq(periodic_delta(sites[s].y - targets[t].y));
      if (d < best) {
        best = d;
        out[t] = static_cast<int>(s);
      }
    }
  }
  return out;
}

CloughTocherInterpolator::CloughTocherInterpolator(std::span<const Point2> sites,
                                                   std::span<const Point2> targets, double margin)
    : sites_(static_cast<int>(sites.size())) {
  if (sites.empty()) throw DegenerateInputError("clough-tocher: no sites");
  if (margin < 0.0)
    margin = std::min(0.5, std::max(0.1, 3.0 / std::sqrt(static_cast<double>(sites.size()))));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    ext_.push_back(sites[i]);
    owner_.push_back(static_cast<int>(i));
  }
  for (int sx = -1; sx <= 1; ++sx)
    for (int sy = -1; sy <= 1; ++sy) {
      if (sx == 0 && sy == 0) continue;
      for (std::size_t i = 0; i < sites.size(); ++i) {
        const Point2 p{sites[i].x + sx, sites[i].y + sy};
        if (p.x > -margin && p.x < 1.0 + margin && p.y > -margin && p.y < 1.0 + margin) {
          ext_.push_back(p);
          owner_.push_back(static_cast<int>(i));
        }
      }
    }

  const std::vector<int> nearest = periodic_nearest(sites, targets);
  bool triangulated = false;
  try {
    tri_ = delaunay(ext_);
    triangulated = true;
  } catch (const DegenerateInputError&) {
    triangulated = false;
  }

  if (triangulated) {
    const int n = static_cast<int>(ext_.size());
    std::vector<std::set<int>> ring(static_cast<std::size_t>(n));
    for (const auto& [a, b] : tri_.undirected_edges()) {
      ring[a].insert(b);
      ring[b].insert(a);
    }
    grad_nbr_.resize(static_cast<std::size_t>(n));
    grad_w_.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::set<int> two = ring[i];
      for (int j : ring[i]) two.insert(ring[j].begin(), ring[j].end());
      two.erase(i);
      std::vector<int> nb(two.begin(), two.end());
      // Quadratic fit first; fall back to linear when underdetermined.
      for (int cols : {5, 2}) {
        if (static_cast<int>(nb.size()) < cols) continue;
        Eigen::MatrixXd A(nb.size(), cols);
        Eigen::VectorXd w(nb.size());
        for (std::size_t k = 0; k < nb.size(); ++k) {
          const double dx = ext_[nb[k]].x - ext_[i].x, dy = ext_[nb[k]].y - ext_[i].y;
          w[k] = 1.0 / (dx * dx + dy * dy);
          A(k, 0) = dx;
          A(k, 1) = dy;
          if (cols == 5) {
            A(k, 2) = 0.5 * dx * dx;
            A(k, 3) = dx * dy;
            A(k, 4) = 0.5 * dy * dy;
          }
        }
        // Weighted least squares: rows scaled by sqrt(w); the solution is
        // linear in the right-hand side, so keep the map pinv(WA) W^(1/2).
        const Eigen::VectorXd sw = w.array().sqrt();
        const Eigen::MatrixXd WA = sw.asDiagonal() * A;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(WA);
        if (qr.rank() < cols) continue;
        const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd::Identity(nb.size(), nb.size()));
        grad_nbr_[i] = nb;
        grad_w_[i].resize(nb.size());
        for (std::size_t k = 0; k < nb.size(); ++k)
          grad_w_[i][k] = {pinv(0, static_cast<Eigen::Index>(k)) * sw[k],
                           pinv(1, static_cast<Eigen::Index>(k)) * sw[k]};
        break;
      }
    }
  }

  targets_.resize(targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    Location& loc = targets_[t];
    loc.nearest = nearest[t];
    if (!triangulated) {
      ++fallback_count_;
      continue;
    }
    const Point2& q = targets[t];
    for (std::size_t k = 0; k < tri_.triangles.size(); ++k) {
      const auto& tr = tri_.triangles[k];
      const Point2 &a = ext_[tr[0]], &b = ext_[tr[1]], &c = ext_[tr[2]];
      if (orientation(a, b, q) < 0 || orientation(b, c, q) < 0 || orientation(c, a, q) < 0) continue;
      const double det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
      const double l1 = ((q.x - a.x) * (c.y - a.y) - (q.y - a.y) * (c.x - a.x)) / det;
      const double l2 = ((b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x)) / det;
      loc.triangle = static_cast<int>(k);
      loc.bary = {1.0 - l1 - l2, l1, l2};
      break;
    }
    if (loc.triangle < 0) ++fallback_count_;
  }
}

std::vector<double> CloughTocherInterpolator::evaluate(std::span<const double> site_values) const {
  if (static_cast<int>(site_values.size()) != sites_)
    throw std::invalid_argument("clough-tocher: expected " + std::to_string(sites_) + " values");
  const std::size_t n = ext_.size();
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = site_values[static_cast<std::size_t>(owner_[i])];
  std::vector<std::array<double, 2>> g(n, {0.0, 0.0});
  for (std::size_t i = 0; i < grad_nbr_.size(); ++i)
    for (std::size_t k = 0; k < grad_nbr_[i].size(); ++k) {
      const double df = f[static_cast<std::size_t>(grad_nbr_[i][k])] - f[i];
      g[i][0] += grad_w_[i][k][0] * df;
      g[i][1] += grad_w_[i][k][1] * df;
    }

  std::vector<double> out(targets_.size());
  for (std::size_t t = 0; t < targets_.size(); ++t) {
    const Location& loc = targets_[t];
    if (loc.triangle < 0) {
      out[t] = site_values[static_cast<std::size_t>(loc.nearest)];
      continue;
    }
    const auto& tr = tri_.triangles[static_cast<std::size_t>(loc.triangle)];
    std::array<Point2, 3> P;
    std::array<double, 3> F;
    std::array<std::array<double, 2>, 3> G;
    for (int i = 0; i < 3; ++i) {
      P[i] = ext_[tr[i]];
      F[i] = f[tr[i]];
      G[i] = g[tr[i]];
    }
    const Point2 C{(P[0].x + P[1].x + P[2].x) / 3.0, (P[0].y + P[1].y + P[2].y) / 3.0};
    auto along = [&](int i, const Point2& to) {
      return F[i] + ((to.x - P[i].x) * G[i][0] + (to.y - P[i].y) * G[i][1]) / 3.0;
    };
    // a[i]: control point on segment Pi-C next to Pi; e[i][j]: on edge Pi-Pj next to Pi.
    std::array<double, 3> a;
    std::array<std::array<double, 3>, 3> e{};
    for (int i = 0; i < 3; ++i) {
      a[i] = along(i, C);
      for (int j = 0; j < 3; ++j)
        if (j != i) e[i][j] = along(i, P[j]);
    }
    // m[i]: edge-interior point of sub-triangle (Pi, Pi+1, C).
    std::array<double, 3> m;
    for (int i = 0; i < 3; ++i) {
      const int j = (i + 1) % 3;
      const double ex = P[j].x - P[i].x, ey = P[j].y - P[i].y;
      const double tau = ((C.x - P[i].x) * ex + (C.y - P[i].y) * ey) / (ex * ex + ey * ey);
      // Derivative along (C - Pi) - tau (Pj - Pi), normal to the edge, has
      // Bernstein coefficients d0, d1, d2; requiring d1 = (d0 + d2) / 2
      // makes it linear along the edge.
      const double d0 = (tau - 1.0) * F[i] - tau * e[i][j] + a[i];
      const double d2 = (tau - 1.0) * e[j][i] - tau * F[j] + a[j];
      m[i] = 0.5 * (d0 + d2) - (tau - 1.0) * e[i][j] + tau * e[j][i];
    }
    // Inner ring and centre from C1 continuity across the split edges.
    std::array<double, 3> c;
    for (int i = 0; i < 3; ++i) c[i] = (a[i] + m[i] + m[(i + 2) % 3]) / 3.0;
    const double center = (c[0] + c[1] + c[2]) / 3.0;

    const auto& l = loc.bary;
    int k = 0;  // vertex opposite the sub-triangle containing the point
    if (l[1] < l[k]) k = 1;
    if (l[2] < l[k]) k = 2;
    const int i = (k + 1) % 3, j = (k + 2) % 3;
    const double u = l[i] - l[k], v = l[j] - l[k], w = 3.0 * l[k];
    const std::array<double, 10> b = {F[i], F[j], center, e[i][j], e[j][i], a[i], a[j], c[i], c[j], m[i]};
    out[t] = bezier(b, u, v, w);
  }
  return out;
}

}  // namespace dualobs::geometry
