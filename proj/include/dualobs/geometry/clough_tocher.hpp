#pragma once

// C1 piecewise-cubic interpolation of scattered values on the periodic unit
// square (Clough-Tocher split of a Delaunay triangulation).
//
// Scheme, fixed so results are reproducible:
//  * Sites within `margin` of the boundary are replicated by +-1 shifts, and
//    the extended set is triangulated (insertion order: originals, then
//    images by shift (-1,-1), (-1,0), ..., (1,1)).
//  * Vertex gradients come from a weighted least-squares quadratic through
//    the vertex value, over its two-ring neighbours (weights 1/r^2).
//  * Each triangle is split at its centroid into three cubic Bezier patches;
//    the edge-interior control points make the cross-edge normal derivative
//    linear along every outer edge, and the inner ring follows from C1
//    continuity across the split edges.
// Targets outside the extended hull fall back to the periodic nearest site.

#include <array>
#include <span>
#include <vector>

#include "dualobs/geometry/delaunay.hpp"

namespace dualobs::geometry {

class CloughTocherInterpolator {
 public:
  /// `sites` in [0,1)^2; `targets` are the points the interpolant will be
  /// evaluated at (also in [0,1)^2).
  CloughTocherInterpolator(std::span<const Point2> sites, std::span<const Point2> targets,
                           double margin = -1.0);

  /// Values at the targets for one set of site values.
  std::vector<double> evaluate(std::span<const double> site_values) const;

  int fallback_count() const { return fallback_count_; }
  int extended_size() const { return static_cast<int>(ext_.size()); }
  const Triangulation& triangulation() const { return tri_; }

 private:
  struct Location {
    int triangle = -1;  // -1: nearest-site fallback
    std::array<double, 3> bary{};
    int nearest = -1;
  };

  std::vector<Point2> ext_;
  std::vector<int> owner_;  // extended vertex -> original site
  Triangulation tri_;
  // Gradient at each extended vertex as a linear map of the values of its
  // neighbours: grad = sum_k w[k] * (f[nbr[k]] - f[self]).
  std::vector<std::vector<int>> grad_nbr_;
  std::vector<std::vector<std::array<double, 2>>> grad_w_;
  std::vector<Location> targets_;
  int sites_ = 0;
  int fallback_count_ = 0;
};

/// Periodic nearest site for each target (ties to the lowest site index).
std::vector<int> periodic_nearest(std::span<const Point2> sites, std::span<const Point2> targets);

}  // namespace dualobs::geometry
