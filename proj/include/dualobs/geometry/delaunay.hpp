#pragma once

// Delaunay triangulation of planar point sets.
//
// Incremental Bowyer-Watson with ghost triangles for the hull. Coordinates
// are snapped to a 2^-26 lattice and all predicates are evaluated exactly in
// 128-bit integer arithmetic, so the result depends only on the input (and
// its order), never on rounding.
//
// Points are inserted in index order and the in-circle test is strict: a
// point lying exactly on an existing circumcircle does not break that
// triangle. For co-circular configurations the edge between the
// earlier-inserted points is therefore the one that is kept.

#include <array>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dualobs::geometry {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Triangulation {
  std::vector<std::array<int, 3>> triangles;  // counter-clockwise vertex indices

  /// Undirected edges (i < j), sorted lexicographically.
  std::vector<std::pair<int, int>> undirected_edges() const;
};

/// Throws DegenerateInputError for fewer than 3 points, duplicate points,
/// or all-collinear input. Coordinates must satisfy |x|, |y| < 16.
Triangulation delaunay(std::span<const Point2> points);

/// Delaunay edges emitted in both directions: for each undirected edge
/// (i < j) in lexicographic order, (i, j) followed by (j, i).
std::vector<std::pair<int, int>> delaunay_edges(std::span<const Point2> points);

/// Exact sign of the orientation of (a, b, c) on the snapping lattice:
/// +1 counter-clockwise, -1 clockwise, 0 collinear.
int orientation(const Point2& a, const Point2& b, const Point2& c);

}  // namespace dualobs::geometry
