#pragma once

#include <vector>

namespace geovit {

struct Point {
  double x = 0.0, y = 0.0;
};

/// Closed simple ring of at least 3 vertices (last edge wraps to the first).
using Polygon = std::vector<Point>;

/// Unsigned shoelace area. Throws on fewer than 3 vertices.
double polygon_area(const Polygon& poly);

/// Length of the closed boundary.
double polygon_perimeter(const Polygon& poly);

/// perimeter^2 / (4 pi area): 1 for a circle, larger for anything less
/// compact. Throws on a degenerate (zero-area) polygon.
double compactness(const Polygon& poly);

/// Counter-clockwise convex hull, collinear points dropped.
Polygon convex_hull(Polygon points);

struct GeometryStats {
  double area = 0.0;
  double length_major_axis = 0.0;
  double width_minor_axis = 0.0;
  double length_width_ratio = 0.0;
};

/// Area via shoelace; axes as the long and short sides of the minimum-area
/// bounding rectangle (found by sweeping hull-edge directions).
GeometryStats geometry_stats(const Polygon& poly);

}  // namespace geovit
