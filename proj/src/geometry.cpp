#include "geovit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace geovit {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

void require_ring(const Polygon& poly, const char* op) {
  if (poly.size() < 3) throw std::invalid_argument(std::string(op) + ": a polygon needs at least 3 vertices");
}

double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

double polygon_area(const Polygon& poly) {
  require_ring(poly, "polygon_area");
  double twice = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return std::abs(twice) * 0.5;
}

double polygon_perimeter(const Polygon& poly) {
  require_ring(poly, "polygon_perimeter");
  double len = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % poly.size()];
    len += std::hypot(b.x - a.x, b.y - a.y);
  }
  return len;
}

double compactness(const Polygon& poly) {
  const double area = polygon_area(poly);
  if (area <= 0.0) throw std::invalid_argument("compactness: degenerate polygon with zero area");
  const double p = polygon_perimeter(poly);
  return p * p / (4.0 * kPi * area);
}

Polygon convex_hull(Polygon pts) {
  if (pts.size() < 3) throw std::invalid_argument("convex_hull: need at least 3 points");
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) throw std::invalid_argument("convex_hull: points are coincident");
  std::vector<Point> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {  // lower chain
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = n - 1, lower = k + 1; i-- > 0;) {  // upper chain
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);  // last point repeats the first
  if (hull.size() < 3) throw std::invalid_argument("convex_hull: points are collinear");
  return hull;
}

GeometryStats geometry_stats(const Polygon& poly) {
  GeometryStats out;
  out.area = polygon_area(poly);
  if (out.area <= 0.0) throw std::invalid_argument("geometry_stats: degenerate polygon with zero area");

  const Polygon hull = convex_hull(poly);
  double best_area = std::numeric_limits<double>::infinity();
  double best_long = 0.0, best_short = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Point& a = hull[i];
    const Point& b = hull[(i + 1) % hull.size()];
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    if (len == 0.0) continue;
    const double ux = (b.x - a.x) / len, uy = (b.y - a.y) / len;
    double lo_u = std::numeric_limits<double>::infinity(), hi_u = -lo_u;
    double lo_v = lo_u, hi_v = -lo_u;
    for (const Point& p : hull) {
      const double u = p.x * ux + p.y * uy;
      const double v = -p.x * uy + p.y * ux;
      lo_u = std::min(lo_u, u);
      hi_u = std::max(hi_u, u);
      lo_v = std::min(lo_v, v);
      hi_v = std::max(hi_v, v);
    }
    const double du = hi_u - lo_u, dv = hi_v - lo_v;
    const double rect = du * dv;
    if (rect < best_area) {
      best_area = rect;
      best_long = std::max(du, dv);
      best_short = std::min(du, dv);
    }
  }
  out.length_major_axis = best_long;
  out.width_minor_axis = best_short;
  out.length_width_ratio = best_short > 0.0 ? best_long / best_short : 0.0;
  return out;
}

}  // namespace geovit
