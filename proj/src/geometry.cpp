#include "movesel/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "movesel/error.hpp"

namespace movesel {

namespace {

double cross(Point o, Point a, Point b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(Point a, Point b, Point p) noexcept {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const double scale = std::max({1.0, std::fabs(a.x), std::fabs(a.y), std::fabs(b.x), std::fabs(b.y)});
  if (std::fabs(cross(a, b, p)) > 1e-12 * scale * std::max(len, 1.0)) return false;
  const double eps = 1e-12 * scale;
  return p.x >= std::min(a.x, b.x) - eps && p.x <= std::max(a.x, b.x) + eps &&
         p.y >= std::min(a.y, b.y) - eps && p.y <= std::max(a.y, b.y) + eps;
}

bool segments_properly_intersect(Point a, Point b, Point c, Point d) noexcept {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

std::vector<Point> monotone_chain(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) {
    throw Error(ErrorKind::DegenerateInput, "convex hull needs at least 3 distinct points");
  }
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    const Point& p = pts[i];
    while (k >= lower && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  if (hull.size() < 3) {
    throw Error(ErrorKind::DegenerateInput, "all points are collinear");
  }
  return hull;
}

}  // namespace

double signed_area(std::span<const Point> ring) noexcept {
  double acc = 0.0;
  for (std::size_t i = 0, n = ring.size(); i < n; ++i) {
    const Point& a = ring[i];
    const Point& b = ring[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * acc;
}

Polygon::Polygon(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
  const std::size_t n = vertices_.size();
  if (n < 3) throw Error(ErrorKind::DegenerateInput, "polygon needs at least 3 vertices");
  if (!(signed_area(vertices_) > 0.0)) {
    throw Error(ErrorKind::DegenerateInput, "polygon must be counterclockwise with positive area");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_properly_intersect(vertices_[i], vertices_[(i + 1) % n], vertices_[j],
                                      vertices_[(j + 1) % n])) {
        throw Error(ErrorKind::DegenerateInput, "polygon is self-intersecting");
      }
    }
  }
}

double Polygon::area() const noexcept { return signed_area(vertices_); }

Point Polygon::centroid() const noexcept {
  double cx = 0.0;
  double cy = 0.0;
  const std::size_t n = vertices_.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = vertices_[i];
    const Point& b = vertices_[(i + 1) % n];
    const double w = a.x * b.y - b.x * a.y;
    cx += (a.x + b.x) * w;
    cy += (a.y + b.y) * w;
  }
  const double a6 = 6.0 * area();
  return {cx / a6, cy / a6};
}

BoundingBox Polygon::bbox() const noexcept {
  BoundingBox box{vertices_.front().x, vertices_.front().y, vertices_.front().x, vertices_.front().y};
  for (const Point& p : vertices_) {
    box.xmin = std::min(box.xmin, p.x);
    box.xmax = std::max(box.xmax, p.x);
    box.ymin = std::min(box.ymin, p.y);
    box.ymax = std::max(box.ymax, p.y);
  }
  return box;
}

Polygon convex_hull(std::span<const Point> points, double buffer_m) {
  std::vector<Point> hull = monotone_chain(std::vector<Point>(points.begin(), points.end()));
  if (buffer_m > 0.0) {
    constexpr int kSides = 64;
    const double r = buffer_m / std::cos(std::numbers::pi / kSides);
    std::vector<Point> grown;
    grown.reserve(hull.size() * kSides);
    for (const Point& v : hull) {
      for (int k = 0; k < kSides; ++k) {
        const double a = 2.0 * std::numbers::pi * k / kSides;
        grown.push_back({v.x + r * std::cos(a), v.y + r * std::sin(a)});
      }
    }
    hull = monotone_chain(std::move(grown));
  }
  return Polygon(std::move(hull));
}

bool point_in_polygon(const Polygon& poly, Point p) noexcept {
  const auto& v = poly.vertices();
  const std::size_t n = v.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point& a = v[i];
    const Point& b = v[j];
    if (on_segment(a, b, p)) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

PolygonSampler::PolygonSampler(const Polygon& poly) : poly_(&poly), box_(poly.bbox()) {}

Point PolygonSampler::draw(Rng& rng) {
  for (;;) {
    ++proposals_;
    const Point p{rng.uniform(box_.xmin, box_.xmax), rng.uniform(box_.ymin, box_.ymax)};
    if (point_in_polygon(*poly_, p)) {
      ++accepted_;
      return p;
    }
  }
}

std::vector<Point> sample_uniform_in_polygon(const Polygon& poly, std::size_t n, Rng& rng) {
  PolygonSampler sampler(poly);
  std::vector<Point> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sampler.draw(rng));
  return out;
}

}  // namespace movesel
