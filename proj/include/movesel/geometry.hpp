#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "movesel/rng.hpp"

namespace movesel {

// Planar coordinates in projected meters.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct BoundingBox {
  double xmin, ymin, xmax, ymax;
  double area() const noexcept { return (xmax - xmin) * (ymax - ymin); }
};

// Simple counterclockwise ring (closing vertex implicit).
class Polygon {
 public:
  Polygon() = default;
  // Validates >= 3 vertices, positive signed area and simplicity; throws
  // DegenerateInput otherwise.
  explicit Polygon(std::vector<Point> vertices);

  const std::vector<Point>& vertices() const noexcept { return vertices_; }
  std::size_t size() const noexcept { return vertices_.size(); }
  bool empty() const noexcept { return vertices_.empty(); }
  double area() const noexcept;
  Point centroid() const noexcept;
  BoundingBox bbox() const noexcept;

 private:
  std::vector<Point> vertices_;
};

double signed_area(std::span<const Point> ring) noexcept;

// Minimum convex polygon by monotone chain; collinear boundary points are
// dropped. buffer_m > 0 grows the hull by that distance (circles around each
// vertex approximated by 64-gons circumscribing the true circle).
// Throws DegenerateInput for < 3 distinct points or all collinear.
Polygon convex_hull(std::span<const Point> points, double buffer_m = 0.0);

// Ray crossing; points on the boundary count as inside.
bool point_in_polygon(const Polygon& poly, Point p) noexcept;

// Rejection sampler from the polygon's bounding box. Keeps a running count of
// proposals so callers can check the acceptance ratio.
class PolygonSampler {
 public:
  explicit PolygonSampler(const Polygon& poly);

  Point draw(Rng& rng);
  std::size_t proposals() const noexcept { return proposals_; }
  std::size_t accepted() const noexcept { return accepted_; }

 private:
  const Polygon* poly_;
  BoundingBox box_;
  std::size_t proposals_ = 0;
  std::size_t accepted_ = 0;
};

std::vector<Point> sample_uniform_in_polygon(const Polygon& poly, std::size_t n, Rng& rng);

}  // namespace movesel
