#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "movesel/error.hpp"
#include "movesel/geometry.hpp"
#include "movesel/io.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "test_support.hpp"

using namespace movesel;

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Area of the hull from every directed pair (i, j) with all points on or left
// of the line i -> j. Collinear chains contribute the same total either way.
double brute_force_hull_area(const std::vector<Point>& pts) {
  double twice = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      bool edge = true;
      for (std::size_t k = 0; k < pts.size() && edge; ++k) {
        if (k == i || k == j) continue;
        if (cross(pts[i], pts[j], pts[k]) < 0.0) edge = false;
      }
      if (edge) twice += pts[i].x * pts[j].y - pts[j].x * pts[i].y;
    }
  }
  return 0.5 * twice;
}

int winding_number(const Polygon& poly, Point p) {
  const auto& v = poly.vertices();
  int wn = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % v.size()];
    if (a.y <= p.y) {
      if (b.y > p.y && cross(a, b, p) > 0.0) ++wn;
    } else if (b.y <= p.y && cross(a, b, p) < 0.0) {
      --wn;
    }
  }
  return wn;
}

RasterGrid random_grid(std::size_t ncols, std::size_t nrows, Rng& rng) {
  RasterGrid g = RasterGrid::filled(ncols, nrows, 1000.5, -250.25, 30.0, 0.0);
  for (double& v : g.values) v = rng.normal() * 100.0;
  g.values[3] = g.nodata;
  return g;
}

}  // namespace

TEST_SUITE("raster") {
  TEST_CASE("parse a 2x2 grid") {
    const std::string text =
        "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
    const RasterGrid g = parse_ascii_grid(text);
    CHECK(g.ncols == 2);
    CHECK(g.nrows == 2);
    CHECK(g.xll == 0.0);
    CHECK(g.yll == 0.0);
    CHECK(g.cellsize == 1.0);
    CHECK(g.nodata == -9999.0);
    CHECK(g.values == std::vector<double>{1, 2, 3, 4});
    // Row 0 is the northern row.
    CHECK(g.cell_center(0, 0) == Point{0.5, 1.5});
    CHECK(g.cell_center(1, 1) == Point{1.5, 0.5});
  }

  TEST_CASE("header keys are case-insensitive") {
    const std::string text =
        "NCOLS 1\nNRows 1\nXLLCORNER 5\nYllCorner 6\nCELLSIZE 2\nnodata_value -1\n  7  \n";
    const RasterGrid g = parse_ascii_grid(text);
    CHECK(g.xll == 5.0);
    CHECK(g.values == std::vector<double>{7});
  }

  TEST_CASE("wrong value count is a ParseError") {
    const std::string text =
        "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n6 7 8\n";
    try {
      parse_ascii_grid(text);
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseError);
      CHECK(e.line() > 0);
    }
  }

  TEST_CASE("malformed header is a ParseError with its line") {
    const std::string text = "ncols 2\nnrows two\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";
    try {
      parse_ascii_grid(text);
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseError);
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("non-positive cellsize rejected") {
    const std::string text = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 0\nNODATA_value -9999\n1\n";
    CHECK_THROWS_AS(parse_ascii_grid(text), Error);
  }

  TEST_CASE("write then read round trip is exact") {
    Rng rng(4);
    const RasterGrid g = random_grid(50, 40, rng);
    const auto dir = testsupport::fresh_dir("geodata_roundtrip");
    write_ascii_grid(g, dir / "a.asc");
    const RasterGrid r = read_ascii_grid(dir / "a.asc");
    CHECK(r.ncols == g.ncols);
    CHECK(r.nrows == g.nrows);
    CHECK(r.xll == g.xll);
    CHECK(r.yll == g.yll);
    CHECK(r.cellsize == g.cellsize);
    CHECK(r.nodata == g.nodata);
    CHECK(r.values == g.values);
    write_ascii_grid(r, dir / "b.asc");
    CHECK(read_text_file(dir / "a.asc") == read_text_file(dir / "b.asc"));
  }

  TEST_CASE("missing file is an IoError") {
    try {
      read_ascii_grid("/nonexistent/dir/grid.asc");
      FAIL("expected IoError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::IoError);
    }
  }
}

TEST_SUITE("extraction") {
  TEST_CASE("cell center returns that cell") {
    Rng rng(8);
    CovariateStack stack;
    stack.add("a", random_grid(7, 5, rng));
    const RasterGrid& g = stack.grid(0);
    const Extraction e = stack.extract(g.cell_center(0, 0));
    CHECK(e.values[0] == g.at(0, 0));
  }

  TEST_CASE("1 mm outside the extent") {
    CovariateStack stack;
    stack.add("a", RasterGrid::filled(4, 4, 0.0, 0.0, 10.0, 1.0));
    try {
      stack.extract(Point{40.001, 5.0});
      FAIL("expected OutOfExtent");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::OutOfExtent);
    }
    CHECK_THROWS_AS(stack.extract(Point{5.0, -0.001}), Error);
    CHECK_NOTHROW(stack.extract(Point{40.0, 40.0}));
  }

  TEST_CASE("mismatched grids") {
    CovariateStack stack;
    stack.add("a", RasterGrid::filled(4, 4, 0.0, 0.0, 10.0, 1.0));
    try {
      stack.add("b", RasterGrid::filled(4, 4, 0.0, 0.0, 11.0, 1.0));
      FAIL("expected ExtentMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ExtentMismatch);
    }
  }

  TEST_CASE("nodata is flagged as missing") {
    CovariateStack stack;
    RasterGrid g = RasterGrid::filled(2, 2, 0.0, 0.0, 1.0, 3.0);
    g.at(1, 0) = g.nodata;
    stack.add("a", g);
    CHECK(stack.extract(Point{0.5, 0.5}).missing(0));
    CHECK_FALSE(stack.extract(Point{1.5, 0.5}).missing(0));
    CHECK_FALSE(stack.extract_complete(Point{0.5, 0.5}).has_value());
  }

  TEST_CASE("random points agree with a brute-force rectangle scan") {
    Rng rng(21);
    CovariateStack stack;
    stack.add("a", random_grid(13, 9, rng));
    stack.add("b", random_grid(13, 9, rng));
    const RasterGrid& g = stack.grid(0);
    for (int i = 0; i < 1000; ++i) {
      const Point p{rng.uniform(g.xll, g.xmax()), rng.uniform(g.yll, g.ymax())};
      std::size_t found = g.size();
      for (std::size_t r = 0; r < g.nrows && found == g.size(); ++r) {
        for (std::size_t c = 0; c < g.ncols; ++c) {
          const double x0 = g.xll + c * g.cellsize;
          const double y0 = g.yll + (g.nrows - r - 1) * g.cellsize;
          if (p.x >= x0 && p.x < x0 + g.cellsize && p.y >= y0 && p.y < y0 + g.cellsize) {
            found = r * g.ncols + c;
            break;
          }
        }
      }
      REQUIRE(found < g.size());
      const Extraction e = stack.extract(p);
      for (std::size_t k = 0; k < 2; ++k) {
        const double expect = stack.grid(k).values[found];
        if (stack.grid(k).is_nodata(expect)) {
          CHECK(e.missing(k));
        } else {
          CHECK(e.values[k] == expect);
        }
      }
    }
  }

  TEST_CASE("constant grid extracts the constant everywhere") {
    Rng rng(2);
    CovariateStack stack;
    stack.add("c", RasterGrid::filled(17, 11, -300.0, 200.0, 25.0, 2.75));
    for (int i = 0; i < 1000; ++i) {
      const Point p{rng.uniform(-300.0, -300.0 + 17 * 25.0), rng.uniform(200.0, 200.0 + 11 * 25.0)};
      CHECK(stack.extract(p).values[0] == 2.75);
    }
  }
}

TEST_SUITE("geometry") {
  TEST_CASE("unit square plus center") {
    const std::vector<Point> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}};
    const Polygon hull = convex_hull(pts);
    CHECK(hull.size() == 4);
    CHECK(hull.area() == doctest::Approx(1.0));
    CHECK(signed_area(hull.vertices()) > 0.0);
  }

  TEST_CASE("collinear input is degenerate") {
    const std::vector<Point> pts{{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 4}};
    try {
      convex_hull(pts);
      FAIL("expected DegenerateInput");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DegenerateInput);
    }
    const std::vector<Point> dup{{1, 1}, {1, 1}, {2, 0}};
    CHECK_THROWS_AS(convex_hull(dup), Error);
  }

  TEST_CASE("collinear boundary points are dropped") {
    const std::vector<Point> pts{{0, 0}, {1, 0}, {2, 0}, {2, 2}, {1, 2}, {0, 2}, {0, 1}};
    CHECK(convex_hull(pts).size() == 4);
  }

  TEST_CASE("random hulls: containment and brute-force area") {
    Rng rng(31);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<Point> pts;
      for (int i = 0; i < 200; ++i) pts.push_back({rng.uniform(-50.0, 50.0), rng.normal() * 20.0});
      const Polygon hull = convex_hull(pts);
      for (const Point& p : pts) CHECK(point_in_polygon(hull, p));
      CHECK(hull.area() == doctest::Approx(brute_force_hull_area(pts)).epsilon(1e-12));
      CHECK(std::abs(hull.area() - brute_force_hull_area(pts)) < 1e-9);

      // No point strictly outside any edge.
      const auto& v = hull.vertices();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const Point a = v[i];
        const Point b = v[(i + 1) % v.size()];
        const double len = std::hypot(b.x - a.x, b.y - a.y);
        for (const Point& p : pts) CHECK(cross(a, b, p) / len >= -1e-9);
      }

      // Idempotence.
      const Polygon again = convex_hull(hull.vertices());
      CHECK(again.vertices() == hull.vertices());
    }
  }

  TEST_CASE("buffered hull contains the buffer disc") {
    const std::vector<Point> pts{{0, 0}, {10, 0}, {0, 10}};
    const Polygon hull = convex_hull(pts, 2.0);
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
      const double a = rng.uniform(0.0, 6.283185307179586);
      const Point p{10.0 + 2.0 * std::cos(a), 2.0 * std::sin(a)};
      CHECK(point_in_polygon(hull, p));
    }
    CHECK(hull.area() > 50.0 + 30.0 * 2.0);
  }

  TEST_CASE("point in polygon basics") {
    const Polygon tri({{0, 0}, {4, 0}, {0, 3}});
    CHECK(point_in_polygon(tri, tri.centroid()));
    CHECK_FALSE(point_in_polygon(tri, Point{5, 5}));
    CHECK(point_in_polygon(tri, Point{2, 0}));
    CHECK(point_in_polygon(tri, Point{0, 0}));
  }

  TEST_CASE("invalid polygons rejected") {
    CHECK_THROWS_AS(Polygon({{0, 0}, {1, 0}}), Error);
    CHECK_THROWS_AS(Polygon({{0, 0}, {0, 1}, {1, 0}}), Error);  // clockwise
    CHECK_THROWS_AS(Polygon({{0, 0}, {2, 2}, {2, 0}, {0, 2}}), Error);  // bow tie
  }

  TEST_CASE("ray crossing agrees with a winding-number oracle") {
    const Polygon star({{0, 0}, {4, -1}, {3, 1}, {6, 2}, {3, 3}, {2, 6}, {1, 3}, {-2, 2}, {1, 1}});
    Rng rng(17);
    for (int i = 0; i < 1000; ++i) {
      const Point p{rng.uniform(-3.0, 7.0), rng.uniform(-2.0, 7.0)};
      CHECK(point_in_polygon(star, p) == (winding_number(star, p) != 0));
    }
  }

  TEST_CASE("uniform sampling in the unit square") {
    const Polygon sq({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
    Rng rng(5);
    const auto pts = sample_uniform_in_polygon(sq, 100000, rng);
    int left = 0;
    for (const Point& p : pts) left += p.x < 0.5;
    CHECK(std::abs(left / 100000.0 - 0.5) < 0.01);
  }

  TEST_CASE("sample centroid and acceptance ratio on a triangle") {
    const Polygon tri({{0, 0}, {3, 0}, {0, 2}});
    Rng rng(6);
    PolygonSampler sampler(tri);
    double sx = 0.0;
    double sy = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const Point p = sampler.draw(rng);
      CHECK(point_in_polygon(tri, p));
      sx += p.x;
      sy += p.y;
    }
    CHECK(std::abs(sx / n - 1.0) < 0.01);
    CHECK(std::abs(sy / n - 2.0 / 3.0) < 0.01);
    const double ratio = static_cast<double>(sampler.accepted()) / sampler.proposals();
    CHECK(std::abs(ratio - tri.area() / tri.bbox().area()) < 0.01);
  }
}
