#include "doctest.h"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "movesel/error.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/track.hpp"
#include "test_support.hpp"

using namespace movesel;

namespace {

Track make_track(std::vector<double> times, std::vector<Point> coords, std::string id = "a") {
  Track t;
  t.id = std::move(id);
  t.times = std::move(times);
  t.coords = std::move(coords);
  return t;
}

Track random_walk(std::size_t n, double interval, Rng& rng) {
  Track t;
  t.id = "rw";
  Point p{0.0, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    t.times.push_back(1e9 + i * interval);
    t.coords.push_back(p);
    p.x += rng.normal() * 100.0;
    p.y += rng.normal() * 100.0;
  }
  return t;
}

CovariateStack empty_stack() { return CovariateStack{}; }

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::UsageError;
}

}  // namespace

TEST_SUITE("track io") {
  TEST_CASE("three rows, one id") {
    const auto tracks = parse_track_csv("id,t,x,y\nA,0,0,0\nA,10,1,0\nA,20,2,1\n");
    REQUIRE(tracks.size() == 1);
    CHECK(tracks[0].id == "A");
    CHECK(tracks[0].size() == 3);
    CHECK(tracks[0].coords[2] == Point{2, 1});
  }

  TEST_CASE("two interleaved ids are separated and time-sorted") {
    const auto tracks = parse_track_csv("id,t,x,y\nA,20,2,0\nB,5,0,0\nA,10,1,0\nB,1,9,9\nA,0,0,0\n");
    REQUIRE(tracks.size() == 2);
    CHECK(tracks[0].id == "A");
    CHECK(tracks[0].times == std::vector<double>{0, 10, 20});
    CHECK(tracks[0].coords[0] == Point{0, 0});
    CHECK(tracks[1].id == "B");
    CHECK(tracks[1].times == std::vector<double>{1, 5});
    CHECK(tracks[1].coords[0] == Point{9, 9});
  }

  TEST_CASE("duplicate timestamp") {
    CHECK(kind_of([] { parse_track_csv("id,t,x,y\nA,0,0,0\nA,0,1,1\n"); }) == ErrorKind::DuplicateTimestamp);
  }

  TEST_CASE("non-finite coordinate") {
    CHECK(kind_of([] { parse_track_csv("id,t,x,y\nA,0,0,0\nA,1,nan,1\n"); }) == ErrorKind::NonFiniteCoordinate);
    CHECK(kind_of([] { parse_track_csv("id,t,x,y\nA,0,0,0\nA,1,inf,1\n"); }) == ErrorKind::NonFiniteCoordinate);
  }

  TEST_CASE("parse errors carry the row number") {
    try {
      parse_track_csv("id,t,x,y\nA,0,0,0\nA,1,abc,1\n");
      FAIL("expected ParseError");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ParseError);
      CHECK(e.line() == 3);
    }
    CHECK(kind_of([] { parse_track_csv("id,time,x,y\nA,0,0,0\n"); }) == ErrorKind::ParseError);
    CHECK(kind_of([] { parse_track_csv("id,t,x,y\nA,0,0\n"); }) == ErrorKind::ParseError);
  }

  TEST_CASE("ISO timestamps") {
    CHECK(parse_timestamp("2012-10-29T00:00:00Z").value() == 1351468800.0);
    CHECK(parse_timestamp("2012-10-29 00:00:00").value() == 1351468800.0);
    CHECK(parse_timestamp("2012-10-29").value() == 1351468800.0);
    CHECK(parse_timestamp("2012-10-29T02:00:00+02:00").value() == 1351468800.0);
    CHECK(parse_timestamp("2012-10-29T00:00:00.5Z").value() == 1351468800.5);
    CHECK(parse_timestamp("1351468800").value() == 1351468800.0);
    CHECK_FALSE(parse_timestamp("yesterday").has_value());
    CHECK_FALSE(parse_timestamp("2012-13-01").has_value());
  }

  TEST_CASE("csv round trip") {
    Rng rng(3);
    std::vector<Track> tracks{random_walk(20, 3600, rng), random_walk(5, 60, rng)};
    tracks[1].id = "second";
    const auto back = parse_track_csv(format_track_csv(tracks));
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].id == tracks[i].id);
      CHECK(back[i].times == tracks[i].times);
      CHECK(back[i].coords == tracks[i].coords);
    }
  }
}

TEST_SUITE("regularity") {
  TEST_CASE("perfectly daily track of 140 points") {
    Rng rng(1);
    const Track t = random_walk(140, 86400, rng);
    const BurstSplit s = validate_regular(t, 86400, 0.1);
    REQUIRE(s.bursts.size() == 1);
    CHECK(s.bursts[0].size() == 140);
  }

  TEST_CASE("a 3-day gap splits into two bursts") {
    Rng rng(1);
    Track t = random_walk(20, 86400, rng);
    for (std::size_t i = 10; i < t.size(); ++i) t.times[i] += 2 * 86400;
    const BurstSplit s = validate_regular(t, 86400, 0.1);
    REQUIRE(s.bursts.size() == 2);
    CHECK(s.bursts[0].size() == 10);
    CHECK(s.bursts[1].size() == 10);
    CHECK(s.bursts[1].times.front() - s.bursts[0].times.back() == 3 * 86400);
  }

  TEST_CASE("tolerance 0 splits at a 1-second jitter") {
    Rng rng(1);
    Track t = random_walk(10, 3600, rng);
    for (std::size_t i = 5; i < t.size(); ++i) t.times[i] += 1;
    CHECK(validate_regular(t, 3600, 0.0).bursts.size() == 2);
    CHECK(validate_regular(t, 3600, 0.1).bursts.size() == 1);
  }

  TEST_CASE("singleton locations between split points are dropped") {
    const Track t = make_track({0, 10, 100, 1000, 1010}, {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
    const BurstSplit s = validate_regular(t, 10, 0.1);
    CHECK(s.bursts.size() == 2);
    CHECK(s.singletons == 1);
    for (const Track& b : s.bursts) CHECK(b.size() >= 2);
  }

  TEST_CASE("steps after validation have regular intervals") {
    Rng rng(9);
    Track t = random_walk(300, 3600, rng);
    for (std::size_t i = 0; i < t.size(); ++i) t.times[i] += rng.uniform(-200.0, 200.0);
    for (std::size_t i = 150; i < t.size(); ++i) t.times[i] += 7200;
    const BurstSplit s = validate_regular(t, 3600, 0.1);
    const StepSeries steps = to_steps(s.bursts, empty_stack());
    for (const Step& st : steps.steps) CHECK(std::abs(st.interval() - 3600) <= 360);
  }
}

TEST_SUITE("interpolation") {
  TEST_CASE("regular track is unchanged") {
    Rng rng(2);
    const Track t = random_walk(30, 60, rng);
    const Track r = interpolate_regular(t, 60, 1e9);
    CHECK(r.times == t.times);
    REQUIRE(r.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(r.coords[i].x == doctest::Approx(t.coords[i].x));
      CHECK(r.coords[i].y == doctest::Approx(t.coords[i].y));
    }
  }

  TEST_CASE("midpoint insertion") {
    const Track t = make_track({0, 2}, {{0, 0}, {2, 0}});
    const Track r = interpolate_regular(t, 1, 10);
    REQUIRE(r.size() == 3);
    CHECK(r.times[1] == 1.0);
    CHECK(r.coords[1] == Point{1, 0});
  }

  TEST_CASE("long gaps leave no lattice points inside") {
    const double day = 86400;
    const Track t = make_track({0, day, 11 * day, 12 * day}, {{0, 0}, {1, 0}, {2, 0}, {3, 0}});
    const Track r = interpolate_regular(t, day, 3 * day);
    for (double time : r.times) CHECK_UNARY(time <= day || time >= 11 * day);
    CHECK(r.size() == 4);
  }
}

TEST_SUITE("thinning") {
  TEST_CASE("140 locations, every 10th") {
    Rng rng(1);
    const Track t = random_walk(140, 86400, rng);
    const Track r = thin(t, 10);
    CHECK(r.size() == 14);
    CHECK(r.id == t.id);
    CHECK(r.times[1] == t.times[10]);
  }

  TEST_CASE("k = 1 is the identity; large k leaves one location") {
    Rng rng(1);
    const Track t = random_walk(17, 10, rng);
    const Track same = thin(t, 1);
    CHECK(same.times == t.times);
    CHECK(same.coords == t.coords);
    const Track one = thin(t, 100);
    CHECK(one.size() == 1);
    CHECK_FALSE(one.usable());
  }

  TEST_CASE("thinning composes multiplicatively") {
    Rng rng(4);
    const Track t = random_walk(257, 10, rng);
    for (std::size_t a = 1; a <= 7; ++a) {
      for (std::size_t b = 1; b <= 7; ++b) {
        const Track lhs = thin(thin(t, a), b);
        const Track rhs = thin(t, a * b);
        CHECK(lhs.times == rhs.times);
        CHECK(lhs.coords == rhs.coords);
      }
    }
  }
}

TEST_SUITE("steps") {
  TEST_CASE("3-4-5 step") {
    const std::vector<Track> b{make_track({0, 1}, {{0, 0}, {3, 4}})};
    const StepSeries s = to_steps(b, empty_stack());
    REQUIRE(s.size() == 1);
    CHECK(s.steps[0].length == doctest::Approx(5.0));
    CHECK_FALSE(s.steps[0].turn.has_value());
  }

  TEST_CASE("straight path has zero turn") {
    const std::vector<Track> b{make_track({0, 1, 2}, {{0, 0}, {1, 1}, {2, 2}})};
    const StepSeries s = to_steps(b, empty_stack());
    REQUIRE(s.size() == 2);
    CHECK(*s.steps[1].turn == doctest::Approx(0.0));
  }

  TEST_CASE("east then north turns left by a right angle") {
    const std::vector<Track> b{make_track({0, 1, 2}, {{0, 0}, {1, 0}, {1, 1}})};
    const StepSeries s = to_steps(b, empty_stack());
    CHECK(s.steps[0].heading == doctest::Approx(0.0));
    CHECK(s.steps[1].heading == doctest::Approx(std::numbers::pi / 2));
    CHECK(*s.steps[1].turn == doctest::Approx(std::numbers::pi / 2));
  }

  TEST_CASE("reversal is +pi") {
    const std::vector<Track> b{make_track({0, 1, 2}, {{0, 0}, {1, 0}, {0, 0}})};
    CHECK(*to_steps(b, empty_stack()).steps[1].turn == doctest::Approx(std::numbers::pi));
  }

  TEST_CASE("zero-length steps are floored and carry no turn") {
    const std::vector<Track> b{make_track({0, 1, 2, 3}, {{0, 0}, {1, 0}, {1, 0}, {2, 0}})};
    const StepSeries s = to_steps(b, empty_stack());
    CHECK(s.steps[1].length == 0.0);
    CHECK(s.steps[1].model_length() == kMinStepLength);
    CHECK_FALSE(s.steps[1].turn.has_value());
    CHECK_FALSE(s.steps[2].turn.has_value());
  }

  TEST_CASE("random paths: lengths, turn range, bursts") {
    Rng rng(12);
    std::vector<Track> bursts{random_walk(100, 60, rng), random_walk(50, 60, rng)};
    const StepSeries s = to_steps(bursts, empty_stack());
    CHECK(s.size() == 99 + 49);
    const auto ranges = s.burst_ranges();
    REQUIRE(ranges.size() == 2);
    CHECK(ranges[0] == std::pair<std::size_t, std::size_t>{0, 99});
    for (const auto& [begin, end] : ranges) {
      CHECK_FALSE(s.steps[begin].turn.has_value());
      for (std::size_t i = begin + 1; i < end; ++i) {
        REQUIRE(s.steps[i].turn.has_value());
        CHECK_UNARY(*s.steps[i].turn > -std::numbers::pi);
        CHECK_UNARY(*s.steps[i].turn <= std::numbers::pi);
      }
    }
    double polyline = 0.0;
    for (const Track& t : bursts) {
      for (std::size_t i = 1; i < t.size(); ++i) {
        polyline += std::hypot(t.coords[i].x - t.coords[i - 1].x, t.coords[i].y - t.coords[i - 1].y);
      }
    }
    double total = 0.0;
    for (const Step& st : s.steps) total += st.length;
    CHECK(total == doctest::Approx(polyline).epsilon(1e-9));
  }

  TEST_CASE("covariates at end points and OutOfExtent") {
    CovariateStack stack;
    RasterGrid g = RasterGrid::filled(2, 1, 0.0, 0.0, 10.0, 1.0);
    g.at(0, 1) = 7.0;
    stack.add("c", g);
    const std::vector<Track> ok{make_track({0, 1}, {{5, 5}, {15, 5}})};
    const StepSeries s = to_steps(ok, stack);
    CHECK(s.covariate_names == std::vector<std::string>{"c"});
    CHECK(s.steps[0].covariates[0] == 7.0);
    const std::vector<Track> bad{make_track({0, 1, 2}, {{5, 5}, {15, 5}, {25, 5}})};
    CHECK(kind_of([&] { to_steps(bad, stack); }) == ErrorKind::OutOfExtent);
  }
}
