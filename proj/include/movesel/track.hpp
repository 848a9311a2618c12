#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "movesel/geometry.hpp"
#include "movesel/raster.hpp"

namespace movesel {

// Time-ordered relocations of one animal. times are epoch seconds.
struct Track {
  std::string id;
  std::vector<double> times;
  std::vector<Point> coords;

  std::size_t size() const noexcept { return times.size(); }
  // Fewer than two locations cannot form a step.
  bool usable() const noexcept { return times.size() >= 2; }
  // Strictly increasing times, finite coordinates, matching lengths.
  void validate() const;
};

// Epoch seconds from an integer/decimal epoch or ISO-8601 UTC
// ("2012-10-29T00:00:00Z", "2012-10-29 00:00:00", "2012-10-29",
// optional fractional seconds and +hh:mm offset). nullopt when unparseable.
std::optional<double> parse_timestamp(std::string_view token) noexcept;

// CSV with header id,t,x,y. One track per id in order of first appearance,
// each sorted by time.
std::vector<Track> parse_track_csv(std::string_view text);
std::vector<Track> read_track_csv(const std::filesystem::path& path);
std::string format_track_csv(std::span<const Track> tracks);
void write_track_csv(std::span<const Track> tracks, const std::filesystem::path& path);

struct BurstSplit {
  std::vector<Track> bursts;
  // Locations left isolated between two split points (dropped).
  std::size_t singletons = 0;
  std::size_t split_points = 0;
};

// Splits wherever |gap - interval_s| > tol_fraction * interval_s.
BurstSplit validate_regular(const Track& track, double interval_s, double tol_fraction);

// Linear interpolation onto t0 + k * interval_s. Lattice points inside an
// observation gap longer than max_gap_s are omitted.
Track interpolate_regular(const Track& track, double interval_s, double max_gap_s);

// Keeps indices 0, k, 2k, ...
Track thin(const Track& track, std::size_t k);

// Steps shorter than this are floored for density evaluation and carry no
// heading.
inline constexpr double kMinStepLength = 1e-3;

struct Step {
  std::size_t burst = 0;
  std::string id;
  double t_start = 0.0;
  double t_end = 0.0;
  Point start;
  Point end;
  double length = 0.0;                // raw Euclidean length
  double heading = 0.0;               // counterclockwise from east; NaN if undefined
  std::optional<double> turn;         // (-pi, pi]; absent on a burst's first step
  std::vector<double> covariates;     // at the end point; NaN = nodata

  double interval() const noexcept { return t_end - t_start; }
  double model_length() const noexcept { return length < kMinStepLength ? kMinStepLength : length; }
};

struct StepSeries {
  std::vector<std::string> covariate_names;
  std::vector<Step> steps;

  std::size_t size() const noexcept { return steps.size(); }
  std::optional<std::size_t> covariate_index(std::string_view name) const noexcept;
  // [begin, end) index ranges of consecutive steps sharing a burst.
  std::vector<std::pair<std::size_t, std::size_t>> burst_ranges() const;
};

// One step per consecutive pair within each burst; covariates looked up at
// step end points. Throws OutOfExtent naming the offending step.
StepSeries to_steps(std::span<const Track> bursts, const CovariateStack& grids);

}  // namespace movesel
