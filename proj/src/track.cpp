#include "movesel/track.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "movesel/distributions.hpp"
#include "movesel/error.hpp"
#include "movesel/io.hpp"

namespace movesel {

void Track::validate() const {
  if (times.size() != coords.size()) {
    throw Error(ErrorKind::DomainError, "track '" + id + "': times and coordinates differ in length");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!std::isfinite(coords[i].x) || !std::isfinite(coords[i].y)) {
      throw Error(ErrorKind::NonFiniteCoordinate, "track '" + id + "' location " + std::to_string(i));
    }
    if (i > 0 && !(times[i] > times[i - 1])) {
      throw Error(ErrorKind::DomainError, "track '" + id + "': times not strictly increasing at " + std::to_string(i));
    }
  }
}

namespace {

bool read_int(std::string_view s, std::size_t& pos, std::size_t digits, int& out) {
  if (pos + digits > s.size()) return false;
  auto res = std::from_chars(s.data() + pos, s.data() + pos + digits, out);
  if (res.ec != std::errc() || res.ptr != s.data() + pos + digits) return false;
  pos += digits;
  return true;
}

bool expect(std::string_view s, std::size_t& pos, char c) {
  if (pos < s.size() && s[pos] == c) {
    ++pos;
    return true;
  }
  return false;
}

std::optional<double> parse_iso8601(std::string_view s) {
  std::size_t pos = 0;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  if (!read_int(s, pos, 4, y) || !expect(s, pos, '-') || !read_int(s, pos, 2, mo) || !expect(s, pos, '-') ||
      !read_int(s, pos, 2, d)) {
    return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  double frac = 0.0;
  double offset = 0.0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') return std::nullopt;
    ++pos;
    if (!read_int(s, pos, 2, h) || !expect(s, pos, ':') || !read_int(s, pos, 2, mi)) return std::nullopt;
    if (expect(s, pos, ':') && !read_int(s, pos, 2, sec)) return std::nullopt;
    if (h > 23 || mi > 59 || sec > 60) return std::nullopt;
    if (pos < s.size() && s[pos] == '.') {
      const std::size_t start = pos;
      ++pos;
      while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
      if (!parse_double(std::string("0") + std::string(s.substr(start, pos - start)), frac)) return std::nullopt;
    }
    if (pos < s.size()) {
      if (s[pos] == 'Z') {
        ++pos;
      } else if (s[pos] == '+' || s[pos] == '-') {
        const double sign = s[pos] == '+' ? 1.0 : -1.0;
        ++pos;
        int oh = 0, om = 0;
        if (!read_int(s, pos, 2, oh)) return std::nullopt;
        expect(s, pos, ':');
        if (!read_int(s, pos, 2, om)) return std::nullopt;
        offset = sign * (oh * 3600.0 + om * 60.0);
      }
    }
    if (pos != s.size()) return std::nullopt;
  }
  const auto days = std::chrono::sys_days(ymd).time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + sec + frac - offset;
}

}  // namespace

std::optional<double> parse_timestamp(std::string_view token) noexcept {
  token = trim(token);
  if (token.empty()) return std::nullopt;
  double v = 0.0;
  if (parse_double(token, v)) {
    if (!std::isfinite(v)) return std::nullopt;
    return v;
  }
  try {
    return parse_iso8601(token);
  } catch (...) {
    return std::nullopt;
  }
}

std::vector<Track> parse_track_csv(std::string_view text) {
  auto lines = split(text, '\n');
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<Track> tracks;
  std::unordered_map<std::string, std::size_t> index;

  for (std::string_view raw : lines) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1 && line.size() >= 3 && line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (!have_header) {
      if (cells.size() != 4 || trim(cells[0]) != "id" || trim(cells[1]) != "t" || trim(cells[2]) != "x" ||
          trim(cells[3]) != "y") {
        throw Error(ErrorKind::ParseError, "expected header 'id,t,x,y'", line_no);
      }
      have_header = true;
      continue;
    }
    if (cells.size() != 4) {
      throw Error(ErrorKind::ParseError, "expected 4 fields, found " + std::to_string(cells.size()), line_no);
    }
    const std::string id(trim(cells[0]));
    if (id.empty()) throw Error(ErrorKind::ParseError, "empty id", line_no);
    const auto t = parse_timestamp(cells[1]);
    if (!t) throw Error(ErrorKind::ParseError, "bad timestamp '" + std::string(trim(cells[1])) + "'", line_no);
    double x = 0.0, y = 0.0;
    if (!parse_double(trim(cells[2]), x) || !parse_double(trim(cells[3]), y)) {
      throw Error(ErrorKind::ParseError, "bad coordinate", line_no);
    }
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw Error(ErrorKind::NonFiniteCoordinate, "non-finite coordinate", line_no);
    }
    auto [it, inserted] = index.try_emplace(id, tracks.size());
    if (inserted) tracks.push_back(Track{id, {}, {}});
    Track& tr = tracks[it->second];
    tr.times.push_back(*t);
    tr.coords.push_back({x, y});
  }
  if (!have_header) throw Error(ErrorKind::ParseError, "missing header 'id,t,x,y'", 1);

  for (Track& tr : tracks) {
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return tr.times[a] < tr.times[b]; });
    Track sorted{tr.id, {}, {}};
    for (std::size_t i : order) {
      if (!sorted.times.empty() && sorted.times.back() == tr.times[i]) {
        throw Error(ErrorKind::DuplicateTimestamp,
                    "id '" + tr.id + "' has two locations at t = " + format_double(tr.times[i]));
      }
      sorted.times.push_back(tr.times[i]);
      sorted.coords.push_back(tr.coords[i]);
    }
    tr = std::move(sorted);
  }
  return tracks;
}

std::vector<Track> read_track_csv(const std::filesystem::path& path) {
  return parse_track_csv(read_text_file(path));
}

std::string format_track_csv(std::span<const Track> tracks) {
  std::string out = "id,t,x,y\n";
  for (const Track& tr : tracks) {
    for (std::size_t i = 0; i < tr.size(); ++i) {
      out += tr.id;
      out += ',';
      out += format_double(tr.times[i]);
      out += ',';
      out += format_double(tr.coords[i].x);
      out += ',';
      out += format_double(tr.coords[i].y);
      out += '\n';
    }
  }
  return out;
}

void write_track_csv(std::span<const Track> tracks, const std::filesystem::path& path) {
  write_text_file(path, format_track_csv(tracks));
}

BurstSplit validate_regular(const Track& track, double interval_s, double tol_fraction) {
  if (!(interval_s > 0.0)) throw Error(ErrorKind::DomainError, "interval must be positive");
  if (!(tol_fraction >= 0.0 && tol_fraction < 0.5)) {
    throw Error(ErrorKind::DomainError, "tolerance fraction must lie in [0, 0.5)");
  }
  BurstSplit out;
  const double tol = tol_fraction * interval_s;
  Track current{track.id, {}, {}};
  auto flush = [&] {
    if (current.size() >= 2) {
      out.bursts.push_back(std::move(current));
    } else if (current.size() == 1) {
      ++out.singletons;
    }
    current = Track{track.id, {}, {}};
  };
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (i > 0) {
      const double gap = track.times[i] - track.times[i - 1];
      if (std::fabs(gap - interval_s) > tol) {
        ++out.split_points;
        flush();
      }
    }
    current.times.push_back(track.times[i]);
    current.coords.push_back(track.coords[i]);
  }
  flush();
  return out;
}

Track interpolate_regular(const Track& track, double interval_s, double max_gap_s) {
  if (!(interval_s > 0.0)) throw Error(ErrorKind::DomainError, "interval must be positive");
  Track out{track.id, {}, {}};
  if (track.size() == 0) return out;
  const double t0 = track.times.front();
  const double t_last = track.times.back();
  std::size_t seg = 0;
  for (std::size_t k = 0;; ++k) {
    const double tau = t0 + static_cast<double>(k) * interval_s;
    if (tau > t_last) break;
    while (seg + 1 < track.size() && track.times[seg + 1] < tau) ++seg;
    if (track.times[seg] == tau || seg + 1 >= track.size()) {
      if (track.times[seg] == tau) {
        out.times.push_back(tau);
        out.coords.push_back(track.coords[seg]);
      }
      continue;
    }
    const double ta = track.times[seg];
    const double tb = track.times[seg + 1];
    if (tb == tau) {
      out.times.push_back(tau);
      out.coords.push_back(track.coords[seg + 1]);
      continue;
    }
    if (tb - ta > max_gap_s) continue;
    const double w = (tau - ta) / (tb - ta);
    const Point& a = track.coords[seg];
    const Point& b = track.coords[seg + 1];
    out.times.push_back(tau);
    out.coords.push_back({a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)});
  }
  return out;
}

Track thin(const Track& track, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::DomainError, "thinning factor must be >= 1");
  Track out{track.id, {}, {}};
  for (std::size_t i = 0; i < track.size(); i += k) {
    out.times.push_back(track.times[i]);
    out.coords.push_back(track.coords[i]);
  }
  return out;
}

std::optional<std::size_t> StepSeries::covariate_index(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < covariate_names.size(); ++i) {
    if (covariate_names[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<std::pair<std::size_t, std::size_t>> StepSeries::burst_ranges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= steps.size(); ++i) {
    if (i == steps.size() || steps[i].burst != steps[begin].burst) {
      if (i > begin) out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

StepSeries to_steps(std::span<const Track> bursts, const CovariateStack& grids) {
  StepSeries out;
  out.covariate_names = grids.names();
  for (std::size_t b = 0; b < bursts.size(); ++b) {
    const Track& tr = bursts[b];
    double prev_heading = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) {
      Step s;
      s.burst = b;
      s.id = tr.id;
      s.t_start = tr.times[i];
      s.t_end = tr.times[i + 1];
      s.start = tr.coords[i];
      s.end = tr.coords[i + 1];
      const double dx = s.end.x - s.start.x;
      const double dy = s.end.y - s.start.y;
      s.length = std::hypot(dx, dy);
      s.heading = s.length < kMinStepLength ? std::numeric_limits<double>::quiet_NaN() : std::atan2(dy, dx);
      if (i > 0 && std::isfinite(s.heading) && std::isfinite(prev_heading)) {
        s.turn = wrap_angle(s.heading - prev_heading);
      }
      prev_heading = s.heading;
      try {
        s.covariates = grids.extract(s.end).values;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::OutOfExtent) throw;
        throw Error(ErrorKind::OutOfExtent,
                    "step " + std::to_string(out.steps.size()) + " (burst " + std::to_string(b) + ", index " +
                        std::to_string(i) + ") ends outside the grid extent");
      }
      out.steps.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace movesel
