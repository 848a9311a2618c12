#include "movesel/raster.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "movesel/error.hpp"
#include "movesel/io.hpp"

namespace movesel {

RasterGrid RasterGrid::filled(std::size_t ncols, std::size_t nrows, double xll, double yll,
                              double cellsize, double value, double nodata) {
  RasterGrid g;
  g.ncols = ncols;
  g.nrows = nrows;
  g.xll = xll;
  g.yll = yll;
  g.cellsize = cellsize;
  g.nodata = nodata;
  g.values.assign(ncols * nrows, value);
  return g;
}

bool RasterGrid::is_nodata(double v) const noexcept {
  return v == nodata || std::isnan(v);
}

bool RasterGrid::contains(Point p) const noexcept {
  return p.x >= xll && p.x <= xmax() && p.y >= yll && p.y <= ymax();
}

Point RasterGrid::cell_center(std::size_t row, std::size_t col) const noexcept {
  return {xll + (static_cast<double>(col) + 0.5) * cellsize,
          yll + (static_cast<double>(nrows - row) - 0.5) * cellsize};
}

std::optional<std::size_t> RasterGrid::cell_index(Point p) const noexcept {
  if (!contains(p)) return std::nullopt;
  auto col = static_cast<std::size_t>(std::floor((p.x - xll) / cellsize));
  auto from_bottom = static_cast<std::size_t>(std::floor((p.y - yll) / cellsize));
  if (col >= ncols) col = ncols - 1;
  if (from_bottom >= nrows) from_bottom = nrows - 1;
  const std::size_t row = nrows - 1 - from_bottom;
  return row * ncols + col;
}

bool RasterGrid::same_geometry(const RasterGrid& o) const noexcept {
  return ncols == o.ncols && nrows == o.nrows && xll == o.xll && yll == o.yll && cellsize == o.cellsize;
}

void RasterGrid::validate() const {
  if (ncols == 0 || nrows == 0) throw Error(ErrorKind::DomainError, "grid dimensions must be positive");
  if (!(cellsize > 0.0) || !std::isfinite(cellsize)) {
    throw Error(ErrorKind::DomainError, "cellsize must be positive");
  }
  if (values.size() != ncols * nrows) {
    throw Error(ErrorKind::DomainError, "value count does not match ncols * nrows");
  }
}

RasterGrid parse_ascii_grid(std::string_view text) {
  static constexpr std::array<std::string_view, 6> kKeys = {"ncols", "nrows", "xllcorner",
                                                           "yllcorner", "cellsize", "nodata_value"};
  std::array<double, 6> header{};
  std::array<bool, 6> seen{};
  std::array<std::size_t, 6> key_line{};

  std::size_t line_no = 0;
  std::size_t header_lines = 0;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  while (header_lines < 6) {
    if (!next_line(line)) throw Error(ErrorKind::ParseError, "truncated header", line_no + 1);
    auto tokens = split_whitespace(line);
    if (tokens.size() != 2) throw Error(ErrorKind::ParseError, "expected '<key> <value>'", line_no);
    const std::string key = to_lower(tokens[0]);
    std::size_t k = 0;
    while (k < kKeys.size() && kKeys[k] != key) ++k;
    if (k == kKeys.size()) throw Error(ErrorKind::ParseError, "unknown header key '" + key + "'", line_no);
    if (seen[k]) throw Error(ErrorKind::ParseError, "duplicate header key '" + key + "'", line_no);
    if (!parse_double(tokens[1], header[k])) {
      throw Error(ErrorKind::ParseError, "bad header value '" + std::string(tokens[1]) + "'", line_no);
    }
    seen[k] = true;
    key_line[k] = line_no;
    ++header_lines;
  }

  RasterGrid g;
  auto as_count = [&](std::size_t k) {
    const double v = header[k];
    if (!(v >= 1.0) || v != std::floor(v) || v > 1e9) {
      throw Error(ErrorKind::ParseError, std::string(kKeys[k]) + " must be a positive integer", key_line[k]);
    }
    return static_cast<std::size_t>(v);
  };
  g.ncols = as_count(0);
  g.nrows = as_count(1);
  g.xll = header[2];
  g.yll = header[3];
  g.cellsize = header[4];
  g.nodata = header[5];
  if (!(g.cellsize > 0.0)) throw Error(ErrorKind::ParseError, "cellsize must be positive", key_line[4]);
  g.values.reserve(g.ncols * g.nrows);

  std::size_t rows_read = 0;
  while (next_line(line)) {
    auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    if (rows_read == g.nrows) {
      throw Error(ErrorKind::ParseError, "more than nrows = " + std::to_string(g.nrows) + " data rows", line_no);
    }
    if (tokens.size() != g.ncols) {
      throw Error(ErrorKind::ParseError,
                  "expected " + std::to_string(g.ncols) + " values, found " + std::to_string(tokens.size()),
                  line_no);
    }
    for (auto tok : tokens) {
      double v = 0.0;
      if (!parse_double(tok, v)) {
        throw Error(ErrorKind::ParseError, "bad value '" + std::string(tok) + "'", line_no);
      }
      g.values.push_back(v);
    }
    ++rows_read;
  }
  if (rows_read != g.nrows) {
    throw Error(ErrorKind::ParseError,
                "expected " + std::to_string(g.nrows) + " data rows, found " + std::to_string(rows_read),
                line_no);
  }
  return g;
}

std::string format_ascii_grid(const RasterGrid& g) {
  g.validate();
  std::string out;
  out.reserve(96 + g.values.size() * 8);
  out += "ncols " + std::to_string(g.ncols) + "\n";
  out += "nrows " + std::to_string(g.nrows) + "\n";
  out += "xllcorner " + format_double(g.xll) + "\n";
  out += "yllcorner " + format_double(g.yll) + "\n";
  out += "cellsize " + format_double(g.cellsize) + "\n";
  out += "NODATA_value " + format_double(g.nodata) + "\n";
  for (std::size_t r = 0; r < g.nrows; ++r) {
    for (std::size_t c = 0; c < g.ncols; ++c) {
      if (c > 0) out += ' ';
      out += format_double(g.at(r, c));
    }
    out += '\n';
  }
  return out;
}

RasterGrid read_ascii_grid(const std::filesystem::path& path) {
  return parse_ascii_grid(read_text_file(path));
}

void write_ascii_grid(const RasterGrid& grid, const std::filesystem::path& path) {
  write_text_file(path, format_ascii_grid(grid));
}

bool Extraction::missing(std::size_t i) const noexcept { return std::isnan(values[i]); }

bool Extraction::any_missing() const noexcept {
  for (double v : values) {
    if (std::isnan(v)) return true;
  }
  return false;
}

void CovariateStack::add(std::string name, RasterGrid grid) {
  grid.validate();
  if (index_of(name)) throw Error(ErrorKind::DomainError, "duplicate covariate name '" + name + "'");
  if (!grids_.empty() && !grids_.front().same_geometry(grid)) {
    throw Error(ErrorKind::ExtentMismatch,
                "grid '" + name + "' does not share extent and cellsize with '" + names_.front() + "'");
  }
  names_.push_back(std::move(name));
  grids_.push_back(std::move(grid));
}

const RasterGrid* CovariateStack::find(std::string_view name) const noexcept {
  auto i = index_of(name);
  return i ? &grids_[*i] : nullptr;
}

std::optional<std::size_t> CovariateStack::index_of(std::string_view name) const noexcept {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

bool CovariateStack::contains(Point p) const noexcept {
  return grids_.empty() || grids_.front().contains(p);
}

Extraction CovariateStack::extract(Point p) const {
  Extraction out;
  if (grids_.empty()) return out;
  const auto cell = grids_.front().cell_index(p);
  if (!cell) {
    throw Error(ErrorKind::OutOfExtent,
                "point (" + format_double(p.x) + ", " + format_double(p.y) + ") lies outside the grid extent");
  }
  out.values.reserve(grids_.size());
  for (const RasterGrid& g : grids_) {
    const double v = g.values[*cell];
    out.values.push_back(g.is_nodata(v) ? std::numeric_limits<double>::quiet_NaN() : v);
  }
  return out;
}

std::optional<std::vector<double>> CovariateStack::extract_complete(Point p) const {
  std::vector<double> out;
  if (grids_.empty()) return out;
  const auto cell = grids_.front().cell_index(p);
  if (!cell) return std::nullopt;
  out.reserve(grids_.size());
  for (const RasterGrid& g : grids_) {
    const double v = g.values[*cell];
    if (g.is_nodata(v)) return std::nullopt;
    out.push_back(v);
  }
  return out;
}

}  // namespace movesel
