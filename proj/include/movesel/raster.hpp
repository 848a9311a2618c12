#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "movesel/geometry.hpp"

namespace movesel {

// Regular grid of one covariate. Row 0 is the northernmost row; cell (r, c)
// has center (xll + (c + 0.5) * cellsize, yll + (nrows - r - 0.5) * cellsize).
struct RasterGrid {
  std::size_t ncols = 0;
  std::size_t nrows = 0;
  double xll = 0.0;
  double yll = 0.0;
  double cellsize = 1.0;
  double nodata = -9999.0;
  std::vector<double> values;  // row-major, ncols * nrows

  static RasterGrid filled(std::size_t ncols, std::size_t nrows, double xll, double yll,
                           double cellsize, double value, double nodata = -9999.0);

  double xmax() const noexcept { return xll + static_cast<double>(ncols) * cellsize; }
  double ymax() const noexcept { return yll + static_cast<double>(nrows) * cellsize; }
  std::size_t size() const noexcept { return values.size(); }

  double& at(std::size_t row, std::size_t col) { return values[row * ncols + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * ncols + col]; }

  bool is_nodata(double v) const noexcept;
  bool contains(Point p) const noexcept;
  Point cell_center(std::size_t row, std::size_t col) const noexcept;
  Point cell_center(std::size_t index) const noexcept { return cell_center(index / ncols, index % ncols); }
  // Containing cell (right and top edges belong to the last column/row);
  // nullopt outside the extent.
  std::optional<std::size_t> cell_index(Point p) const noexcept;
  bool same_geometry(const RasterGrid& other) const noexcept;

  // Throws DomainError when the invariants (cellsize > 0, size match) fail.
  void validate() const;
};

// ESRI ASCII grid. Six header lines (ncols, nrows, xllcorner, yllcorner,
// cellsize, NODATA_value; keys case-insensitive) then nrows lines of ncols
// values, northernmost row first. Values are written in the shortest decimal
// form that reads back to the same double.
RasterGrid parse_ascii_grid(std::string_view text);
std::string format_ascii_grid(const RasterGrid& grid);
RasterGrid read_ascii_grid(const std::filesystem::path& path);
void write_ascii_grid(const RasterGrid& grid, const std::filesystem::path& path);

// Covariate values at one location, aligned with CovariateStack::names().
// Nodata cells hold NaN.
struct Extraction {
  std::vector<double> values;

  bool missing(std::size_t i) const noexcept;
  bool any_missing() const noexcept;
};

// Named grids sharing one extent and cell size.
class CovariateStack {
 public:
  CovariateStack() = default;

  // Throws ExtentMismatch if the grid disagrees with those already present,
  // DomainError on a duplicate name.
  void add(std::string name, RasterGrid grid);

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<RasterGrid>& grids() const noexcept { return grids_; }
  const RasterGrid& grid(std::size_t i) const { return grids_[i]; }
  const RasterGrid* find(std::string_view name) const noexcept;
  std::optional<std::size_t> index_of(std::string_view name) const noexcept;
  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }

  bool contains(Point p) const noexcept;
  // Containing-cell lookup. Throws OutOfExtent outside the grid rectangle.
  Extraction extract(Point p) const;
  // Extraction, or nullopt when outside the extent or any value is nodata.
  std::optional<std::vector<double>> extract_complete(Point p) const;

 private:
  std::vector<std::string> names_;
  std::vector<RasterGrid> grids_;
};

}  // namespace movesel
