#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "movesel/fit_result.hpp"
#include "movesel/geometry.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/track.hpp"

namespace movesel {

struct UseAvailRow {
  int used = 0;  // 1 = observed location, 0 = available sample
  Point location;
  std::vector<double> covariates;  // aligned with UseAvailTable::covariate_names
  double weight = 1.0;
};

struct UseAvailTable {
  std::vector<std::string> covariate_names;
  std::vector<UseAvailRow> rows;
  std::size_t n_used = 0;
  std::size_t n_available = 0;
  Polygon polygon;
  std::uint64_t seed = 0;
  // Availability proposals re-drawn for falling off the grids or on nodata.
  std::size_t redraws = 0;
};

// Used rows are the track's locations; n_avail_per_used * n_used available
// rows are drawn uniformly inside the (optionally buffered) minimum convex
// polygon, re-drawing any that fall outside the grids or on nodata.
UseAvailTable build_use_avail(const Track& track, const CovariateStack& grids, std::size_t n_avail_per_used,
                              Rng& rng, double buffer_m = 0.0);

// Weighted Bernoulli log-likelihood of the use/available labels; beta has the
// intercept first when include_intercept is set.
double logistic_loglik(const UseAvailTable& table, std::span<const double> beta, bool include_intercept);
std::vector<double> logistic_score(const UseAvailTable& table, std::span<const double> beta, bool include_intercept);

// Newton/IRLS with step halving; falls back to optimize_mle if IRLS stalls.
// Throws SingularDesign (constant or collinear columns) and
// SeparationDetected (|beta| > 50 during fitting).
FitResult fit_logistic(const UseAvailTable& table, bool include_intercept = true);

// sum_k beta_k x_k without the intercept, i.e. log w(x).
double rsf_linear_predictor(const FitResult& fit, const std::map<std::string, double>& x);

struct ScanRow {
  std::size_t ratio = 0;
  std::vector<TermEstimate> terms;
  double loglik = 0.0;
  bool failed = false;
  std::string error;
};

// One availability draw and fit per ratio, each on an Rng derived from
// ("avail-ratio", ratio). Failures are recorded on the row.
std::vector<ScanRow> availability_stability_scan(const Track& track, const CovariateStack& grids,
                                                 std::span<const std::size_t> sizes, const Rng& rng,
                                                 double buffer_m = 0.0);

std::string format_scan_csv(std::span<const ScanRow> rows);

}  // namespace movesel
