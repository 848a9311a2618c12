#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "movesel/fit_result.hpp"
#include "movesel/geometry.hpp"
#include "movesel/hmm.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/ssf.hpp"
#include "movesel/track.hpp"

namespace movesel {

struct CurveRow {
  std::string series;
  double x = 0.0;
  double value = 0.0;
  double se = 0.0;  // NaN when the covariance is unusable
};

struct CurveTable {
  std::vector<CurveRow> rows;

  std::vector<std::string> series() const;
};

// series,x,value,se
std::string format_curve_csv(const CurveTable& table);

// Movement values at which interaction terms are evaluated.
struct MovementContext {
  double l = 1.0;
  double ln_l = 0.0;
  double cos_theta = 1.0;

  static MovementContext at_length(double length, double cos_theta = 1.0);
};

struct LogRss {
  double value = 0.0;
  double se = 0.0;
};

// eta(x1) - eta(x2) over every non-intercept term, with delta-method se from
// the coefficient covariance. Terms made only of movement columns cancel.
// Throws MissingCovariate, or MissingMovementContext when a term mixes a
// covariate with a movement column and no context is given.
LogRss log_rss(const FitResult& fit, const std::map<std::string, double>& x1, const std::map<std::string, double>& x2,
               const std::optional<MovementContext>& context = std::nullopt);

struct CurveOptions {
  // Reference value of the varied covariate; the fit's used-data mean when unset.
  std::optional<double> reference;
  // Values of the other covariates (they cancel); their used-data means when
  // absent here, else 0.
  std::map<std::string, double> others;
  std::optional<MovementContext> context;
  std::string series = "logrss";
};

// log_rss(grid value, reference) along a strictly increasing grid.
CurveTable logrss_curve(const FitResult& fit, const std::string& covariate, std::span<const double> grid,
                        const CurveOptions& options = {});

// exp(sum_k beta_k x_k(cell)) normalized over valid cells; cells where any
// covariate of the fit is nodata stay nodata. Throws MissingCovariate.
RasterGrid rsf_map(const FitResult& fit, const CovariateStack& grids);

struct SsudOptions {
  std::size_t n_locations = 100000;
  std::size_t burn_in = 1000;
  std::size_t n_candidates = 50;
  std::size_t n_chains = 1;
  // Record every thin-th location after burn-in.
  std::size_t thin = 1;
  // Per-chain histograms split into this many consecutive batches (0: none),
  // for Monte Carlo error estimates.
  std::size_t batches = 0;
  std::size_t threads = 1;
  KernelUpdateOptions update{};
  // Chains start here (or at a random valid cell center) with a uniform heading.
  std::optional<Point> start;
};

struct SsudResult {
  RasterGrid map;
  std::vector<std::uint64_t> counts;  // per cell, all chains
  // batches x cells, each row normalized to sum 1 (empty unless requested).
  std::vector<std::vector<double>> batch_maps;
  std::size_t steps_simulated = 0;
  std::size_t rejected_proposals = 0;
};

// One step-selection path of n_steps: candidates from the kernel updated at
// the current location, chosen by a softmax of the habitat terms at their end
// points. Throws ExtentExhausted after 1000 consecutive proposals leave the
// grids.
Track simulate_ssf_path(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                        std::size_t n_steps, Point start, double heading, Rng& rng,
                        std::size_t n_candidates = 50, const KernelUpdateOptions& update = {});

// Steady-state utilization distribution from long simulated paths binned on
// the grid, normalized to sum 1.
SsudResult ssud_simulate(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                         const SsudOptions& options, const Rng& rng);
RasterGrid ssud_map(const FitResult& fit, const MovementKernel& kernel, const CovariateStack& grids,
                    const SsudOptions& options, const Rng& rng);

// pi(Gamma(x)) per state along the grid, with delta-method se through a
// central finite-difference Jacobian (h = 1e-5 max(1, |theta|)). Other
// transition covariates are held at `others` (0 when absent). Throws
// MissingCovariate when `covariate` is not a transition covariate.
CurveTable state_prob_curve(const HmmFit& fit, const std::string& covariate, std::span<const double> grid,
                            const std::map<std::string, double>& others = {});

// One map per state with pi(Gamma(x(cell))); the maps sum to 1 per valid cell.
std::vector<RasterGrid> hmm_state_maps(const HmmModel& model, const CovariateStack& grids);

}  // namespace movesel
