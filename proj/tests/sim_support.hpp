#pragma once

// Synthetic landscapes and data generators with known selection parameters.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/rsf.hpp"
#include "movesel/track.hpp"

namespace simsupport {

// Smooth random field: a sum of plane waves, scaled to unit variance.
inline movesel::RasterGrid wave_field(std::size_t n, double cellsize, movesel::Rng& rng, int waves = 8) {
  movesel::RasterGrid g = movesel::RasterGrid::filled(n, n, 0.0, 0.0, cellsize, 0.0);
  const double extent = static_cast<double>(n) * cellsize;
  std::vector<double> kx(waves), ky(waves), phase(waves);
  for (int w = 0; w < waves; ++w) {
    const double freq = rng.uniform(1.0, 4.0) * 2.0 * 3.141592653589793 / extent;
    const double dir = rng.uniform(0.0, 2.0 * 3.141592653589793);
    kx[w] = freq * std::cos(dir);
    ky[w] = freq * std::sin(dir);
    phase[w] = rng.uniform(0.0, 2.0 * 3.141592653589793);
  }
  const double scale = std::sqrt(2.0 / waves);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const movesel::Point c = g.cell_center(i);
    double v = 0.0;
    for (int w = 0; w < waves; ++w) v += std::sin(kx[w] * c.x + ky[w] * c.y + phase[w]);
    g.values[i] = scale * v;
  }
  return g;
}

inline movesel::CovariateStack landscape(std::size_t n, double cellsize, movesel::Rng& rng,
                                         std::span<const std::string> names) {
  movesel::CovariateStack stack;
  for (const std::string& name : names) stack.add(name, wave_field(n, cellsize, rng));
  return stack;
}

// Locations drawn i.i.d. with density proportional to exp(sum beta_k x_k)
// over the grid extent, by rejection. One location per day.
inline movesel::Track rsf_track(const movesel::CovariateStack& stack, std::span<const double> beta, std::size_t n,
                                movesel::Rng& rng) {
  double bound = 0.0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    const auto& v = stack.grid(k).values;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    bound += std::max(beta[k] * *lo, beta[k] * *hi);
  }
  const movesel::RasterGrid& g = stack.grid(0);
  movesel::Track t;
  t.id = "sim";
  while (t.size() < n) {
    const movesel::Point p{rng.uniform(g.xll, g.xmax()), rng.uniform(g.yll, g.ymax())};
    const auto x = stack.extract(p).values;
    double eta = 0.0;
    for (std::size_t k = 0; k < beta.size(); ++k) eta += beta[k] * x[k];
    if (rng.uniform() < std::exp(eta - bound)) {
      t.times.push_back(1e9 + 86400.0 * static_cast<double>(t.size()));
      t.coords.push_back(p);
    }
  }
  return t;
}

// Plain logistic data: x ~ N(0, 1), y ~ Bernoulli(logistic(b0 + b1 x)).
inline movesel::UseAvailTable logistic_table(double b0, double b1, std::size_t n, movesel::Rng& rng) {
  movesel::UseAvailTable t;
  t.covariate_names = {"x"};
  for (std::size_t i = 0; i < n; ++i) {
    movesel::UseAvailRow row;
    const double x = rng.normal();
    row.covariates = {x};
    row.used = rng.uniform() < 1.0 / (1.0 + std::exp(-(b0 + b1 * x))) ? 1 : 0;
    (row.used ? t.n_used : t.n_available)++;
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace simsupport

#include "movesel/predict.hpp"
#include "movesel/ssf.hpp"

namespace simsupport {

struct SsfReplicate {
  double estimate = 0.0;
  double se = 0.0;
  std::size_t strata = 0;
  movesel::StepTable table;
  movesel::FitResult fit;
};

// A path simulated from a habitat-only step-selection model (truth beta on
// covariate "a", kernel gamma(300, 200) and von Mises(0, 1)), then the full
// iSSF workflow: tentative kernel, 10 controls, fit of {a, l, ln_l, cos_theta}.
inline SsfReplicate ssf_recovery(const movesel::CovariateStack& stack, double beta, std::size_t n_strata,
                                 movesel::Rng& rng) {
  using namespace movesel;
  FitResult truth;
  truth.kind = ModelKind::Ssf;
  truth.terms = {{"a", beta, 0.0, false, false}};
  const MovementKernel kernel{GammaParams{300.0, 200.0}, VonMisesParams{0.0, 1.0}};
  const RasterGrid& g = stack.grid(0);
  const Point start{0.5 * (g.xll + g.xmax()), 0.5 * (g.yll + g.ymax())};
  Rng path_rng = rng.derive("path");
  Track path = simulate_ssf_path(truth, kernel, stack, n_strata + 1, start, 0.0, path_rng, 500);
  path.times.clear();
  for (std::size_t i = 0; i < path.coords.size(); ++i) path.times.push_back(3600.0 * static_cast<double>(i));
  const std::vector<Track> bursts{path};
  const StepSeries steps = to_steps(bursts, stack);
  const KernelFit tentative = fit_tentative_kernel(steps);
  Rng control_rng = rng.derive("controls");
  const StepTable table = generate_controls(steps, tentative.kernel, 10, stack, control_rng);
  const std::vector<std::string> names = stack.names();
  const FitResult fit = fit_conditional_logistic(table, make_ssf_spec(false, "a", names));
  return {fit.coefficient("a"), fit.find("a")->se, table.n_strata, table, fit};
}

}  // namespace simsupport
