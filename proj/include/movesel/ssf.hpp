#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "movesel/distributions.hpp"
#include "movesel/fit_result.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/track.hpp"

namespace movesel {

// Selection-free movement kernel: gamma step lengths, von Mises turn angles
// relative to the previous heading.
struct MovementKernel {
  GammaParams step;
  VonMisesParams angle;

  bool valid() const noexcept { return step.valid() && angle.valid(); }
};

struct KernelFit {
  MovementKernel kernel;
  // sd hit its lower working bound (sd >= 1e-3 * mean): lengths have no spread.
  bool sd_at_lower_bound = false;
  bool converged = false;
  std::size_t n_lengths = 0;
  std::size_t n_angles = 0;
};

// Maximum-likelihood gamma fit to step lengths (floored) and von Mises fit to
// defined turn angles. The angle mean stays 0 unless estimate_angle_mean.
// Throws TooFewSteps below 10 defined turn angles.
KernelFit fit_tentative_kernel(const StepSeries& steps, bool estimate_angle_mean = false);

// Movement columns available to every term alongside the covariates.
inline constexpr std::string_view kStepLengthColumn = "l";
inline constexpr std::string_view kLogStepLengthColumn = "ln_l";
inline constexpr std::string_view kCosTurnColumn = "cos_theta";

bool is_movement_column(std::string_view name) noexcept;

struct StepRow {
  std::size_t stratum = 0;
  int used = 0;  // 1 = observed step, 0 = control
  double l = 0.0;
  double ln_l = 0.0;
  double cos_theta = 0.0;
  std::vector<double> covariates;
  Point end;
};

struct StepTable {
  std::vector<std::string> covariate_names;
  // Grouped by stratum; the observed row leads each stratum.
  std::vector<StepRow> rows;
  std::size_t n_strata = 0;
  std::size_t dropped_controls = 0;
  // Observed steps without a turn angle or with nodata at the end point.
  std::size_t skipped_steps = 0;
  std::uint64_t seed = 0;

  std::vector<std::pair<std::size_t, std::size_t>> strata_ranges() const;
};

// n_controls kernel draws per observed step (first step of each burst
// excluded). Draws leaving the grids or landing on nodata are retried up to
// 100 times, then dropped. Throws ExtentExhausted if a stratum loses every
// control.
StepTable generate_controls(const StepSeries& steps, const MovementKernel& kernel, std::size_t n_controls,
                            const CovariateStack& grids, Rng& rng);

// stratum,case,l,ln_l,cos_theta,<covariates>
std::string format_step_table_csv(const StepTable& table);

struct SsfTerm {
  std::string name;                // column or ':'-joined product of columns
  std::optional<double> fixed;     // held at this value instead of estimated
};
using SsfSpec = std::vector<SsfTerm>;

// {cov, l, ln_l, cos_theta}, plus cov:ln_l with the interaction. Throws
// UnknownCovariate when cov is not among known_covariates.
SsfSpec make_ssf_spec(bool with_movement_interaction, const std::string& covariate,
                      std::span<const std::string> known_covariates);

// sum over strata of eta_case - log sum_i exp(eta_i); beta covers every term
// of spec (fixed ones included).
double conditional_loglik(const StepTable& table, const SsfSpec& spec, std::span<const double> beta);
std::vector<double> conditional_score(const StepTable& table, const SsfSpec& spec, std::span<const double> beta);

// Newton-Raphson with step halving, optimize_mle fallback. The stratum
// intercepts cancel and are not reported. Throws SingularDesign,
// SeparationDetected, UnknownCovariate.
FitResult fit_conditional_logistic(const StepTable& table, const SsfSpec& spec);

struct KernelUpdateOptions {
  bool shape = true;
  bool rate = true;
  bool concentration = true;
};

// shape' = shape + b_ln_l + sum_cov b_{cov:ln_l} x_cov, rate' = rate - b_l,
// kappa' = kappa + b_cos_theta. Absent movement terms count as 0. Throws
// InvalidUpdatedKernel naming the term whose update left the domain.
MovementKernel update_movement_kernel(const MovementKernel& kernel, const FitResult& fit,
                                      const std::map<std::string, double>& x,
                                      const KernelUpdateOptions& options = {});

}  // namespace movesel
