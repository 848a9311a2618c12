#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "movesel/distributions.hpp"
#include "movesel/optimize.hpp"
#include "movesel/raster.hpp"
#include "movesel/rng.hpp"
#include "movesel/track.hpp"

namespace movesel {

enum class InitialDistribution {
  Free,        // simplex parameters shared by every burst
  Stationary,  // stationary distribution of the burst's first transition matrix
};

struct StateObservation {
  GammaParams step;                 // at covariates = 0
  VonMisesParams angle;
  std::vector<double> mean_slopes;  // on log step mean, aligned with obs_covariates
};

// N-state movement HMM. States are 0-based in the API and 1-based in files.
struct HmmModel {
  std::size_t n_states = 1;
  std::vector<StateObservation> states;
  std::vector<std::string> transition_covariates;
  std::vector<std::string> obs_covariates;
  // transition[i * N + j] = {intercept, slope_1, ..., slope_K}; the diagonal
  // entries stay zero (reference category).
  std::vector<std::vector<double>> transition;
  std::vector<double> delta;
  InitialDistribution initial = InitialDistribution::Free;
  bool estimate_angle_mean = false;

  // Zero coefficients, uniform delta, unit-mean gamma, kappa 0.
  static HmmModel make(std::size_t n_states, std::vector<std::string> transition_covariates = {},
                       std::vector<std::string> obs_covariates = {});

  double& beta(std::size_t from, std::size_t to, std::size_t k) { return transition[from * n_states + to][k]; }
  double beta(std::size_t from, std::size_t to, std::size_t k) const { return transition[from * n_states + to][k]; }
};

// Row-wise multinomial logit; x aligned with transition_covariates.
Eigen::MatrixXd transition_matrix(const HmmModel& model, std::span<const double> x);
// Named lookup; throws MissingCovariate.
Eigen::MatrixXd transition_matrix(const HmmModel& model, const std::map<std::string, double>& x);

struct ObsParams {
  GammaParams step;
  VonMisesParams angle;
};

// log step mean = log(base mean) + sum_k slope_k x_k; sd and kappa unchanged.
// x aligned with obs_covariates; state is 0-based.
ObsParams obs_params_at(const HmmModel& model, std::size_t state, std::span<const double> x);
ObsParams obs_params_at(const HmmModel& model, std::size_t state, const std::map<std::string, double>& x);

// Log-space forward recursion with per-step scaling, summed over bursts; each
// burst restarts from delta. Missing turn angles contribute only the step
// length factor. Throws MissingCovariate / InvalidObservation.
double hmm_loglik(const HmmModel& model, const StepSeries& steps);

// Most probable state path per burst (0-based); ties go to the lower index.
std::vector<std::vector<std::size_t>> viterbi_decode(const HmmModel& model, const StepSeries& steps);

// Smoothed P(Z_t = i | all data), one row per step.
Eigen::MatrixXd state_probabilities(const HmmModel& model, const StepSeries& steps);

// pi with pi Gamma = pi, sum pi = 1. Throws NonStochasticInput for
// non-square, negative, non-unit-row or reducible input.
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& gamma);

// Working-scale (unconstrained) parameter vector and its labels.
std::vector<double> hmm_working_parameters(const HmmModel& model);
std::vector<std::string> hmm_parameter_names(const HmmModel& model);
// Inverse of hmm_working_parameters, using `shape` for structure.
HmmModel hmm_from_working(const HmmModel& shape, std::span<const double> working);

struct HmmFitConfig {
  std::size_t restarts = 25;
  InitialDistribution initial = InitialDistribution::Free;
  bool estimate_angle_mean = false;
  OptConfig optimizer{};
  std::size_t threads = 1;
};

struct RestartRecord {
  std::size_t index = 0;
  double init_loglik = 0.0;
  double loglik = 0.0;
  bool converged = false;
  std::size_t n_evals = 0;
  bool failed = false;
  std::string error;
};

struct HmmFit {
  HmmModel model;
  double loglik = 0.0;
  bool converged = false;
  std::size_t n_obs = 0;
  std::vector<std::string> parameter_names;
  std::vector<double> working;
  std::vector<double> se;
  std::vector<bool> se_valid;
  Eigen::MatrixXd covariance;  // working scale
  std::vector<RestartRecord> restarts;
  std::size_t best_restart = 0;
  // Base step means after relabeling; strictly ascending when the ordering
  // is unambiguous.
  std::vector<double> state_order_means;
  std::vector<std::string> warnings;
};

// Best of config.restarts seeded initializations, each maximized by
// optimize_mle; states relabeled by ascending mean step length. Throws
// AllRestartsFailed.
HmmFit fit_hmm(const StepSeries& steps, std::size_t n_states, const std::vector<std::string>& transition_covariates,
               const std::vector<std::string>& obs_covariates, const HmmFitConfig& config, const Rng& rng);

struct HmmSimulationOptions {
  Point start{0.0, 0.0};
  double initial_heading = 0.0;
  double t0 = 0.0;
  double interval_s = 1.0;
  std::string id = "sim";
};

struct SimulatedPath {
  Track track;                      // n_steps + 1 locations
  std::vector<std::size_t> states;  // one per step, 0-based
};

// z_1 ~ delta, z_{t+1} ~ Gamma(x_t)[z_t, .]; covariate_rows[t] aligned with
// covariate_names (empty for a covariate-free model).
SimulatedPath simulate_hmm(const HmmModel& model, std::size_t n_steps, const std::vector<std::string>& covariate_names,
                           std::span<const std::vector<double>> covariate_rows, Rng& rng,
                           const HmmSimulationOptions& options = {});

// As simulate_hmm, but each step's covariates are read from the grids at its
// end point. Steps leaving the grids (or landing on nodata) are redrawn;
// ExtentExhausted after 1000 consecutive failures.
SimulatedPath simulate_hmm_on_landscape(const HmmModel& model, std::size_t n_steps, const CovariateStack& grids,
                                        Rng& rng, const HmmSimulationOptions& options = {});

}  // namespace movesel
