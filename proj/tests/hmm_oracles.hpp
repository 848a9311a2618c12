#pragma once

// Direct, enumeration-based reference computations for HMM tests.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "movesel/distributions.hpp"
#include "movesel/hmm.hpp"
#include "movesel/rng.hpp"
#include "movesel/track.hpp"

namespace hmmoracle {

using namespace movesel;

inline const std::vector<std::string> kCovs{"u", "v"};

// Steps with random lengths, turns and covariates u, v. burst_starts lists the
// indices where a new burst begins (0 implied).
inline StepSeries random_series(std::size_t T, std::vector<std::size_t> burst_starts, Rng& rng) {
  StepSeries s;
  s.covariate_names = kCovs;
  std::size_t burst = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const bool first = t == 0 || std::find(burst_starts.begin(), burst_starts.end(), t) != burst_starts.end();
    if (first && t > 0) ++burst;
    Step st;
    st.burst = burst;
    st.length = std::exp(4.0 + rng.normal() * 1.5);  // meters
    st.heading = 0.0;
    if (!first) st.turn = rng.uniform(-3.14159, 3.14159);
    st.covariates = {rng.normal(), rng.normal()};
    s.steps.push_back(st);
  }
  return s;
}

inline HmmModel random_model(std::size_t n, std::vector<std::string> tcovs, std::vector<std::string> ocovs, Rng& rng) {
  HmmModel m = HmmModel::make(n, tcovs, ocovs);
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = std::exp(4.0 + rng.normal());
    m.states[i].step = GammaParams{mean, mean * rng.uniform(0.3, 1.5)};
    m.states[i].angle = VonMisesParams{0.0, rng.uniform(0.0, 3.0)};
    for (double& s : m.states[i].mean_slopes) s = rng.normal() * 0.5;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j)
        for (double& b : m.transition[i * n + j]) b = rng.normal();
  double total = 0.0;
  for (double& d : m.delta) total += (d = rng.uniform(0.1, 1.0));
  for (double& d : m.delta) d /= total;
  return m;
}

inline double value_of(const StepSeries& s, std::size_t t, const std::string& name) {
  return s.steps[t].covariates[*s.covariate_index(name)];
}

// Softmax of the multinomial logit written out directly.
inline std::vector<std::vector<double>> gamma_oracle(const HmmModel& m, const StepSeries& s, std::size_t t) {
  const std::size_t n = m.n_states;
  std::vector<std::vector<double>> g(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double eta = 0.0;
      if (i != j) {
        eta = m.beta(i, j, 0);
        for (std::size_t k = 0; k < m.transition_covariates.size(); ++k)
          eta += m.beta(i, j, k + 1) * value_of(s, t, m.transition_covariates[k]);
      }
      total += (g[i][j] = std::exp(eta));
    }
    for (double& v : g[i]) v /= total;
  }
  return g;
}

inline double log_p_oracle(const HmmModel& m, const StepSeries& s, std::size_t t, std::size_t state) {
  double log_mean = std::log(m.states[state].step.mean);
  for (std::size_t k = 0; k < m.obs_covariates.size(); ++k)
    log_mean += m.states[state].mean_slopes[k] * value_of(s, t, m.obs_covariates[k]);
  const GammaParams step{std::exp(log_mean), m.states[state].step.sd};
  double v = gamma_logpdf(s.steps[t].model_length(), step);
  if (s.steps[t].turn) v += vonmises_logpdf(*s.steps[t].turn, m.states[state].angle);
  return v;
}

inline std::vector<double> stationary_by_power(std::vector<std::vector<double>> g) {
  const std::size_t n = g.size();
  for (int r = 0; r < 20; ++r) {  // g^(2^20)
    std::vector<std::vector<double>> sq(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < n; ++j) sq[i][j] += g[i][k] * g[k][j];
    g = sq;
  }
  return g[0];
}

inline std::vector<double> initial_oracle(const HmmModel& m, const StepSeries& s, std::size_t first) {
  if (m.initial == InitialDistribution::Free) return m.delta;
  return stationary_by_power(gamma_oracle(m, s, first));
}

// Joint log probability of one state path over one burst.
inline double path_logprob(const HmmModel& m, const StepSeries& s, std::size_t b, std::size_t e,
                    const std::vector<std::size_t>& z) {
  double v = std::log(initial_oracle(m, s, b)[z[0]]) + log_p_oracle(m, s, b, z[0]);
  for (std::size_t t = b + 1; t < e; ++t) {
    v += std::log(gamma_oracle(m, s, t - 1)[z[t - b - 1]][z[t - b]]) + log_p_oracle(m, s, t, z[t - b]);
  }
  return v;
}

template <typename Visit>
void for_each_path(std::size_t n, std::size_t len, Visit&& visit) {
  std::vector<std::size_t> z(len, 0);
  for (;;) {
    visit(z);
    std::size_t k = 0;
    while (k < len && ++z[k] == n) z[k++] = 0;
    if (k == len) return;
  }
}

inline double brute_force_loglik(const HmmModel& m, const StepSeries& s) {
  double total = 0.0;
  for (const auto& [b, e] : s.burst_ranges()) {
    double sum = 0.0;
    for_each_path(m.n_states, e - b, [&](const std::vector<std::size_t>& z) { sum += std::exp(path_logprob(m, s, b, e, z)); });
    total += std::log(sum);
  }
  return total;
}

inline std::vector<std::vector<std::size_t>> brute_force_viterbi(const HmmModel& m, const StepSeries& s) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& [b, e] : s.burst_ranges()) {
    double best = -1e300;
    std::vector<std::size_t> arg;
    for_each_path(m.n_states, e - b, [&](const std::vector<std::size_t>& z) {
      const double v = path_logprob(m, s, b, e, z);
      if (v > best) {
        best = v;
        arg = z;
      }
    });
    out.push_back(arg);
  }
  return out;
}

}  // namespace hmmoracle
