#include "movesel/hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>
#include <tuple>

#include "movesel/error.hpp"

namespace movesel {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

void check_shape(const HmmModel& m) {
  const std::size_t n = m.n_states;
  if (n == 0) throw Error(ErrorKind::DomainError, "HMM needs at least one state");
  if (m.states.size() != n || m.transition.size() != n * n || (m.initial == InitialDistribution::Free && m.delta.size() != n)) {
    throw Error(ErrorKind::DomainError, "HMM parameter arrays do not match n_states");
  }
  for (const auto& s : m.states) {
    if (s.mean_slopes.size() != m.obs_covariates.size()) {
      throw Error(ErrorKind::DomainError, "observation slopes do not match obs_covariates");
    }
  }
  for (const auto& b : m.transition) {
    if (b.size() != m.transition_covariates.size() + 1) {
      throw Error(ErrorKind::DomainError, "transition coefficients do not match transition_covariates");
    }
  }
}

std::vector<double> lookup(const std::vector<std::string>& names, const std::map<std::string, double>& x) {
  std::vector<double> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    auto it = x.find(name);
    if (it == x.end()) throw Error(ErrorKind::MissingCovariate, "no value for covariate '" + name + "'");
    out.push_back(it->second);
  }
  return out;
}

// Per-step inputs resolved once against the model's covariate names.
struct HmmData {
  std::vector<double> length;
  std::vector<double> log_length;
  std::vector<double> cos_turn;
  std::vector<double> sin_turn;
  std::vector<char> has_turn;
  std::size_t kt = 0;
  std::size_t ko = 0;
  std::vector<double> xt;  // row-major T x kt
  std::vector<double> xo;  // row-major T x ko
  std::vector<std::pair<std::size_t, std::size_t>> bursts;

  std::size_t size() const { return length.size(); }
  std::span<const double> trans_x(std::size_t t) const { return {xt.data() + t * kt, kt}; }
  std::span<const double> obs_x(std::size_t t) const { return {xo.data() + t * ko, ko}; }
};

std::vector<std::size_t> resolve(const StepSeries& steps, const std::vector<std::string>& names) {
  std::vector<std::size_t> idx;
  for (const auto& name : names) {
    auto i = steps.covariate_index(name);
    if (!i) throw Error(ErrorKind::MissingCovariate, "step series has no covariate '" + name + "'");
    idx.push_back(*i);
  }
  return idx;
}

HmmData prepare(const StepSeries& steps, const std::vector<std::string>& tcov, const std::vector<std::string>& ocov) {
  const auto ti = resolve(steps, tcov);
  const auto oi = resolve(steps, ocov);
  HmmData d;
  d.kt = ti.size();
  d.ko = oi.size();
  const std::size_t n = steps.size();
  d.length.reserve(n);
  d.log_length.reserve(n);
  d.cos_turn.reserve(n);
  d.sin_turn.reserve(n);
  d.has_turn.reserve(n);
  d.xt.reserve(n * d.kt);
  d.xo.reserve(n * d.ko);
  for (std::size_t t = 0; t < n; ++t) {
    const Step& s = steps.steps[t];
    const double l = s.model_length();
    if (!std::isfinite(l) || l <= 0.0) {
      throw Error(ErrorKind::InvalidObservation, "step " + std::to_string(t) + " has a non-positive or non-finite length");
    }
    d.length.push_back(l);
    d.log_length.push_back(std::log(l));
    if (s.turn) {
      if (!std::isfinite(*s.turn)) {
        throw Error(ErrorKind::InvalidObservation, "step " + std::to_string(t) + " has a non-finite turn angle");
      }
      d.cos_turn.push_back(std::cos(*s.turn));
      d.sin_turn.push_back(std::sin(*s.turn));
      d.has_turn.push_back(1);
    } else {
      d.cos_turn.push_back(0.0);
      d.sin_turn.push_back(0.0);
      d.has_turn.push_back(0);
    }
    auto take = [&](const std::vector<std::size_t>& idx, std::vector<double>& dst, const std::string& what) {
      for (std::size_t k : idx) {
        const double v = k < s.covariates.size() ? s.covariates[k] : std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(v)) {
          throw Error(ErrorKind::InvalidObservation,
                      "step " + std::to_string(t) + " has no value for " + what + " covariate '" + steps.covariate_names[k] + "'");
        }
        dst.push_back(v);
      }
    };
    take(ti, d.xt, "transition");
    take(oi, d.xo, "observation");
  }
  d.bursts = steps.burst_ranges();
  return d;
}

// Row-major softmax rows into out[n * n]; eta needs n entries.
void softmax_rows(const HmmModel& m, std::span<const double> x, double* out, double* eta) {
  const std::size_t n = m.n_states;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = 0.0;  // diagonal logit
    for (std::size_t j = 0; j < n; ++j) {
      double e = 0.0;
      if (i != j) {
        const auto& b = m.transition[i * n + j];
        e = b[0];
        for (std::size_t k = 0; k < x.size(); ++k) e += b[k + 1] * x[k];
      }
      eta[j] = e;
      mx = std::max(mx, e);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      eta[j] = std::exp(eta[j] - mx);
      sum += eta[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = eta[j] * inv;
  }
}

void fill_gamma(const HmmModel& m, std::span<const double> x, Eigen::MatrixXd& g) {
  const std::size_t n = m.n_states;
  std::vector<double> buf(n * n);
  std::vector<double> eta(n);
  softmax_rows(m, x, buf.data(), eta.data());
  g.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = buf[i * n + j];
  }
}

bool transition_has_covariates(const HmmModel& m) { return !m.transition_covariates.empty(); }

// T x N matrix of log p_i(y_t).
Eigen::MatrixXd log_obs(const HmmModel& m, const HmmData& d) {
  const std::size_t n = m.n_states;
  const std::size_t T = d.size();
  Eigen::MatrixXd lp(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = m.states[i];
    const double base_mean = s.step.mean;
    const double sd = s.step.sd;
    const double kappa = s.angle.kappa;
    const double vm_const = -kLog2Pi - log_bessel_i0(kappa);
    const double cmu = std::cos(s.angle.mu);
    const double smu = std::sin(s.angle.mu);
    const bool varying = d.ko > 0;
    double shape = base_mean * base_mean / (sd * sd);
    double rate = base_mean / (sd * sd);
    double gconst = shape * std::log(rate) - std::lgamma(shape);
    for (std::size_t t = 0; t < T; ++t) {
      if (varying) {
        double lm = std::log(base_mean);
        auto x = d.obs_x(t);
        for (std::size_t k = 0; k < d.ko; ++k) lm += s.mean_slopes[k] * x[k];
        const double mean = std::exp(lm);
        shape = mean * mean / (sd * sd);
        rate = mean / (sd * sd);
        gconst = shape * std::log(rate) - std::lgamma(shape);
      }
      double v = gconst + (shape - 1.0) * d.log_length[t] - rate * d.length[t];
      if (d.has_turn[t]) v += kappa * (d.cos_turn[t] * cmu + d.sin_turn[t] * smu) + vm_const;
      lp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return lp;
}

Eigen::RowVectorXd initial_row(const HmmModel& m, const HmmData& d, std::size_t first, Eigen::MatrixXd& scratch) {
  const auto n = static_cast<Eigen::Index>(m.n_states);
  if (m.initial == InitialDistribution::Stationary) {
    fill_gamma(m, d.trans_x(first), scratch);
    return stationary_distribution(scratch).transpose();
  }
  Eigen::RowVectorXd delta(n);
  for (Eigen::Index i = 0; i < n; ++i) delta(i) = m.delta[static_cast<std::size_t>(i)];
  return delta;
}

double loglik_prepared(const HmmModel& m, const HmmData& d) {
  const Eigen::MatrixXd lp = log_obs(m, d);
  const std::size_t n = m.n_states;
  const bool varying = transition_has_covariates(m);
  std::vector<double> gamma(n * n);  // row-major
  std::vector<double> eta(n);
  if (!varying) softmax_rows(m, {}, gamma.data(), eta.data());
  // Off-diagonal coefficients flattened as [i][j][k] for the per-step softmax.
  const std::size_t kp = m.transition_covariates.size() + 1;
  std::vector<double> coef(n * n * kp);
  for (std::size_t ij = 0; ij < n * n; ++ij) std::copy(m.transition[ij].begin(), m.transition[ij].end(), coef.begin() + ij * kp);
  Eigen::MatrixXd scratch;
  double total = 0.0;
  // Scale factors are multiplied together and logged only when the running
  // product nears the floating-point range limits.
  double scale = 1.0;
  std::vector<double> alpha(n);
  std::vector<double> next(n);
  std::vector<double> row(n);
  for (const auto& [b, e] : d.bursts) {
    for (std::size_t t = b; t < e; ++t) {
      double mx = kNegInf;
      for (std::size_t i = 0; i < n; ++i) {
        row[i] = lp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
        mx = std::max(mx, row[i]);
      }
      if (!std::isfinite(mx)) return kNegInf;
      if (t == b) {
        const Eigen::RowVectorXd delta = initial_row(m, d, b, scratch);
        for (std::size_t i = 0; i < n; ++i) next[i] = delta(static_cast<Eigen::Index>(i));
      } else {
        if (varying) {
          const double* x = d.xt.data() + (t - 1) * d.kt;
          for (std::size_t i = 0; i < n; ++i) {
            double mx_eta = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              if (i == j) {
                eta[j] = 0.0;
                continue;
              }
              const double* c = coef.data() + (i * n + j) * kp;
              double v = c[0];
              for (std::size_t k = 1; k < kp; ++k) v += c[k] * x[k - 1];
              eta[j] = v;
              mx_eta = std::max(mx_eta, v);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              eta[j] = std::exp(eta[j] - mx_eta);
              sum += eta[j];
            }
            const double inv = 1.0 / sum;
            for (std::size_t j = 0; j < n; ++j) gamma[i * n + j] = eta[j] * inv;
          }
        }
        for (std::size_t j = 0; j < n; ++j) next[j] = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double a = alpha[i];
          const double* g = gamma.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) next[j] += a * g[j];
        }
      }
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        next[i] *= std::exp(row[i] - mx);
        c += next[i];
      }
      if (!(c > 0.0) || !std::isfinite(c)) return kNegInf;
      const double inv = 1.0 / c;
      for (std::size_t i = 0; i < n; ++i) alpha[i] = next[i] * inv;
      total += mx;
      scale *= c;
      if (scale < 1e-250 || scale > 1e250) {
        total += std::log(scale);
        scale = 1.0;
      }
    }
  }
  return total + std::log(scale);
}

}  // namespace

HmmModel HmmModel::make(std::size_t n_states, std::vector<std::string> transition_covariates,
                        std::vector<std::string> obs_covariates) {
  if (n_states == 0) throw Error(ErrorKind::DomainError, "HMM needs at least one state");
  HmmModel m;
  m.n_states = n_states;
  m.transition_covariates = std::move(transition_covariates);
  m.obs_covariates = std::move(obs_covariates);
  m.states.assign(n_states, StateObservation{GammaParams{1.0, 1.0}, VonMisesParams{0.0, 0.0},
                                             std::vector<double>(m.obs_covariates.size(), 0.0)});
  m.transition.assign(n_states * n_states, std::vector<double>(m.transition_covariates.size() + 1, 0.0));
  m.delta.assign(n_states, 1.0 / static_cast<double>(n_states));
  return m;
}

Eigen::MatrixXd transition_matrix(const HmmModel& model, std::span<const double> x) {
  check_shape(model);
  if (x.size() != model.transition_covariates.size()) {
    throw Error(ErrorKind::MissingCovariate, "expected " + std::to_string(model.transition_covariates.size()) +
                                                 " transition covariate values, got " + std::to_string(x.size()));
  }
  Eigen::MatrixXd g;
  fill_gamma(model, x, g);
  return g;
}

Eigen::MatrixXd transition_matrix(const HmmModel& model, const std::map<std::string, double>& x) {
  const auto v = lookup(model.transition_covariates, x);
  return transition_matrix(model, std::span<const double>(v));
}

ObsParams obs_params_at(const HmmModel& model, std::size_t state, std::span<const double> x) {
  check_shape(model);
  if (state >= model.n_states) throw Error(ErrorKind::DomainError, "state index out of range");
  if (x.size() != model.obs_covariates.size()) {
    throw Error(ErrorKind::MissingCovariate, "expected " + std::to_string(model.obs_covariates.size()) +
                                                 " observation covariate values, got " + std::to_string(x.size()));
  }
  const auto& s = model.states[state];
  double lm = std::log(s.step.mean);
  for (std::size_t k = 0; k < x.size(); ++k) lm += s.mean_slopes[k] * x[k];
  return ObsParams{GammaParams{std::exp(lm), s.step.sd}, s.angle};
}

ObsParams obs_params_at(const HmmModel& model, std::size_t state, const std::map<std::string, double>& x) {
  const auto v = lookup(model.obs_covariates, x);
  return obs_params_at(model, state, std::span<const double>(v));
}

double hmm_loglik(const HmmModel& model, const StepSeries& steps) {
  check_shape(model);
  const HmmData d = prepare(steps, model.transition_covariates, model.obs_covariates);
  return loglik_prepared(model, d);
}

std::vector<std::vector<std::size_t>> viterbi_decode(const HmmModel& model, const StepSeries& steps) {
  check_shape(model);
  const HmmData d = prepare(steps, model.transition_covariates, model.obs_covariates);
  const Eigen::MatrixXd lp = log_obs(model, d);
  const std::size_t n = model.n_states;
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd scratch;
  if (!transition_has_covariates(model)) fill_gamma(model, {}, gamma);
  std::vector<std::vector<std::size_t>> out;
  for (const auto& [b, e] : d.bursts) {
    const std::size_t len = e - b;
    std::vector<double> score(n);
    std::vector<double> next(n);
    std::vector<std::size_t> back(len * n, 0);
    const Eigen::RowVectorXd delta = initial_row(model, d, b, scratch);
    for (std::size_t i = 0; i < n; ++i) {
      score[i] = std::log(delta(static_cast<Eigen::Index>(i))) + lp(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i));
    }
    for (std::size_t t = b + 1; t < e; ++t) {
      if (transition_has_covariates(model)) fill_gamma(model, d.trans_x(t - 1), gamma);
      for (std::size_t j = 0; j < n; ++j) {
        double best = kNegInf;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const double v = score[i] + std::log(gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        next[j] = best + lp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
        back[(t - b) * n + j] = arg;
      }
      score.swap(next);
    }
    std::vector<std::size_t> path(len);
    std::size_t arg = 0;
    double best = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
      if (score[i] > best) {
        best = score[i];
        arg = i;
      }
    }
    if (!std::isfinite(best)) throw Error(ErrorKind::InvalidObservation, "every state path has zero probability");
    path[len - 1] = arg;
    for (std::size_t k = len - 1; k > 0; --k) path[k - 1] = back[k * n + path[k]];
    out.push_back(std::move(path));
  }
  return out;
}

Eigen::MatrixXd state_probabilities(const HmmModel& model, const StepSeries& steps) {
  check_shape(model);
  const HmmData d = prepare(steps, model.transition_covariates, model.obs_covariates);
  const Eigen::MatrixXd lp = log_obs(model, d);
  const auto n = static_cast<Eigen::Index>(model.n_states);
  const auto T = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXd alpha(T, n);
  Eigen::MatrixXd probs(T, n);
  Eigen::MatrixXd gamma;
  Eigen::MatrixXd scratch;
  if (!transition_has_covariates(model)) fill_gamma(model, {}, gamma);
  auto gamma_at = [&](std::size_t t) {
    if (transition_has_covariates(model)) fill_gamma(model, d.trans_x(t), gamma);
  };
  Eigen::MatrixXd p(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mx = lp.row(t).maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) p(t, i) = std::exp(lp(t, i) - mx);
  }
  for (const auto& [b, e] : d.bursts) {
    const auto bi = static_cast<Eigen::Index>(b);
    const auto ei = static_cast<Eigen::Index>(e);
    Eigen::RowVectorXd a = initial_row(model, d, b, scratch).cwiseProduct(p.row(bi));
    alpha.row(bi) = a / a.sum();
    for (Eigen::Index t = bi + 1; t < ei; ++t) {
      gamma_at(static_cast<std::size_t>(t - 1));
      a = (alpha.row(t - 1) * gamma).cwiseProduct(p.row(t));
      const double c = a.sum();
      if (!(c > 0.0)) throw Error(ErrorKind::InvalidObservation, "observation sequence has zero probability");
      alpha.row(t) = a / c;
    }
    Eigen::VectorXd beta = Eigen::VectorXd::Ones(n);
    for (Eigen::Index t = ei - 1; t >= bi; --t) {
      Eigen::RowVectorXd post = alpha.row(t).cwiseProduct(beta.transpose());
      probs.row(t) = post / post.sum();
      if (t == bi) break;
      gamma_at(static_cast<std::size_t>(t - 1));
      beta = gamma * p.row(t).transpose().cwiseProduct(beta);
      beta /= beta.sum();
    }
  }
  return probs;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& gamma) {
  const Eigen::Index n = gamma.rows();
  if (n == 0 || gamma.cols() != n) throw Error(ErrorKind::NonStochasticInput, "transition matrix must be square and non-empty");
  for (Eigen::Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = gamma(i, j);
      if (!std::isfinite(v) || v < -1e-12) {
        throw Error(ErrorKind::NonStochasticInput, "transition matrix has a negative or non-finite entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw Error(ErrorKind::NonStochasticInput, "row " + std::to_string(i + 1) + " sums to " + std::to_string(sum));
    }
  }
  // pi (I - Gamma + U) = 1, where U is all ones.
  const Eigen::MatrixXd a = (Eigen::MatrixXd::Identity(n, n) - gamma + Eigen::MatrixXd::Ones(n, n)).transpose();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw Error(ErrorKind::NonStochasticInput, "transition matrix is reducible");
  Eigen::VectorXd pi = lu.solve(Eigen::VectorXd::Ones(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pi(i) < -1e-12) throw Error(ErrorKind::NonStochasticInput, "transition matrix is reducible");
    pi(i) = std::max(pi(i), 0.0);
  }
  return pi / pi.sum();
}

std::vector<double> hmm_working_parameters(const HmmModel& model) {
  check_shape(model);
  const std::size_t n = model.n_states;
  std::vector<double> w;
  for (const auto& s : model.states) {
    w.push_back(std::log(s.step.mean));
    w.insert(w.end(), s.mean_slopes.begin(), s.mean_slopes.end());
    w.push_back(std::log(s.step.sd));
    w.push_back(std::log(std::max(s.angle.kappa, 1e-8)));
    if (model.estimate_angle_mean) w.push_back(s.angle.mu);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& b = model.transition[i * n + j];
      w.insert(w.end(), b.begin(), b.end());
    }
  }
  if (model.initial == InitialDistribution::Free) {
    const double ref = std::log(std::max(model.delta[0], 1e-12));
    for (std::size_t i = 1; i < n; ++i) w.push_back(std::log(std::max(model.delta[i], 1e-12)) - ref);
  }
  return w;
}

std::vector<std::string> hmm_parameter_names(const HmmModel& model) {
  check_shape(model);
  const std::size_t n = model.n_states;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "state" + std::to_string(i + 1) + ".";
    names.push_back(p + "log_step_mean");
    for (const auto& c : model.obs_covariates) names.push_back(p + "step_mean." + c);
    names.push_back(p + "log_step_sd");
    names.push_back(p + "log_kappa");
    if (model.estimate_angle_mean) names.push_back(p + "angle_mean");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const std::string p = "gamma" + std::to_string(i + 1) + "->" + std::to_string(j + 1) + ".";
      names.push_back(p + "intercept");
      for (const auto& c : model.transition_covariates) names.push_back(p + c);
    }
  }
  if (model.initial == InitialDistribution::Free) {
    for (std::size_t i = 1; i < n; ++i) names.push_back("delta" + std::to_string(i + 1) + ".logit");
  }
  return names;
}

HmmModel hmm_from_working(const HmmModel& shape, std::span<const double> w) {
  check_shape(shape);
  HmmModel m = shape;
  const std::size_t n = m.n_states;
  std::size_t k = 0;
  auto next = [&]() {
    if (k >= w.size()) throw Error(ErrorKind::DomainError, "working parameter vector is too short");
    return w[k++];
  };
  for (auto& s : m.states) {
    s.step.mean = std::exp(next());
    for (auto& b : s.mean_slopes) b = next();
    s.step.sd = std::exp(next());
    s.angle.kappa = std::exp(next());
    s.angle.mu = m.estimate_angle_mean ? wrap_angle(next()) : s.angle.mu;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      auto& b = m.transition[i * n + j];
      if (i == j) {
        std::fill(b.begin(), b.end(), 0.0);
        continue;
      }
      for (auto& v : b) v = next();
    }
  }
  if (m.initial == InitialDistribution::Free) {
    std::vector<double> logits(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) logits[i] = next();
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m.delta[i] = std::exp(logits[i] - mx);
      sum += m.delta[i];
    }
    for (auto& v : m.delta) v /= sum;
  }
  if (k != w.size()) throw Error(ErrorKind::DomainError, "working parameter vector is too long");
  return m;
}

namespace {

HmmModel permute_states(const HmmModel& m, const std::vector<std::size_t>& order) {
  // New state k is old state order[k].
  HmmModel out = m;
  const std::size_t n = m.n_states;
  for (std::size_t a = 0; a < n; ++a) {
    out.states[a] = m.states[order[a]];
    if (m.initial == InitialDistribution::Free) out.delta[a] = m.delta[order[a]];
    for (std::size_t b = 0; b < n; ++b) out.transition[a * n + b] = m.transition[order[a] * n + order[b]];
  }
  // Transition logits are relative to the diagonal, which is preserved by a
  // simultaneous row/column permutation.
  return out;
}

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

HmmFit fit_hmm(const StepSeries& steps, std::size_t n_states, const std::vector<std::string>& transition_covariates,
               const std::vector<std::string>& obs_covariates, const HmmFitConfig& config, const Rng& rng) {
  if (n_states == 0) throw Error(ErrorKind::DomainError, "n_states must be at least 1");
  if (config.restarts == 0) throw Error(ErrorKind::DomainError, "restarts must be at least 1");
  const HmmData data = prepare(steps, transition_covariates, obs_covariates);
  if (data.size() == 0) throw Error(ErrorKind::TooFewSteps, "no steps to fit");

  HmmModel shape = HmmModel::make(n_states, transition_covariates, obs_covariates);
  shape.initial = config.initial;
  shape.estimate_angle_mean = config.estimate_angle_mean;
  if (config.initial == InitialDistribution::Stationary) shape.delta.clear();

  HmmFitConfig cfg = config;
  if (cfg.optimizer.simplex_max_evals == 0) {
    // A short simplex phase is enough to leave the initial neighbourhood; the
    // quasi-Newton stage does the real work on this surface.
    cfg.optimizer.simplex_max_evals = 25 * hmm_working_parameters(shape).size() + 100;
  }

  const Objective objective = [&](std::span<const double> w) {
    try {
      return loglik_prepared(hmm_from_working(shape, w), data);
    } catch (const Error&) {
      return kNegInf;
    }
  };

  const auto initial_model = [&](std::size_t r) {
    Rng child = rng.derive("hmm-restart:" + std::to_string(r));
    HmmModel m = shape;
    for (std::size_t i = 0; i < n_states; ++i) {
      const double q = quantile(data.length, (static_cast<double>(i) + 0.5) / static_cast<double>(n_states));
      const double mean = std::max(q, kMinStepLength) * child.uniform(0.8, 1.2);
      m.states[i].step = GammaParams{mean, 0.5 * mean * child.uniform(0.8, 1.2)};
      m.states[i].angle = VonMisesParams{0.0, child.uniform(0.1, 2.0)};
    }
    for (std::size_t i = 0; i < n_states; ++i) {
      for (std::size_t j = 0; j < n_states; ++j) {
        if (i != j) m.beta(i, j, 0) = child.uniform(-3.0, -1.0);
      }
    }
    return m;
  };

  std::vector<RestartRecord> records(config.restarts);
  std::vector<std::vector<double>> argmax(config.restarts);
  std::vector<char> converged(config.restarts, 0);
  const auto run_restart = [&](std::size_t r) {
    RestartRecord& rec = records[r];
    rec.index = r;
    try {
      const auto init = hmm_working_parameters(initial_model(r));
      rec.init_loglik = objective(init);
      const OptResult res = optimize_mle(objective, init, cfg.optimizer);
      rec.loglik = res.loglik;
      rec.converged = res.converged;
      rec.n_evals = res.n_evals;
      converged[r] = res.converged ? 1 : 0;
      argmax[r] = res.argmax;
      if (!std::isfinite(res.loglik)) {
        rec.failed = true;
        rec.error = "non-finite log-likelihood at optimum";
      }
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.loglik = kNegInf;
      rec.error = e.what();
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(config.threads, config.restarts));
  if (threads == 1) {
    for (std::size_t r = 0; r < config.restarts; ++r) run_restart(r);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < config.restarts; r += threads) run_restart(r);
      });
    }
    for (auto& t : pool) t.join();
  }

  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < config.restarts; ++r) {
    if (records[r].failed) continue;
    if (!best || records[r].loglik > records[*best].loglik) best = r;
  }
  if (!best) {
    std::string msg = "all " + std::to_string(config.restarts) + " restarts failed";
    if (!records.empty()) msg += "; first error: " + records[0].error;
    throw Error(ErrorKind::AllRestartsFailed, msg);
  }

  HmmModel fitted = hmm_from_working(shape, argmax[*best]);
  std::vector<std::size_t> order(n_states);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fitted.states[a].step.mean < fitted.states[b].step.mean;
  });
  fitted = permute_states(fitted, order);

  HmmFit fit;
  fit.model = fitted;
  fit.working = hmm_working_parameters(fitted);
  fit.loglik = objective(fit.working);
  fit.converged = converged[*best] != 0;
  fit.n_obs = data.size();
  fit.parameter_names = hmm_parameter_names(fitted);
  fit.restarts = std::move(records);
  fit.best_restart = *best;
  for (const auto& s : fitted.states) fit.state_order_means.push_back(s.step.mean);

  StandardErrors se = standard_errors(objective, fit.working);
  const std::size_t n_delta = shape.initial == InitialDistribution::Free ? n_states - 1 : 0;
  if (!se.hessian_ok && n_delta > 0 && fit.working.size() > n_delta) {
    // With one or few bursts the free initial distribution usually sits on a
    // vertex of the simplex, where the likelihood is flat in its logits. Hold
    // those at their estimates and report SEs for everything else.
    const std::size_t m = fit.working.size() - n_delta;
    const Objective reduced = [&](std::span<const double> w) {
      std::vector<double> full = fit.working;
      std::copy(w.begin(), w.end(), full.begin());
      return objective(full);
    };
    const StandardErrors sub = standard_errors(reduced, std::span<const double>(fit.working.data(), m));
    if (sub.hessian_ok) {
      se.se.assign(fit.working.size(), std::numeric_limits<double>::quiet_NaN());
      se.valid.assign(fit.working.size(), false);
      se.covariance = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(fit.working.size()),
                                            static_cast<Eigen::Index>(fit.working.size()));
      for (std::size_t i = 0; i < m; ++i) {
        se.se[i] = sub.se[i];
        se.valid[i] = sub.valid[i];
      }
      se.covariance.topLeftCorner(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)) = sub.covariance;
      se.hessian_ok = true;
      fit.warnings.push_back("initial distribution is on the simplex boundary; its logits have no standard errors");
    }
  }
  fit.se = se.se;
  fit.se_valid = se.valid;
  fit.covariance = se.covariance;
  if (!se.hessian_ok) fit.warnings.push_back("Hessian is not negative definite at the optimum; standard errors are unreliable");
  if (!fit.converged) fit.warnings.push_back("best restart did not meet the gradient tolerance");
  if (data.size() < 10 * fit.working.size()) {
    fit.warnings.push_back("only " + std::to_string(data.size()) + " steps for " + std::to_string(fit.working.size()) +
                           " free parameters");
  }
  for (std::size_t i = 1; i < n_states; ++i) {
    if (!(fit.state_order_means[i] > fit.state_order_means[i - 1])) {
      fit.warnings.push_back("states " + std::to_string(i) + " and " + std::to_string(i + 1) + " have equal step means");
    }
  }
  return fit;
}

namespace {

std::size_t draw_index(const Eigen::Ref<const Eigen::RowVectorXd>& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  const Eigen::Index n = p.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += p(i);
    if (u < acc) return static_cast<std::size_t>(i);
  }
  return static_cast<std::size_t>(n - 1);
}

struct Draw {
  double length;
  double turn;
};

Draw draw_step(const HmmModel& m, std::size_t state, std::span<const double> obs_x, Rng& rng) {
  const ObsParams op = obs_params_at(m, state, obs_x);
  return Draw{sample_gamma(op.step, rng), sample_vonmises(op.angle, rng)};
}

Eigen::RowVectorXd start_distribution(const HmmModel& m, std::span<const double> x0) {
  if (m.initial == InitialDistribution::Stationary) return stationary_distribution(transition_matrix(m, x0)).transpose();
  Eigen::RowVectorXd d(static_cast<Eigen::Index>(m.n_states));
  for (std::size_t i = 0; i < m.n_states; ++i) d(static_cast<Eigen::Index>(i)) = m.delta[i];
  return d;
}

std::vector<double> pick(const std::vector<std::string>& want, const std::vector<std::string>& have,
                         std::span<const double> row) {
  std::vector<double> out;
  for (const auto& name : want) {
    auto it = std::find(have.begin(), have.end(), name);
    if (it == have.end()) throw Error(ErrorKind::MissingCovariate, "covariate series has no column '" + name + "'");
    out.push_back(row[static_cast<std::size_t>(it - have.begin())]);
  }
  return out;
}

}  // namespace

SimulatedPath simulate_hmm(const HmmModel& model, std::size_t n_steps, const std::vector<std::string>& covariate_names,
                           std::span<const std::vector<double>> covariate_rows, Rng& rng,
                           const HmmSimulationOptions& options) {
  check_shape(model);
  if (n_steps < 2) throw Error(ErrorKind::DomainError, "simulation needs at least 2 steps");
  const bool needs_covariates = !model.transition_covariates.empty() || !model.obs_covariates.empty();
  if (needs_covariates && covariate_rows.size() != n_steps) {
    throw Error(ErrorKind::DomainError, "covariate series must have one row per step");
  }
  const std::vector<double> none;
  auto row = [&](std::size_t t) -> std::span<const double> {
    if (covariate_rows.empty()) return none;
    return covariate_rows[t];
  };
  SimulatedPath out;
  out.track.id = options.id;
  out.track.times.push_back(options.t0);
  out.track.coords.push_back(options.start);
  Point pos = options.start;
  double heading = options.initial_heading;
  std::size_t z = draw_index(start_distribution(model, pick(model.transition_covariates, covariate_names, row(0))), rng);
  for (std::size_t t = 0; t < n_steps; ++t) {
    const auto x = row(t);
    const Draw d = draw_step(model, z, pick(model.obs_covariates, covariate_names, x), rng);
    heading = wrap_angle(heading + d.turn);
    pos = Point{pos.x + d.length * std::cos(heading), pos.y + d.length * std::sin(heading)};
    out.states.push_back(z);
    out.track.times.push_back(options.t0 + static_cast<double>(t + 1) * options.interval_s);
    out.track.coords.push_back(pos);
    if (t + 1 < n_steps) {
      const Eigen::MatrixXd g = transition_matrix(model, pick(model.transition_covariates, covariate_names, x));
      z = draw_index(g.row(static_cast<Eigen::Index>(z)), rng);
    }
  }
  return out;
}

SimulatedPath simulate_hmm_on_landscape(const HmmModel& model, std::size_t n_steps, const CovariateStack& grids,
                                        Rng& rng, const HmmSimulationOptions& options) {
  check_shape(model);
  if (n_steps < 2) throw Error(ErrorKind::DomainError, "simulation needs at least 2 steps");
  const auto names = grids.names();
  auto values_at = [&](Point p) { return grids.extract_complete(p); };
  auto start_values = values_at(options.start);
  if (!start_values) throw Error(ErrorKind::OutOfExtent, "simulation start point is outside the covariate grids");

  SimulatedPath out;
  out.track.id = options.id;
  out.track.times.push_back(options.t0);
  out.track.coords.push_back(options.start);
  Point pos = options.start;
  double heading = options.initial_heading;
  std::vector<double> x = *start_values;
  std::size_t z = draw_index(start_distribution(model, pick(model.transition_covariates, names, x)), rng);
  constexpr std::size_t kMaxRedraws = 1000;
  for (std::size_t t = 0; t < n_steps; ++t) {
    const auto obs_x = pick(model.obs_covariates, names, x);
    std::size_t tries = 0;
    for (;;) {
      const Draw d = draw_step(model, z, obs_x, rng);
      const double h = wrap_angle(heading + d.turn);
      const Point cand{pos.x + d.length * std::cos(h), pos.y + d.length * std::sin(h)};
      if (auto v = values_at(cand)) {
        heading = h;
        pos = cand;
        x = std::move(*v);
        break;
      }
      if (++tries >= kMaxRedraws) {
        throw Error(ErrorKind::ExtentExhausted, "simulated step " + std::to_string(t) + " kept leaving the covariate grids");
      }
    }
    out.states.push_back(z);
    out.track.times.push_back(options.t0 + static_cast<double>(t + 1) * options.interval_s);
    out.track.coords.push_back(pos);
    if (t + 1 < n_steps) {
      const Eigen::MatrixXd g = transition_matrix(model, pick(model.transition_covariates, names, x));
      z = draw_index(g.row(static_cast<Eigen::Index>(z)), rng);
    }
  }
  return out;
}

}  // namespace movesel
