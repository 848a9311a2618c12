#include "movesel/ssf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "movesel/error.hpp"
#include "movesel/io.hpp"
#include "movesel/optimize.hpp"

namespace movesel {

namespace {

constexpr double kSdFloorFraction = 1e-3;
constexpr double kSeparationBound = 50.0;
constexpr std::size_t kControlAttempts = 100;

enum class ColumnKind { Covariate, Length, LogLength, CosTurn };

struct ColumnRef {
  ColumnKind kind;
  std::size_t index = 0;
};

ColumnRef resolve_column(std::string_view name, std::span<const std::string> covariates) {
  if (name == kStepLengthColumn) return {ColumnKind::Length};
  if (name == kLogStepLengthColumn) return {ColumnKind::LogLength};
  if (name == kCosTurnColumn) return {ColumnKind::CosTurn};
  for (std::size_t i = 0; i < covariates.size(); ++i) {
    if (covariates[i] == name) return {ColumnKind::Covariate, i};
  }
  throw Error(ErrorKind::UnknownCovariate, "unknown column '" + std::string(name) + "'");
}

double column_value(const StepRow& row, const ColumnRef& ref) noexcept {
  switch (ref.kind) {
    case ColumnKind::Length: return row.l;
    case ColumnKind::LogLength: return row.ln_l;
    case ColumnKind::CosTurn: return row.cos_theta;
    case ColumnKind::Covariate: return row.covariates[ref.index];
  }
  return 0.0;
}

// Design matrix of a term list over a step table, plus the stratum layout.
struct ConditionalDesign {
  Eigen::MatrixXd x;
  std::vector<std::pair<std::size_t, std::size_t>> strata;
  std::vector<Eigen::Index> case_row;

  ConditionalDesign(const StepTable& table, const SsfSpec& spec) : strata(table.strata_ranges()) {
    for (const auto& [b, e] : strata) {
      std::size_t n_case = 0;
      for (std::size_t i = b; i < e; ++i) {
        if (table.rows[i].used == 1) {
          ++n_case;
          case_row.push_back(static_cast<Eigen::Index>(i));
        }
      }
      if (n_case != 1) {
        throw Error(ErrorKind::DomainError,
                    "stratum " + std::to_string(table.rows[b].stratum) + " must hold exactly one observed step");
      }
    }
    std::vector<std::vector<ColumnRef>> refs;
    refs.reserve(spec.size());
    for (const SsfTerm& term : spec) {
      std::vector<ColumnRef> factors;
      for (const std::string& f : term_factors(term.name)) factors.push_back(resolve_column(f, table.covariate_names));
      refs.push_back(std::move(factors));
    }
    x.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(spec.size()));
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      for (std::size_t j = 0; j < spec.size(); ++j) {
        double v = 1.0;
        for (const ColumnRef& r : refs[j]) v *= column_value(table.rows[i], r);
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      }
    }
  }

  struct Eval {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd information;
  };

  Eval evaluate(const Eigen::VectorXd& beta, bool derivatives) const {
    const Eigen::Index p = x.cols();
    Eval out;
    out.score = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);
    const Eigen::VectorXd eta = x * beta;
    Eigen::VectorXd xbar(p);
    for (std::size_t s = 0; s < strata.size(); ++s) {
      const auto begin = static_cast<Eigen::Index>(strata[s].first);
      const auto len = static_cast<Eigen::Index>(strata[s].second - strata[s].first);
      const Eigen::Index obs = case_row[s];
      const double m = eta.segment(begin, len).maxCoeff();
      double total = 0.0;
      for (Eigen::Index i = begin; i < begin + len; ++i) total += std::exp(eta[i] - m);
      out.loglik += eta[obs] - (m + std::log(total));
      if (!derivatives) continue;
      xbar.setZero();
      Eigen::MatrixXd second = Eigen::MatrixXd::Zero(p, p);
      for (Eigen::Index i = begin; i < begin + len; ++i) {
        const double prob = std::exp(eta[i] - m) / total;
        const auto row = x.row(i).transpose();
        xbar += prob * row;
        second.noalias() += prob * row * row.transpose();
      }
      out.score += x.row(obs).transpose() - xbar;
      out.information += second - xbar * xbar.transpose();
    }
    return out;
  }
};

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}

}  // namespace

bool is_movement_column(std::string_view name) noexcept {
  return name == kStepLengthColumn || name == kLogStepLengthColumn || name == kCosTurnColumn;
}

KernelFit fit_tentative_kernel(const StepSeries& steps, bool estimate_angle_mean) {
  std::vector<double> lengths;
  std::vector<double> angles;
  for (const Step& s : steps.steps) {
    if (!s.turn) continue;
    lengths.push_back(s.model_length());
    angles.push_back(*s.turn);
  }
  if (angles.size() < 10) {
    throw Error(ErrorKind::TooFewSteps,
                "need at least 10 steps with a turn angle, have " + std::to_string(angles.size()));
  }
  // Lengths of every step inform the gamma, not only those with angles.
  lengths.clear();
  for (const Step& s : steps.steps) lengths.push_back(s.model_length());

  KernelFit out;
  out.n_lengths = lengths.size();
  out.n_angles = angles.size();
  out.converged = true;

  const double n = static_cast<double>(lengths.size());
  double sum = 0.0, sum_log = 0.0;
  for (double l : lengths) {
    sum += l;
    sum_log += std::log(l);
  }
  const double m = sum / n;
  double var = 0.0;
  for (double l : lengths) var += (l - m) * (l - m);
  var /= n;
  const double sd0 = std::sqrt(var);
  if (sd0 <= kSdFloorFraction * m * 1.0000001) {
    out.kernel.step = GammaParams{m, kSdFloorFraction * m};
    out.sd_at_lower_bound = true;
  } else {
    // Profile-free 2-parameter fit on (log mean, log sd), sd >= 1e-3 mean.
    Objective gamma_ll = [&](std::span<const double> w) {
      const double mean = std::exp(w[0]);
      const double sd = std::exp(w[1]);
      if (!(sd >= kSdFloorFraction * mean)) return -std::numeric_limits<double>::infinity();
      const double a = mean * mean / (sd * sd);
      const double b = mean / (sd * sd);
      return n * (a * std::log(b) - std::lgamma(a)) + (a - 1.0) * sum_log - b * sum;
    };
    const double init[2] = {std::log(m), std::log(sd0)};
    OptConfig cfg;
    cfg.grad_tol = 1e-6;
    const OptResult r = optimize_mle(gamma_ll, init, cfg);
    out.kernel.step = GammaParams{std::exp(r.argmax[0]), std::exp(r.argmax[1])};
    out.converged = r.converged;
    out.sd_at_lower_bound = out.kernel.step.sd <= kSdFloorFraction * out.kernel.step.mean * 1.01;
  }

  double c = 0.0, s = 0.0;
  for (double a : angles) {
    c += std::cos(a);
    s += std::sin(a);
  }
  const double na = static_cast<double>(angles.size());
  double mu = 0.0;
  if (estimate_angle_mean && (c != 0.0 || s != 0.0)) mu = std::atan2(s, c);
  const double resultant = (c * std::cos(mu) + s * std::sin(mu)) / na;
  double kappa = 0.0;
  if (resultant > 0.0) {
    // Best-Fisher approximation for the starting value.
    double k0 = resultant < 0.53 ? 2 * resultant + std::pow(resultant, 3) + 5 * std::pow(resultant, 5) / 6
                : resultant < 0.85 ? -0.4 + 1.39 * resultant + 0.43 / (1 - resultant)
                                   : 1.0 / (std::pow(resultant, 3) - 4 * resultant * resultant + 3 * resultant);
    k0 = std::clamp(k0, 1e-3, 1e3);
    const double sum_cos = resultant * na;
    Objective vm_ll = [&](std::span<const double> w) {
      const double k = std::exp(w[0]);
      return k * sum_cos - na * (std::log(2.0 * std::numbers::pi) + log_bessel_i0(k));
    };
    const double init[1] = {std::log(k0)};
    OptConfig cfg;
    cfg.grad_tol = 1e-6;
    const OptResult r = optimize_mle(vm_ll, init, cfg);
    kappa = std::exp(r.argmax[0]);
    out.converged = out.converged && r.converged;
  }
  out.kernel.angle = VonMisesParams{mu, kappa};
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> StepTable::strata_ranges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= rows.size(); ++i) {
    if (i == rows.size() || rows[i].stratum != rows[begin].stratum) {
      if (i > begin) out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

StepTable generate_controls(const StepSeries& steps, const MovementKernel& kernel, std::size_t n_controls,
                            const CovariateStack& grids, Rng& rng) {
  if (n_controls < 1) throw Error(ErrorKind::DomainError, "need at least one control per step");
  if (!kernel.valid()) throw Error(ErrorKind::DomainError, "invalid movement kernel");
  StepTable table;
  table.covariate_names = grids.names();
  table.seed = rng.key();

  for (const Step& s : steps.steps) {
    if (!s.turn || !std::isfinite(s.heading)) {
      ++table.skipped_steps;
      continue;
    }
    auto case_cov = grids.extract_complete(s.end);
    if (!case_cov) {
      ++table.skipped_steps;
      continue;
    }
    const std::size_t stratum = table.n_strata;
    const double prev_heading = s.heading - *s.turn;
    const double l_case = s.model_length();
    table.rows.push_back({stratum, 1, l_case, std::log(l_case), std::cos(*s.turn), std::move(*case_cov), s.end});

    std::size_t kept = 0;
    for (std::size_t c = 0; c < n_controls; ++c) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < kControlAttempts; ++attempt) {
        const double len = sample_gamma(kernel.step, rng);
        const double turn = sample_vonmises(kernel.angle, rng);
        const double heading = prev_heading + turn;
        const Point end{s.start.x + len * std::cos(heading), s.start.y + len * std::sin(heading)};
        auto cov = grids.extract_complete(end);
        if (!cov) continue;
        const double l = std::max(len, kMinStepLength);
        table.rows.push_back({stratum, 0, l, std::log(l), std::cos(turn), std::move(*cov), end});
        placed = true;
        break;
      }
      if (placed) {
        ++kept;
      } else {
        ++table.dropped_controls;
      }
    }
    if (kept == 0) {
      throw Error(ErrorKind::ExtentExhausted,
                  "every control for stratum " + std::to_string(stratum) + " fell outside the grids");
    }
    ++table.n_strata;
  }
  return table;
}

std::string format_step_table_csv(const StepTable& table) {
  std::string out = "stratum,case,l,ln_l,cos_theta";
  for (const std::string& n : table.covariate_names) out += "," + n;
  out += '\n';
  for (const StepRow& r : table.rows) {
    out += std::to_string(r.stratum) + "," + std::to_string(r.used) + "," + format_double(r.l) + "," +
           format_double(r.ln_l) + "," + format_double(r.cos_theta);
    for (double v : r.covariates) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

SsfSpec make_ssf_spec(bool with_movement_interaction, const std::string& covariate,
                      std::span<const std::string> known_covariates) {
  if (std::find(known_covariates.begin(), known_covariates.end(), covariate) == known_covariates.end()) {
    throw Error(ErrorKind::UnknownCovariate, "covariate '" + covariate + "' is not available");
  }
  SsfSpec spec{{covariate, std::nullopt},
               {std::string(kStepLengthColumn), std::nullopt},
               {std::string(kLogStepLengthColumn), std::nullopt},
               {std::string(kCosTurnColumn), std::nullopt}};
  if (with_movement_interaction) spec.push_back({covariate + ":" + std::string(kLogStepLengthColumn), std::nullopt});
  return spec;
}

double conditional_loglik(const StepTable& table, const SsfSpec& spec, std::span<const double> beta) {
  if (beta.size() != spec.size()) throw Error(ErrorKind::DomainError, "coefficient count does not match the term list");
  const ConditionalDesign design(table, spec);
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  return design.evaluate(b, false).loglik;
}

std::vector<double> conditional_score(const StepTable& table, const SsfSpec& spec, std::span<const double> beta) {
  if (beta.size() != spec.size()) throw Error(ErrorKind::DomainError, "coefficient count does not match the term list");
  const ConditionalDesign design(table, spec);
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  const Eigen::VectorXd s = design.evaluate(b, true).score;
  return {s.data(), s.data() + s.size()};
}

FitResult fit_conditional_logistic(const StepTable& table, const SsfSpec& spec) {
  if (spec.empty()) throw Error(ErrorKind::DomainError, "empty term list");
  const ConditionalDesign design(table, spec);
  if (design.strata.empty()) throw Error(ErrorKind::DomainError, "the step table has no strata");

  std::vector<Eigen::Index> free_cols;
  Eigen::VectorXd beta_full = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.size()));
  for (std::size_t j = 0; j < spec.size(); ++j) {
    if (spec[j].fixed) {
      beta_full[static_cast<Eigen::Index>(j)] = *spec[j].fixed;
    } else {
      free_cols.push_back(static_cast<Eigen::Index>(j));
    }
  }
  const auto p = static_cast<Eigen::Index>(free_cols.size());

  if (p > 0) {
    // Conditioning removes anything constant within a stratum, so the rank
    // check runs on stratum-centered columns.
    Eigen::MatrixXd centered(design.x.rows(), p);
    for (const auto& [b, e] : design.strata) {
      const auto begin = static_cast<Eigen::Index>(b);
      const auto len = static_cast<Eigen::Index>(e - b);
      for (Eigen::Index k = 0; k < p; ++k) {
        const auto col = design.x.col(free_cols[static_cast<std::size_t>(k)]).segment(begin, len);
        centered.col(k).segment(begin, len) = col.array() - col.mean();
      }
    }
    for (Eigen::Index k = 0; k < p; ++k) {
      const double norm = centered.col(k).norm();
      if (!(norm > 1e-12 * std::max(1.0, design.x.col(free_cols[static_cast<std::size_t>(k)]).norm()))) {
        throw Error(ErrorKind::SingularDesign,
                    "term '" + spec[static_cast<std::size_t>(free_cols[static_cast<std::size_t>(k)])].name +
                        "' does not vary within strata");
      }
      centered.col(k) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw Error(ErrorKind::SingularDesign, "terms are collinear within strata");
  }

  auto expand = [&](const Eigen::VectorXd& free) {
    Eigen::VectorXd full = beta_full;
    for (Eigen::Index k = 0; k < p; ++k) full[free_cols[static_cast<std::size_t>(k)]] = free[k];
    return full;
  };
  auto restrict_eval = [&](const Eigen::VectorXd& free, bool derivatives) {
    auto ev = design.evaluate(expand(free), derivatives);
    if (derivatives) {
      Eigen::VectorXd s(p);
      Eigen::MatrixXd h(p, p);
      for (Eigen::Index a = 0; a < p; ++a) {
        s[a] = ev.score[free_cols[static_cast<std::size_t>(a)]];
        for (Eigen::Index b = 0; b < p; ++b) {
          h(a, b) = ev.information(free_cols[static_cast<std::size_t>(a)], free_cols[static_cast<std::size_t>(b)]);
        }
      }
      ev.score = std::move(s);
      ev.information = std::move(h);
    }
    return ev;
  };
  auto check_separation = [&](const Eigen::VectorXd& b) {
    if (b.size() > 0 && b.cwiseAbs().maxCoeff() > kSeparationBound) {
      throw Error(ErrorKind::SeparationDetected, "a coefficient exceeded |beta| = 50 during fitting");
    }
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto cur = restrict_eval(beta, true);
  bool converged = p == 0;
  for (int iter = 0; iter < 100 && p > 0; ++iter) {
    const Eigen::VectorXd delta = cur.information.ldlt().solve(cur.score);
    if (!delta.allFinite()) break;
    double t = 1.0;
    Eigen::VectorXd trial = beta + delta;
    auto next = restrict_eval(trial, true);
    while (!(next.loglik >= cur.loglik - 1e-12 * std::fabs(cur.loglik)) && t > 1e-10) {
      t *= 0.5;
      trial = beta + t * delta;
      next = restrict_eval(trial, true);
    }
    check_separation(trial);
    const double change = (t * delta).cwiseAbs().maxCoeff();
    beta = trial;
    cur = std::move(next);
    if (change < 1e-10 || cur.score.cwiseAbs().maxCoeff() < 1e-10) {
      converged = true;
      break;
    }
  }
  if (p > 0 && (!converged || cur.score.cwiseAbs().maxCoeff() > 1e-6)) {
    Objective objective = [&](std::span<const double> b) {
      return restrict_eval(Eigen::Map<const Eigen::VectorXd>(b.data(), p), false).loglik;
    };
    OptConfig cfg;
    cfg.grad_tol = 1e-6;
    const OptResult r = optimize_mle(objective, std::span<const double>(beta.data(), static_cast<std::size_t>(p)), cfg);
    beta = Eigen::Map<const Eigen::VectorXd>(r.argmax.data(), p);
    check_separation(beta);
    cur = restrict_eval(beta, true);
    converged = r.converged;
  }

  if (p > 0) {
    // Every observed step picked with probability 1: the fit diverges.
    const Eigen::VectorXd eta = design.x * expand(beta);
    bool separated = true;
    for (std::size_t s = 0; s < design.strata.size() && separated; ++s) {
      const auto [b, e] = design.strata[s];
      if (e - b < 2) continue;
      double total = 0.0;
      for (std::size_t i = b; i < e; ++i) total += std::exp(eta[static_cast<Eigen::Index>(i)] - eta[design.case_row[s]]);
      separated = total - 1.0 < 1e-8;
    }
    if (separated) {
      throw Error(ErrorKind::SeparationDetected, "every observed step has fitted probability 1 within its stratum");
    }
  }

  const StandardErrors se = standard_errors_from_information(cur.information);
  FitResult fit;
  fit.kind = ModelKind::Ssf;
  fit.loglik = cur.loglik;
  fit.n_obs = design.strata.size();
  fit.converged = converged && std::isfinite(cur.loglik);
  fit.seed = table.seed;
  fit.covariance = se.covariance;
  const Eigen::VectorXd full = expand(beta);
  Eigen::Index k = 0;
  for (std::size_t j = 0; j < spec.size(); ++j) {
    TermEstimate t;
    t.name = spec[j].name;
    t.estimate = full[static_cast<Eigen::Index>(j)];
    if (spec[j].fixed) {
      t.fixed = true;
      t.se = 0.0;
      t.se_valid = false;
    } else {
      t.se = se.se[static_cast<std::size_t>(k)];
      t.se_valid = se.valid[static_cast<std::size_t>(k)];
      ++k;
    }
    fit.terms.push_back(std::move(t));
  }
  for (std::size_t c = 0; c < table.covariate_names.size(); ++c) {
    std::vector<double> vals;
    for (const StepRow& r : table.rows) {
      if (r.used == 1) vals.push_back(r.covariates[c]);
    }
    if (!vals.empty()) fit.case_means[table.covariate_names[c]] = mean_of(vals);
  }
  if (table.dropped_controls > 0) {
    fit.warnings.push_back(std::to_string(table.dropped_controls) + " controls dropped outside the grids");
  }
  if (!se.hessian_ok) fit.warnings.push_back("information matrix not positive definite; standard errors invalid");
  return fit;
}

MovementKernel update_movement_kernel(const MovementKernel& kernel, const FitResult& fit,
                                      const std::map<std::string, double>& x, const KernelUpdateOptions& options) {
  double shape = kernel.step.shape();
  double rate = kernel.step.rate();
  std::string shape_terms;
  if (options.shape) {
    for (const TermEstimate& t : fit.terms) {
      const auto factors = term_factors(t.name);
      if (t.name == kLogStepLengthColumn) {
        shape += t.estimate;
        shape_terms += (shape_terms.empty() ? "" : ", ") + t.name;
      } else if (factors.size() == 2 &&
                 (factors[0] == kLogStepLengthColumn || factors[1] == kLogStepLengthColumn)) {
        const std::string& cov = factors[0] == kLogStepLengthColumn ? factors[1] : factors[0];
        if (is_movement_column(cov)) continue;
        auto it = x.find(cov);
        if (it == x.end()) throw Error(ErrorKind::MissingCovariate, "no value for covariate '" + cov + "'");
        shape += t.estimate * it->second;
        shape_terms += (shape_terms.empty() ? "" : ", ") + t.name;
      }
    }
  }
  if (!(shape > 0.0)) {
    throw Error(ErrorKind::InvalidUpdatedKernel, "updated gamma shape " + format_double(shape) +
                                                     " <= 0 (terms: " + shape_terms + ")");
  }
  if (options.rate) rate -= fit.coefficient(kStepLengthColumn);
  if (!(rate > 0.0)) {
    throw Error(ErrorKind::InvalidUpdatedKernel, "updated gamma rate " + format_double(rate) + " <= 0 (term: l)");
  }
  VonMisesParams angle = kernel.angle;
  if (options.concentration) {
    const double b = fit.coefficient(kCosTurnColumn);
    if (angle.mu == 0.0) {
      angle.kappa += b;
    } else {
      const double cx = angle.kappa * std::cos(angle.mu) + b;
      const double sy = angle.kappa * std::sin(angle.mu);
      angle.kappa = std::hypot(cx, sy);
      angle.mu = std::atan2(sy, cx);
    }
  }
  if (!(angle.kappa >= 0.0)) {
    throw Error(ErrorKind::InvalidUpdatedKernel,
                "updated von Mises concentration " + format_double(angle.kappa) + " < 0 (term: cos_theta)");
  }
  return MovementKernel{GammaParams::from_shape_rate(shape, rate), angle};
}

}  // namespace movesel
