#include "movesel/rsf.hpp"

#include <algorithm>
#include <cmath>

#include "movesel/error.hpp"
#include "movesel/io.hpp"
#include "movesel/optimize.hpp"

namespace movesel {

namespace {

constexpr double kSeparationBound = 50.0;

double softplus(double eta) noexcept {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

double logistic(double eta) noexcept {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

Eigen::MatrixXd design_matrix(const UseAvailTable& table, bool intercept) {
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  const auto k = static_cast<Eigen::Index>(table.covariate_names.size());
  const Eigen::Index p = k + (intercept ? 1 : 0);
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    Eigen::Index c = 0;
    if (intercept) x(i, c++) = 1.0;
    for (Eigen::Index j = 0; j < k; ++j) x(i, c++) = row.covariates[static_cast<std::size_t>(j)];
  }
  return x;
}

struct Eval {
  double loglik;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

Eval evaluate(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
              const Eigen::VectorXd& beta, bool derivatives) {
  const Eigen::VectorXd eta = x * beta;
  Eval out{0.0, Eigen::VectorXd::Zero(x.cols()), Eigen::MatrixXd::Zero(x.cols(), x.cols())};
  Eigen::VectorXd resid(x.rows());
  Eigen::VectorXd curv(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.loglik += w[i] * (y[i] * eta[i] - softplus(eta[i]));
    const double p = logistic(eta[i]);
    resid[i] = w[i] * (y[i] - p);
    curv[i] = w[i] * p * (1.0 - p);
  }
  if (derivatives) {
    out.score = x.transpose() * resid;
    out.information = x.transpose() * curv.asDiagonal() * x;
  }
  return out;
}

void check_separation(const Eigen::VectorXd& beta) {
  if (beta.size() > 0 && beta.cwiseAbs().maxCoeff() > kSeparationBound) {
    throw Error(ErrorKind::SeparationDetected,
                "a coefficient exceeded |beta| = 50 during fitting; the classes are (quasi-)separable");
  }
}

}  // namespace

UseAvailTable build_use_avail(const Track& track, const CovariateStack& grids, std::size_t n_avail_per_used,
                              Rng& rng, double buffer_m) {
  if (n_avail_per_used < 1) throw Error(ErrorKind::DomainError, "need at least one available point per used point");
  if (grids.empty()) throw Error(ErrorKind::DomainError, "at least one covariate grid is required");

  UseAvailTable table;
  table.covariate_names = grids.names();
  table.seed = rng.key();
  table.polygon = convex_hull(track.coords, buffer_m);
  table.n_used = track.size();
  table.n_available = track.size() * n_avail_per_used;
  table.rows.reserve(table.n_used + table.n_available);

  for (std::size_t i = 0; i < track.size(); ++i) {
    Extraction e = grids.extract(track.coords[i]);
    if (e.any_missing()) {
      throw Error(ErrorKind::MissingCovariate, "used location " + std::to_string(i) + " falls on nodata");
    }
    table.rows.push_back({1, track.coords[i], std::move(e.values), 1.0});
  }

  PolygonSampler sampler(table.polygon);
  constexpr std::size_t kMaxConsecutive = 100000;
  for (std::size_t i = 0; i < table.n_available; ++i) {
    std::size_t attempts = 0;
    for (;;) {
      const Point p = sampler.draw(rng);
      if (auto values = grids.extract_complete(p)) {
        table.rows.push_back({0, p, std::move(*values), 1.0});
        break;
      }
      ++table.redraws;
      if (++attempts >= kMaxConsecutive) {
        throw Error(ErrorKind::ExtentExhausted, "availability polygon does not overlap valid grid cells");
      }
    }
  }
  return table;
}

double logistic_loglik(const UseAvailTable& table, std::span<const double> beta, bool include_intercept) {
  const Eigen::MatrixXd x = design_matrix(table, include_intercept);
  Eigen::VectorXd y(x.rows()), w(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y[i] = table.rows[static_cast<std::size_t>(i)].used;
    w[i] = table.rows[static_cast<std::size_t>(i)].weight;
  }
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  return evaluate(x, y, w, b, false).loglik;
}

std::vector<double> logistic_score(const UseAvailTable& table, std::span<const double> beta, bool include_intercept) {
  const Eigen::MatrixXd x = design_matrix(table, include_intercept);
  Eigen::VectorXd y(x.rows()), w(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y[i] = table.rows[static_cast<std::size_t>(i)].used;
    w[i] = table.rows[static_cast<std::size_t>(i)].weight;
  }
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  const Eigen::VectorXd s = evaluate(x, y, w, b, true).score;
  return {s.data(), s.data() + s.size()};
}

FitResult fit_logistic(const UseAvailTable& table, bool include_intercept) {
  if (table.covariate_names.empty()) throw Error(ErrorKind::DomainError, "at least one covariate is required");
  std::size_t n_used = 0;
  for (const auto& r : table.rows) n_used += r.used == 1 ? 1 : 0;
  if (n_used == 0 || n_used == table.rows.size()) {
    throw Error(ErrorKind::DomainError, "both used and available rows are required");
  }

  const Eigen::MatrixXd x = design_matrix(table, include_intercept);
  const Eigen::Index p = x.cols();
  Eigen::VectorXd y(x.rows()), w(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    y[i] = table.rows[static_cast<std::size_t>(i)].used;
    w[i] = table.rows[static_cast<std::size_t>(i)].weight;
  }

  {
    // Rank check on column-scaled design.
    Eigen::MatrixXd scaled = x;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double norm = scaled.col(j).norm();
      if (norm == 0.0) throw Error(ErrorKind::SingularDesign, "a design column is identically zero");
      scaled.col(j) /= norm;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) {
      throw Error(ErrorKind::SingularDesign, "design is rank deficient (constant or collinear covariate)");
    }
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eval cur = evaluate(x, y, w, beta, true);
  bool converged = false;
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd delta = cur.information.ldlt().solve(cur.score);
    if (!delta.allFinite()) break;
    double t = 1.0;
    Eigen::VectorXd trial = beta + delta;
    Eval next = evaluate(x, y, w, trial, true);
    while (!(next.loglik >= cur.loglik - 1e-12 * std::fabs(cur.loglik)) && t > 1e-10) {
      t *= 0.5;
      trial = beta + t * delta;
      next = evaluate(x, y, w, trial, true);
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
  if (!converged || cur.score.cwiseAbs().maxCoeff() > 1e-6) {
    Objective objective = [&](std::span<const double> b) {
      return evaluate(x, y, w, Eigen::Map<const Eigen::VectorXd>(b.data(), p), false).loglik;
    };
    OptConfig config;
    config.grad_tol = 1e-6;
    const OptResult res = optimize_mle(objective, std::span<const double>(beta.data(), static_cast<std::size_t>(p)), config);
    beta = Eigen::Map<const Eigen::VectorXd>(res.argmax.data(), p);
    check_separation(beta);
    cur = evaluate(x, y, w, beta, true);
    converged = res.converged;
  }

  {
    // A covariate on a large scale can separate the classes while every
    // coefficient stays below the bound; the fitted labels give it away.
    const Eigen::VectorXd eta = x * beta;
    bool separated = true;
    for (Eigen::Index i = 0; i < eta.size() && separated; ++i) {
      separated = std::fabs(y[i] - logistic(eta[i])) < 1e-8;
    }
    if (separated) {
      throw Error(ErrorKind::SeparationDetected, "every row is fitted with probability 0 or 1; the classes are separable");
    }
  }

  const StandardErrors se = standard_errors_from_information(cur.information);
  FitResult fit;
  fit.kind = ModelKind::Rsf;
  fit.loglik = cur.loglik;
  fit.n_obs = table.rows.size();
  fit.converged = converged && std::isfinite(cur.loglik);
  fit.seed = table.seed;
  fit.covariance = se.covariance;
  Eigen::Index c = 0;
  if (include_intercept) {
    fit.terms.push_back({std::string(kInterceptTerm), beta[c], se.se[0], se.valid[0], false});
    ++c;
  }
  for (const std::string& name : table.covariate_names) {
    const auto i = static_cast<std::size_t>(c);
    fit.terms.push_back({name, beta[c], se.se[i], se.valid[i], false});
    ++c;
  }
  for (std::size_t k = 0; k < table.covariate_names.size(); ++k) {
    double sum = 0.0;
    for (const auto& r : table.rows) {
      if (r.used == 1) sum += r.covariates[k];
    }
    fit.case_means[table.covariate_names[k]] = sum / static_cast<double>(n_used);
  }
  if (!se.hessian_ok) fit.warnings.push_back("information matrix not positive definite; standard errors invalid");
  return fit;
}

double rsf_linear_predictor(const FitResult& fit, const std::map<std::string, double>& x) {
  double eta = 0.0;
  for (const TermEstimate& t : fit.terms) {
    if (t.name == kInterceptTerm) continue;
    double value = 1.0;
    for (const std::string& f : term_factors(t.name)) {
      auto it = x.find(f);
      if (it == x.end()) throw Error(ErrorKind::MissingCovariate, "no value for covariate '" + f + "'");
      value *= it->second;
    }
    eta += t.estimate * value;
  }
  return eta;
}

std::vector<ScanRow> availability_stability_scan(const Track& track, const CovariateStack& grids,
                                                 std::span<const std::size_t> sizes, const Rng& rng,
                                                 double buffer_m) {
  if (sizes.empty()) throw Error(ErrorKind::DomainError, "at least one availability ratio is required");
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) throw Error(ErrorKind::DomainError, "availability ratios must be increasing");
  }
  std::vector<ScanRow> rows;
  rows.reserve(sizes.size());
  for (std::size_t ratio : sizes) {
    ScanRow row;
    row.ratio = ratio;
    try {
      Rng child = rng.derive("avail-ratio:" + std::to_string(ratio));
      const UseAvailTable table = build_use_avail(track, grids, ratio, child, buffer_m);
      const FitResult fit = fit_logistic(table, true);
      row.terms = fit.terms;
      row.loglik = fit.loglik;
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_scan_csv(std::span<const ScanRow> rows) {
  std::string out = "ratio,term,estimate,se,se_valid,failed\n";
  for (const ScanRow& r : rows) {
    if (r.failed) {
      out += std::to_string(r.ratio) + ",,NaN,NaN,0,1\n";
      continue;
    }
    for (const TermEstimate& t : r.terms) {
      out += std::to_string(r.ratio) + "," + t.name + "," + format_double(t.estimate) + "," + format_double(t.se) +
             "," + (t.se_valid ? "1" : "0") + ",0\n";
    }
  }
  return out;
}

}  // namespace movesel
