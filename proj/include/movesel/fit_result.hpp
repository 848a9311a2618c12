#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace movesel {

inline constexpr std::string_view kInterceptTerm = "(Intercept)";

enum class ModelKind { Rsf, Ssf, HmmSubmodel };

std::string_view to_string(ModelKind kind) noexcept;

struct TermEstimate {
  // A covariate name, a movement column (l, ln_l, cos_theta), or a
  // ':'-joined product of those.
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
  bool se_valid = false;
  // Held at `estimate` during fitting rather than estimated.
  bool fixed = false;
};

struct FitResult {
  ModelKind kind = ModelKind::Rsf;
  std::vector<TermEstimate> terms;
  // Covariance of the estimated (non-fixed) terms, in term order.
  Eigen::MatrixXd covariance;
  double loglik = 0.0;
  std::size_t n_obs = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  // Mean of each covariate over the used/observed rows.
  std::map<std::string, double> case_means;
  std::vector<std::string> warnings;

  const TermEstimate* find(std::string_view name) const noexcept;
  double coefficient(std::string_view name, double fallback = 0.0) const noexcept;
  // Covariance between two terms; 0 when either is fixed or absent.
  double cov(std::size_t i, std::size_t j) const noexcept;
};

// Factors of a term name, split on ':'.
std::vector<std::string> term_factors(std::string_view term);

// term,estimate,se,se_valid
std::string format_fit_csv(const FitResult& fit);
// key=value lines: model, loglik, n, converged, seed, then cov.<i>.<j>.
std::string format_fit_metadata(const FitResult& fit);
// Reads both blocks back; throws ParseError.
FitResult parse_fit(std::string_view csv, std::string_view metadata);

void write_fit(const FitResult& fit, const std::filesystem::path& csv_path,
               const std::filesystem::path& meta_path);

}  // namespace movesel
