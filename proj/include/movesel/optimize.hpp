#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace movesel {

// Log-likelihood on the working (unconstrained) scale. May return -inf or NaN
// outside its domain; the optimizer treats both as "worse than anything".
using Objective = std::function<double(std::span<const double>)>;

struct OptConfig {
  // A run counts as converged when the infinity norm of the central
  // finite-difference gradient at the returned point is <= grad_tol.
  double grad_tol = 1e-4;
  std::size_t max_evals = 50000;
  // Simplex stage; skipped when false.
  bool use_simplex = true;
  double simplex_step = 0.1;
  double simplex_ftol = 1e-10;
  std::size_t simplex_max_evals = 0;  // 0: 200 * dim + 500
};

struct OptResult {
  std::vector<double> argmax;
  double loglik = 0.0;
  bool converged = false;
  std::size_t n_evals = 0;
  // Quasi-Newton inverse-curvature estimate positive definite at exit.
  bool hessian_ok = false;
  double grad_norm = 0.0;
};

// Simplex search to locate a basin, then BFGS polish with central
// finite-difference gradients (h = max(1e-6, 1e-6 |x|)). Throws
// NonFiniteAtInit if objective(init) is not finite.
OptResult optimize_mle(const Objective& objective, std::span<const double> init,
                       const OptConfig& config = {});

double fd_step(double x) noexcept;
std::vector<double> numerical_gradient(const Objective& objective, std::span<const double> x);
// Central second differences with h = 1e-4 * max(1, |x|).
Eigen::MatrixXd numerical_hessian(const Objective& objective, std::span<const double> x);

struct StandardErrors {
  std::vector<double> se;
  std::vector<bool> valid;
  // Inverse of the negative Hessian (observed information); zero-filled when
  // the Hessian is not negative definite.
  Eigen::MatrixXd covariance;
  bool hessian_ok = false;
};

// SE_i = sqrt(diag(inverse(-H))_i). Entries are flagged invalid, never thrown,
// when -H is not positive definite.
StandardErrors standard_errors(const Objective& objective, std::span<const double> argmax);
StandardErrors standard_errors_from_information(const Eigen::MatrixXd& information);

}  // namespace movesel
