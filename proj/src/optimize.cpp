#include "movesel/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "movesel/error.hpp"

namespace movesel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Minimization view of the objective: g(x) = -f(x), +inf outside the domain.
class Negated {
 public:
  explicit Negated(const Objective& f) : f_(f) {}

  double operator()(std::span<const double> x) {
    ++evals_;
    const double v = f_(x);
    return std::isfinite(v) ? -v : kInf;
  }
  double operator()(const Eigen::VectorXd& x) {
    return (*this)(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }

  std::size_t evals() const noexcept { return evals_; }

 private:
  const Objective& f_;
  std::size_t evals_ = 0;
};

Eigen::VectorXd gradient_of(Negated& g, const Eigen::VectorXd& x, double gx) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd grad(n);
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = fd_step(x[i]);
    probe[i] = x[i] + h;
    const double up = g(probe);
    probe[i] = x[i] - h;
    const double down = g(probe);
    probe[i] = x[i];
    if (std::isfinite(up) && std::isfinite(down)) {
      grad[i] = (up - down) / (2.0 * h);
    } else if (std::isfinite(up)) {
      grad[i] = (up - gx) / h;
    } else if (std::isfinite(down)) {
      grad[i] = (gx - down) / h;
    } else {
      grad[i] = 0.0;
    }
  }
  return grad;
}

struct Vertex {
  Eigen::VectorXd x;
  double value;
};

Vertex nelder_mead(Negated& g, const Eigen::VectorXd& start, double start_value,
                   const OptConfig& config) {
  const Eigen::Index n = start.size();
  const std::size_t budget =
      config.simplex_max_evals > 0 ? config.simplex_max_evals : 200 * static_cast<std::size_t>(n) + 500;
  const std::size_t stop_at = std::min(g.evals() + budget, config.max_evals);

  std::vector<Vertex> simplex;
  simplex.reserve(static_cast<std::size_t>(n) + 1);
  simplex.push_back({start, start_value});
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd v = start;
    v[i] += config.simplex_step * std::max(1.0, std::fabs(start[i]));
    simplex.push_back({v, g(v)});
  }

  auto by_value = [](const Vertex& a, const Vertex& b) { return a.value < b.value; };
  while (g.evals() < stop_at) {
    std::stable_sort(simplex.begin(), simplex.end(), by_value);
    const double best = simplex.front().value;
    const double worst = simplex.back().value;
    if (std::isfinite(worst) &&
        worst - best <= config.simplex_ftol * (std::fabs(best) + config.simplex_ftol)) {
      break;
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i + 1 < simplex.size(); ++i) centroid += simplex[i].x;
    centroid /= static_cast<double>(n);

    Vertex& w = simplex.back();
    const double second_worst = simplex[simplex.size() - 2].value;
    Eigen::VectorXd xr = centroid + (centroid - w.x);
    const double fr = g(xr);

    if (fr < best) {
      Eigen::VectorXd xe = centroid + 2.0 * (centroid - w.x);
      const double fe = g(xe);
      if (fe < fr) {
        w = {std::move(xe), fe};
      } else {
        w = {std::move(xr), fr};
      }
      continue;
    }
    if (fr < second_worst) {
      w = {std::move(xr), fr};
      continue;
    }
    bool shrink = false;
    if (fr < w.value) {
      Eigen::VectorXd xc = centroid + 0.5 * (xr - centroid);
      const double fc = g(xc);
      if (fc <= fr) {
        w = {std::move(xc), fc};
      } else {
        shrink = true;
      }
    } else {
      Eigen::VectorXd xc = centroid + 0.5 * (w.x - centroid);
      const double fc = g(xc);
      if (fc < w.value) {
        w = {std::move(xc), fc};
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      const Eigen::VectorXd anchor = simplex.front().x;
      for (std::size_t i = 1; i < simplex.size(); ++i) {
        simplex[i].x = anchor + 0.5 * (simplex[i].x - anchor);
        simplex[i].value = g(simplex[i].x);
      }
    }
  }
  std::stable_sort(simplex.begin(), simplex.end(), by_value);
  return simplex.front();
}

struct PolishResult {
  Eigen::VectorXd x;
  double value;
  Eigen::VectorXd grad;
  bool curvature_ok;
};

PolishResult bfgs(Negated& g, Eigen::VectorXd x, double fx, const OptConfig& config) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  Eigen::VectorXd grad = gradient_of(g, x, fx);
  int stalled = 0;
  // Once the tolerance is met a few extra iterations are allowed; finite
  // difference noise usually prevents the gradient from shrinking much further.
  int polish_left = 3;
  const double deep_tol = config.grad_tol * 1e-3;

  while (g.evals() < config.max_evals) {
    const double gnorm = grad.lpNorm<Eigen::Infinity>();
    if (gnorm <= deep_tol) break;
    if (gnorm <= config.grad_tol && polish_left-- <= 0) break;

    Eigen::VectorXd dir = -inv_h * grad;
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      fresh = true;
      dir = -grad;
      slope = grad.dot(dir);
      if (!(slope < 0.0)) break;
    }

    double t = 1.0;
    Eigen::VectorXd next;
    double fnext = kInf;
    bool accepted = false;
    for (int k = 0; k < 60 && g.evals() < config.max_evals; ++k) {
      next = x + t * dir;
      fnext = g(next);
      if (std::isfinite(fnext) && fnext <= fx + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      if (fresh) break;
      inv_h.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd next_grad = gradient_of(g, next, fnext);
    const Eigen::VectorXd s = next - x;
    const Eigen::VectorXd y = next_grad - grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        inv_h *= sy / y.squaredNorm();
        fresh = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_h * y;
      inv_h += rho * ((1.0 + rho * y.dot(hy)) * (s * s.transpose()) -
                      (hy * s.transpose() + s * hy.transpose()));
    }

    const double gain = fx - fnext;
    stalled = gain <= 1e-14 * std::max(1.0, std::fabs(fx)) ? stalled + 1 : 0;
    x = next;
    fx = fnext;
    grad = next_grad;
    if (stalled >= 3) break;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(inv_h);
  return {x, fx, grad, llt.info() == Eigen::Success};
}

}  // namespace

double fd_step(double x) noexcept { return std::max(1e-6, 1e-6 * std::fabs(x)); }

OptResult optimize_mle(const Objective& objective, std::span<const double> init,
                       const OptConfig& config) {
  Negated g(objective);
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(init.data(), static_cast<Eigen::Index>(init.size()));
  double fx = g(x);
  if (!std::isfinite(fx)) {
    throw Error(ErrorKind::NonFiniteAtInit, "objective is not finite at the initial point");
  }

  if (config.use_simplex && x.size() > 0) {
    Vertex best = nelder_mead(g, x, fx, config);
    if (best.value <= fx) {
      x = std::move(best.x);
      fx = best.value;
    }
  }

  OptResult out;
  if (x.size() == 0) {
    out.loglik = -fx;
    out.converged = true;
    out.hessian_ok = true;
    out.n_evals = g.evals();
    return out;
  }

  PolishResult polished = bfgs(g, x, fx, config);
  out.argmax.assign(polished.x.data(), polished.x.data() + polished.x.size());
  out.loglik = -polished.value;
  out.grad_norm = polished.grad.lpNorm<Eigen::Infinity>();
  out.converged = out.grad_norm <= config.grad_tol && std::isfinite(out.loglik);
  out.hessian_ok = polished.curvature_ok;
  out.n_evals = g.evals();
  return out;
}

std::vector<double> numerical_gradient(const Objective& objective, std::span<const double> x) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = fd_step(x[i]);
    probe[i] = x[i] + h;
    const double up = objective(probe);
    probe[i] = x[i] - h;
    const double down = objective(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

Eigen::MatrixXd numerical_hessian(const Objective& objective, std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = 1e-4 * std::max(1.0, std::fabs(x[i]));
  std::vector<double> p(x.begin(), x.end());
  const double f0 = objective(p);
  Eigen::MatrixXd hess(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = x[i] + h[i];
    const double up = objective(p);
    p[i] = x[i] - h[i];
    const double down = objective(p);
    p[i] = x[i];
    hess(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = (up - 2.0 * f0 + down) / (h[i] * h[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      auto eval = [&](double si, double sj) {
        p[i] = x[i] + si * h[i];
        p[j] = x[j] + sj * h[j];
        const double v = objective(p);
        p[i] = x[i];
        p[j] = x[j];
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * h[i] * h[j]);
      hess(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      hess(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return hess;
}

StandardErrors standard_errors_from_information(const Eigen::MatrixXd& information) {
  const auto n = information.rows();
  StandardErrors out;
  out.se.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
  out.valid.assign(static_cast<std::size_t>(n), false);
  out.covariance = Eigen::MatrixXd::Zero(n, n);
  if (n == 0) {
    out.hessian_ok = true;
    return out;
  }
  if (!information.allFinite()) return out;
  const Eigen::MatrixXd sym = 0.5 * (information + information.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() != Eigen::Success) return out;
  out.hessian_ok = true;
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(n, n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = out.covariance(i, i);
    if (std::isfinite(v) && v > 0.0) {
      out.se[static_cast<std::size_t>(i)] = std::sqrt(v);
      out.valid[static_cast<std::size_t>(i)] = true;
    }
  }
  return out;
}

StandardErrors standard_errors(const Objective& objective, std::span<const double> argmax) {
  return standard_errors_from_information(-numerical_hessian(objective, argmax));
}

}  // namespace movesel
