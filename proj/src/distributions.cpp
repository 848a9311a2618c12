#include "movesel/distributions.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "movesel/error.hpp"

namespace movesel {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

bool GammaParams::valid() const noexcept {
  if (!(mean > 0.0) || !(sd > 0.0) || !std::isfinite(mean) || !std::isfinite(sd)) return false;
  const double a = shape();
  const double b = rate();
  return std::isfinite(a) && std::isfinite(b) && a > 0.0 && b > 0.0;
}

GammaParams GammaParams::from_shape_rate(double shape, double rate) noexcept {
  return GammaParams{shape / rate, std::sqrt(shape) / rate};
}

bool VonMisesParams::valid() const noexcept {
  return std::isfinite(mu) && std::isfinite(kappa) && kappa >= 0.0;
}

double wrap_angle(double theta) noexcept {
  double r = std::remainder(theta, kTwoPi);  // [-pi, pi]
  if (r <= -kPi) r += kTwoPi;
  return r;
}

double gamma_logpdf(double x, const GammaParams& p) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw Error(ErrorKind::DomainError, "gamma density needs x > 0, got " + std::to_string(x));
  }
  if (!p.valid()) throw Error(ErrorKind::DomainError, "invalid gamma parameters");
  const double a = p.shape();
  const double b = p.rate();
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * std::log(x) - b * x;
}

double log_bessel_i0(double kappa) noexcept {
  const double k = std::fabs(kappa);
  if (k < 20.0) {
    // sum_j ((k/2)^2)^j / (j!)^2
    const double q = 0.25 * k * k;
    double term = 1.0;
    double sum = 1.0;
    for (int j = 1; j < 200; ++j) {
      term *= q / (static_cast<double>(j) * static_cast<double>(j));
      sum += term;
      if (term < sum * 1e-17) break;
    }
    return std::log(sum);
  }
  // I0(k) ~ e^k / sqrt(2 pi k) * sum_j ((2j-1)!!)^2 / (j! (8k)^j)
  const double z = 8.0 * k;
  double term = 1.0;
  double sum = 1.0;
  for (int j = 1; j < 60; ++j) {
    const double odd = 2.0 * j - 1.0;
    const double next = term * odd * odd / (static_cast<double>(j) * z);
    if (next > term) break;  // series starts diverging
    term = next;
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return k - 0.5 * std::log(kTwoPi * k) + std::log(sum);
}

double vonmises_logpdf(double theta, const VonMisesParams& p) {
  if (!p.valid()) throw Error(ErrorKind::DomainError, "invalid von Mises parameters");
  const double d = wrap_angle(theta - p.mu);
  return p.kappa * std::cos(d) - std::log(kTwoPi) - log_bessel_i0(p.kappa);
}

double sample_gamma(const GammaParams& p, Rng& rng) {
  if (!p.valid()) throw Error(ErrorKind::DomainError, "invalid gamma parameters");
  const double shape = p.shape();
  const double rate = p.rate();
  const bool boost = shape < 1.0;
  const double a = boost ? shape + 1.0 : shape;
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  double draw = 0.0;
  for (;;) {
    const double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = rng.uniform_open();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
      draw = d * v;
      break;
    }
  }
  if (boost) draw *= std::pow(rng.uniform_open(), 1.0 / shape);
  return draw / rate;
}

double sample_vonmises(const VonMisesParams& p, Rng& rng) {
  if (!p.valid()) throw Error(ErrorKind::DomainError, "invalid von Mises parameters");
  if (p.kappa < 1e-8) return wrap_angle(kTwoPi * rng.uniform() - kPi + p.mu);
  const double k = p.kappa;
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * k * k);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * k);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform_open();
    const double u3 = rng.uniform();
    const double z = std::cos(kPi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = k * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::fmax(-1.0, std::fmin(1.0, f)));
      return wrap_angle(theta + p.mu);
    }
  }
}

}  // namespace movesel
