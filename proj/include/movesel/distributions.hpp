#pragma once

#include "movesel/rng.hpp"

namespace movesel {

// Step-length distribution, parameterized by mean and standard deviation.
// shape = mean^2 / sd^2, rate = mean / sd^2.
struct GammaParams {
  double mean = 1.0;
  double sd = 1.0;

  double shape() const noexcept { return (mean * mean) / (sd * sd); }
  double rate() const noexcept { return mean / (sd * sd); }
  bool valid() const noexcept;

  static GammaParams from_shape_rate(double shape, double rate) noexcept;
};

// Turn-angle distribution. kappa == 0 is the uniform circle.
struct VonMisesParams {
  double mu = 0.0;
  double kappa = 0.0;

  bool valid() const noexcept;
};

// Wraps an angle into (-pi, pi].
double wrap_angle(double theta) noexcept;

// Throws DomainError for x <= 0 or invalid parameters.
double gamma_logpdf(double x, const GammaParams& p);

// log I0(kappa): power series below kappa = 20, Hankel asymptotic expansion
// above.
double log_bessel_i0(double kappa) noexcept;

double vonmises_logpdf(double theta, const VonMisesParams& p);

// Marsaglia-Tsang, with the shape < 1 boost.
double sample_gamma(const GammaParams& p, Rng& rng);
// Best-Fisher rejection sampler; result in (-pi, pi].
double sample_vonmises(const VonMisesParams& p, Rng& rng);

}  // namespace movesel
