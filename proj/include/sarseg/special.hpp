#ifndef SARSEG_SPECIAL_HPP
#define SARSEG_SPECIAL_HPP

#include <cmath>
#include <limits>
#include <stdexcept>

#include "sarseg/errors.hpp"

namespace sarseg {

inline constexpr double kEulerGamma = 0.57721566490153286061;

/// Digamma for x > 0: upward recurrence to x >= 10, then the asymptotic
/// series in 1/x^2.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // B2k / (2k) for k = 1..7
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 - inv2 * (1.0 / 12)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

/// log(x) - digamma(x) for x > 0. For x >= 10 the asymptotic series is
/// summed directly, which avoids the cancellation in the difference.
inline double log_minus_digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_minus_digamma: argument must be positive");
  if (x < 10.0) return std::log(x) - digamma(x);
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 - inv2 * (1.0 / 12)))))));
  return 0.5 * inv + series;
}

/// Trigamma for x > 0, same recurrence/asymptotic structure as digamma.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double shift = 0.0;
  while (x < 10.0) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 -
                                        inv2 * (1.0 / 30 -
                                                inv2 * (1.0 / 42 -
                                                        inv2 * (1.0 / 30 -
                                                                inv2 * (5.0 / 66 - inv2 * (691.0 / 2730))))))));
  return shift + series;
}

/// Solves digamma(x) = v for x > 0 by Newton's method, started from the
/// usual piecewise guess (exp(v) + 1/2 for large v, -1/(v + gamma) for
/// small v). Converges in a handful of steps for any finite v.
inline double inverse_psi(double v, int max_iters = 100) {
  if (!std::isfinite(v)) throw std::domain_error("inverse_psi: argument must be finite");
  double x = v >= -2.22 ? std::exp(v) + 0.5 : -1.0 / (v + kEulerGamma);
  for (int it = 0; it < max_iters; ++it) {
    const double residual = digamma(x) - v;
    double next = x - residual / trigamma(x);
    // Newton on the convex digamma can overshoot below zero for tiny x.
    if (!(next > 0.0)) next = 0.5 * x;
    const double step = std::fabs(next - x);
    x = next;
    if (step <= 1e-15 * x || std::fabs(residual) <= 1e-14 * std::max(1.0, std::fabs(v))) {
      return x;
    }
  }
  throw ConvergenceError("inverse_psi: Newton iteration did not converge");
}

}  // namespace sarseg

#endif  // SARSEG_SPECIAL_HPP
