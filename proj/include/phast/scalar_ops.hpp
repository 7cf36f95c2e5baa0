#pragma once

// Stable scalar nonlinearities and the angle wrap, shared by the graph
// engine, the plain evaluation paths, and the metrics. Keeping one definition
// guarantees the differentiable and plain paths agree bitwise.

#include <cmath>

namespace phast {

inline constexpr double kPi = 3.14159265358979323846;

// Wrap to the half-open interval [-pi, pi); +pi maps to -pi.
inline double wrap_angle(double x) {
  return x - 2.0 * kPi * std::floor((x + kPi) / (2.0 * kPi));
}

inline double sigmoid_fn(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_fn(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double silu_fn(double x) { return x * sigmoid_fn(x); }

inline double silu_d1(double x) {
  const double s = sigmoid_fn(x);
  return s * (1.0 + x * (1.0 - s));
}

inline double silu_d2(double x) {
  const double s = sigmoid_fn(x);
  return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
}

}  // namespace phast
