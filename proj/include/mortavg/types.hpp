#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mortavg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Array2D = Eigen::ArrayXXd;

/// Malformed or inconsistent input data (files, ranges, grids). CLI exit code 3.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure (overflow, singular matrix, non-convergence). CLI exit code 4.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// log(sum_i exp(v_i)) without overflow; -inf for empty input.
inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline double sq(double x) { return x * x; }

constexpr double log_2pi = 1.8378770664093454835606594728112353;

/// log N(x | mu, sd^2)
inline double normal_logpdf(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * log_2pi - std::log(sd) - 0.5 * z * z;
}

}  // namespace mortavg
