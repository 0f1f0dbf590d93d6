#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "mortavg/posterior.hpp"

namespace testutil {

using namespace mortavg;

/// Deterministic synthetic surface with plausible magnitudes: exposures around
/// 1e3 and Poisson death counts around e * exp(eta) for a smooth eta.
inline MortalitySurface make_surface(int A, int N, int age0 = 60, int year0 = 2000,
                                     unsigned long long seed = 7) {
  std::mt19937_64 rng(seed);
  MortalitySurface s;
  for (int x = 0; x < A; ++x) s.ages.push_back(age0 + x);
  for (int t = 0; t < N; ++t) s.years.push_back(year0 + t);
  s.deaths.resize(A, N);
  s.exposures.resize(A, N);
  for (int x = 0; x < A; ++x)
    for (int t = 0; t < N; ++t) {
      s.exposures(x, t) = 800.0 + 13.0 * x + 7.0 * t;
      const double eta = -4.5 + 0.06 * x - 0.015 * t;
      const double m = s.exposures(x, t) * std::exp(eta);
      std::poisson_distribution<long> pois(m);
      s.deaths(x, t) = static_cast<double>(pois(rng));
    }
  s.validate();
  return s;
}

/// Central finite differences of a TargetDensity, relative step h per coordinate.
inline Vector fd_gradient(const TargetDensity& target, const Vector& z, double h = 1e-5) {
  Vector g(z.size());
  for (int i = 0; i < z.size(); ++i) {
    const double hi = h * std::max(1.0, std::abs(z[i]));
    Vector zp = z, zm = z;
    zp[i] += hi;
    zm[i] -= hi;
    g[i] = (target.value(zp) - target.value(zm)) / (2.0 * hi);
  }
  return g;
}

inline double max_rel_err(const Vector& approx, const Vector& exact) {
  double worst = 0.0;
  for (int i = 0; i < exact.size(); ++i)
    worst = std::max(worst, std::abs(approx[i] - exact[i]) / std::max(1.0, std::abs(exact[i])));
  return worst;
}

/// Unique scratch directory under the system temp dir, cleaned up on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("mortavg_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace testutil
