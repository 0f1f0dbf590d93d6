#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "mortavg/surface.hpp"
#include "mortavg/types.hpp"

namespace mortavg {

enum class Family { LC, RH, APC, CBD, M6 };
enum class Likelihood { NegBinomial, Poisson };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::LC: return "LC";
    case Family::RH: return "RH";
    case Family::APC: return "APC";
    case Family::CBD: return "CBD";
    case Family::M6: return "M6";
  }
  return "?";
}

inline std::string to_string(Likelihood l) {
  return l == Likelihood::NegBinomial ? "nb" : "poisson";
}

inline Family family_from_string(const std::string& s) {
  if (s == "LC" || s == "lc") return Family::LC;
  if (s == "RH" || s == "rh") return Family::RH;
  if (s == "APC" || s == "apc") return Family::APC;
  if (s == "CBD" || s == "cbd") return Family::CBD;
  if (s == "M6" || s == "m6") return Family::M6;
  throw DataError("unknown model family '" + s + "'");
}

inline Likelihood likelihood_from_string(const std::string& s) {
  if (s == "nb" || s == "negbinomial" || s == "negative-binomial") return Likelihood::NegBinomial;
  if (s == "poisson") return Likelihood::Poisson;
  throw DataError("unknown likelihood '" + s + "' (expected nb|poisson)");
}

/// Prior hyperparameters. Normal priors are parameterized by standard
/// deviation here; the drift and AR coefficients use sd = sqrt(10).
struct PriorConfig {
  double alpha_mean = 0.0;
  double alpha_sd = 10.0;
  double drift_sd = 3.1622776601683795;  // sqrt(10)
  double psi_sd = 3.1622776601683795;
  double sigma_rate = 0.1;  // Exp rate for sigma_1, sigma_2, sigma_gamma
  double dirichlet_conc = 1.0;
};

/// Which of the five predictor structures is fitted, with which count
/// likelihood, on which age x year grid.
struct ModelSpec {
  Family family = Family::LC;
  Likelihood likelihood = Likelihood::NegBinomial;
  std::vector<int> ages;
  std::vector<int> years;
  PriorConfig prior;

  int n_ages() const { return static_cast<int>(ages.size()); }
  int n_years() const { return static_cast<int>(years.size()); }

  double mean_age() const {
    return std::accumulate(ages.begin(), ages.end(), 0.0) / static_cast<double>(ages.size());
  }

  bool has_alpha() const { return family == Family::LC || family == Family::RH || family == Family::APC; }
  bool has_beta() const { return family == Family::LC || family == Family::RH; }
  bool has_cohort() const { return family == Family::RH || family == Family::APC || family == Family::M6; }
  bool is_nb() const { return likelihood == Likelihood::NegBinomial; }

  /// Number of period indexes: 2 for CBD/M6, 1 otherwise.
  int n_periods() const { return (family == Family::CBD || family == Family::M6) ? 2 : 1; }

  /// Number of cohorts C = A + N - 1 for cohort models, 0 otherwise.
  int n_cohorts() const { return has_cohort() ? n_ages() + n_years() - 1 : 0; }

  /// kappa^(i)_{t1} is pinned to zero only when an alpha term absorbs the level.
  bool kappa_first_fixed() const { return has_alpha(); }

  /// 0-based cohort index for age index x and year index t; ranges over [0, C).
  int cohort_index(int x, int t) const { return t - x + n_ages() - 1; }

  /// Birth year of 0-based cohort index c; cohort 0 is the oldest age in the
  /// first year, so its members were born in years.front() - ages.back().
  int cohort_year(int c) const { return years.front() - ages.back() + c; }

  static ModelSpec for_surface(Family f, Likelihood l, const MortalitySurface& s) {
    ModelSpec spec;
    spec.family = f;
    spec.likelihood = l;
    spec.ages = s.ages;
    spec.years = s.years;
    return spec;
  }

  void check_surface(const MortalitySurface& s) const {
    if (s.ages != ages || s.years != years)
      throw DataError("surface grid does not match model spec grid");
  }
};

/// One point of a model's constrained parameter space. Vectors not used by a
/// family have size zero; identifiability zeros are stored explicitly.
struct ParamState {
  Vector alpha;        // A (LC, RH, APC)
  Vector beta;         // A on the simplex (LC, RH)
  Matrix kappa;        // p x N
  Vector gamma;        // C with boundary zeros (cohort models)
  double phi = 0.0;    // NB dispersion
  Vector drift;        // p
  Vector sigma_kappa;  // p
  double rho = 0.0;    // p == 2 only
  double psi1 = 0.0, psi2 = 0.0;
  double sigma_gamma = 0.0;

  void check_dims(const ModelSpec& spec) const {
    const int A = spec.n_ages(), N = spec.n_years(), p = spec.n_periods(), C = spec.n_cohorts();
    auto fail = [&](const char* what) {
      throw DataError(std::string("parameter state dimension mismatch: ") + what);
    };
    if (alpha.size() != (spec.has_alpha() ? A : 0)) fail("alpha");
    if (beta.size() != (spec.has_beta() ? A : 0)) fail("beta");
    if (kappa.rows() != p || kappa.cols() != N) fail("kappa");
    if (gamma.size() != C) fail("gamma");
    if (drift.size() != p) fail("drift");
    if (sigma_kappa.size() != p) fail("sigma_kappa");
  }
};

/// Assemble the linear predictor eta (A x N) for the family's structure.
inline Array2D predictor(const ModelSpec& spec, const ParamState& state) {
  state.check_dims(spec);
  const int A = spec.n_ages(), N = spec.n_years();
  const double xbar = spec.mean_age();
  Array2D eta(A, N);
  for (int x = 0; x < A; ++x) {
    const double age_centered = static_cast<double>(spec.ages[x]) - xbar;
    for (int t = 0; t < N; ++t) {
      double v = 0.0;
      switch (spec.family) {
        case Family::LC:
          v = state.alpha[x] + state.beta[x] * state.kappa(0, t);
          break;
        case Family::RH:
          v = state.alpha[x] + state.beta[x] * state.kappa(0, t) +
              state.gamma[spec.cohort_index(x, t)];
          break;
        case Family::APC:
          v = state.alpha[x] + state.kappa(0, t) + state.gamma[spec.cohort_index(x, t)];
          break;
        case Family::CBD:
          v = state.kappa(0, t) + age_centered * state.kappa(1, t);
          break;
        case Family::M6:
          v = state.kappa(0, t) + age_centered * state.kappa(1, t) +
              state.gamma[spec.cohort_index(x, t)];
          break;
      }
      eta(x, t) = v;
    }
  }
  return eta;
}

}  // namespace mortavg
