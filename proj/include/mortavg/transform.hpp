#pragma once

#include "mortavg/spec.hpp"

namespace mortavg {

/// Offsets of each parameter block inside the flat unconstrained vector.
/// Only free coordinates are counted: identifiability zeros and the
/// sum-to-zero-derived gamma coordinate of the RH model are excluded.
struct Layout {
  int A = 0, N = 0, p = 0, C = 0;
  bool kappa1_fixed = false;
  bool rh_sum_zero = false;
  int gamma_free_begin = 0;  // 0-based first free index within gamma
  int gamma_free_count = 0;
  int n_kappa_free = 0;  // per period component

  int alpha = -1, beta = -1, kappa = -1, gamma = -1, phi = -1;
  int drift = -1, sigma = -1, rho = -1, psi = -1, sigma_gamma = -1;
  int dim = 0;
};

inline Layout layout_of(const ModelSpec& spec) {
  Layout L;
  L.A = spec.n_ages();
  L.N = spec.n_years();
  L.p = spec.n_periods();
  L.C = spec.n_cohorts();
  L.kappa1_fixed = spec.kappa_first_fixed();
  L.rh_sum_zero = spec.family == Family::RH;
  L.n_kappa_free = L.kappa1_fixed ? L.N - 1 : L.N;
  int off = 0;
  if (spec.has_alpha()) {
    L.alpha = off;
    off += L.A;
  }
  if (spec.has_beta()) {
    L.beta = off;
    off += L.A - 1;
  }
  L.kappa = off;
  off += L.p * L.n_kappa_free;
  if (spec.has_cohort()) {
    if (L.C < 4) throw DataError("cohort model needs at least 4 cohorts");
    L.gamma_free_begin = L.rh_sum_zero ? 2 : 1;
    L.gamma_free_count = L.C - (L.rh_sum_zero ? 3 : 2);
    L.gamma = off;
    off += L.gamma_free_count;
  }
  if (spec.is_nb()) {
    L.phi = off;
    off += 1;
  }
  L.drift = off;
  off += L.p;
  L.sigma = off;
  off += L.p;
  if (L.p == 2) {
    L.rho = off;
    off += 1;
  }
  if (spec.has_cohort()) {
    L.psi = off;
    off += 2;
    L.sigma_gamma = off;
    off += 1;
  }
  L.dim = off;
  return L;
}

/// Free dimension of the unconstrained parameterization.
inline int unconstrained_dim(const ModelSpec& spec) { return layout_of(spec).dim; }

/// Stick-breaking intermediates kept for the gradient chain.
struct StickBreakCache {
  Vector v;           // A-1 break fractions
  Vector rem_before;  // stick left before each break
};

namespace detail {

inline double logistic(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Simplex of length A from A-1 free coordinates; z = 0 maps to the uniform
// vector. Returns the simplex, fills the cache, accumulates log|Jacobian|.
inline Vector stick_break(const Eigen::Ref<const Vector>& z, int A, StickBreakCache& cache,
                          double& log_jacobian) {
  Vector beta(A);
  cache.v.resize(A - 1);
  cache.rem_before.resize(A - 1);
  double rem = 1.0;
  for (int k = 0; k < A - 1; ++k) {
    const double shift = std::log(static_cast<double>(A - 1 - k));
    const double v = logistic(z[k] - shift);
    cache.v[k] = v;
    cache.rem_before[k] = rem;
    beta[k] = rem * v;
    log_jacobian += std::log(v) + std::log1p(-v) + std::log(rem);
    rem *= (1.0 - v);
  }
  beta[A - 1] = rem;
  return beta;
}

inline Vector stick_break_inverse(const Eigen::Ref<const Vector>& beta) {
  const int A = static_cast<int>(beta.size());
  Vector z(A - 1);
  double rem = 1.0;
  for (int k = 0; k < A - 1; ++k) {
    const double v = beta[k] / rem;
    if (!(v > 0.0 && v < 1.0))
      throw DataError("beta is not an interior simplex point");
    z[k] = std::log(v) - std::log1p(-v) + std::log(static_cast<double>(A - 1 - k));
    rem -= beta[k];
  }
  return z;
}

}  // namespace detail

struct ConstrainResult {
  ParamState state;
  double log_jacobian = 0.0;
  StickBreakCache sb;
};

/// Map a flat unconstrained vector onto the constraint manifold.
/// Transforms: identity (alpha, free kappa, free gamma, drift, psi),
/// exp (phi, sigmas), tanh (rho), stick-breaking (beta).
inline ConstrainResult constrain(const ModelSpec& spec, const Eigen::Ref<const Vector>& z) {
  const Layout L = layout_of(spec);
  if (z.size() != L.dim)
    throw DataError("unconstrained vector has dimension " + std::to_string(z.size()) +
                    ", expected " + std::to_string(L.dim));
  ConstrainResult r;
  ParamState& s = r.state;
  if (L.alpha >= 0) s.alpha = z.segment(L.alpha, L.A);
  if (L.beta >= 0) s.beta = detail::stick_break(z.segment(L.beta, L.A - 1), L.A, r.sb, r.log_jacobian);
  s.kappa = Matrix::Zero(L.p, L.N);
  for (int i = 0; i < L.p; ++i) {
    const int base = L.kappa + i * L.n_kappa_free;
    const int t0 = L.kappa1_fixed ? 1 : 0;
    for (int j = 0; j < L.n_kappa_free; ++j) s.kappa(i, t0 + j) = z[base + j];
  }
  if (L.gamma >= 0) {
    s.gamma = Vector::Zero(L.C);
    double sum = 0.0;
    for (int j = 0; j < L.gamma_free_count; ++j) {
      s.gamma[L.gamma_free_begin + j] = z[L.gamma + j];
      sum += z[L.gamma + j];
    }
    if (L.rh_sum_zero) s.gamma[1] = -sum;
  }
  if (L.phi >= 0) {
    s.phi = std::exp(z[L.phi]);
    r.log_jacobian += z[L.phi];
  }
  s.drift = z.segment(L.drift, L.p);
  s.sigma_kappa.resize(L.p);
  for (int i = 0; i < L.p; ++i) {
    s.sigma_kappa[i] = std::exp(z[L.sigma + i]);
    r.log_jacobian += z[L.sigma + i];
  }
  if (L.rho >= 0) {
    s.rho = std::tanh(z[L.rho]);
    r.log_jacobian += std::log1p(-s.rho * s.rho);
  }
  if (L.psi >= 0) {
    s.psi1 = z[L.psi];
    s.psi2 = z[L.psi + 1];
    s.sigma_gamma = std::exp(z[L.sigma_gamma]);
    r.log_jacobian += z[L.sigma_gamma];
  }
  return r;
}

/// Inverse of constrain(). Throws DataError when the state violates the
/// family's invariants (boundary zeros, simplex membership, positivity).
inline Vector unconstrain(const ModelSpec& spec, const ParamState& s) {
  const Layout L = layout_of(spec);
  s.check_dims(spec);
  Vector z(L.dim);
  if (L.alpha >= 0) z.segment(L.alpha, L.A) = s.alpha;
  if (L.beta >= 0) {
    double sum = s.beta.sum();
    if (std::abs(sum - 1.0) > 1e-8) throw DataError("beta does not sum to 1");
    z.segment(L.beta, L.A - 1) = detail::stick_break_inverse(s.beta);
  }
  const int t0 = L.kappa1_fixed ? 1 : 0;
  for (int i = 0; i < L.p; ++i) {
    if (L.kappa1_fixed && std::abs(s.kappa(i, 0)) > 1e-12)
      throw DataError("kappa at the first year must be 0 for this family");
    for (int j = 0; j < L.n_kappa_free; ++j) z[L.kappa + i * L.n_kappa_free + j] = s.kappa(i, t0 + j);
  }
  if (L.gamma >= 0) {
    if (std::abs(s.gamma[0]) > 1e-12 || std::abs(s.gamma[L.C - 1]) > 1e-12)
      throw DataError("gamma boundary values must be 0");
    if (L.rh_sum_zero && std::abs(s.gamma.sum()) > 1e-8 * (1.0 + s.gamma.cwiseAbs().maxCoeff()))
      throw DataError("gamma must sum to 0 for the RH model");
    for (int j = 0; j < L.gamma_free_count; ++j) z[L.gamma + j] = s.gamma[L.gamma_free_begin + j];
  }
  if (L.phi >= 0) {
    if (!(s.phi > 0.0)) throw DataError("phi must be positive");
    z[L.phi] = std::log(s.phi);
  }
  z.segment(L.drift, L.p) = s.drift;
  for (int i = 0; i < L.p; ++i) {
    if (!(s.sigma_kappa[i] > 0.0)) throw DataError("sigma_kappa must be positive");
    z[L.sigma + i] = std::log(s.sigma_kappa[i]);
  }
  if (L.rho >= 0) {
    if (!(std::abs(s.rho) < 1.0)) throw DataError("rho must lie in (-1, 1)");
    z[L.rho] = std::atanh(s.rho);
  }
  if (L.psi >= 0) {
    z[L.psi] = s.psi1;
    z[L.psi + 1] = s.psi2;
    if (!(s.sigma_gamma > 0.0)) throw DataError("sigma_gamma must be positive");
    z[L.sigma_gamma] = std::log(s.sigma_gamma);
  }
  return z;
}

/// Gradient of a function of the constrained state, expressed blockwise.
struct StateGrad {
  Vector alpha, beta;
  Matrix kappa;
  Vector gamma;
  double phi = 0.0;
  Vector drift, sigma_kappa;
  double rho = 0.0, psi1 = 0.0, psi2 = 0.0, sigma_gamma = 0.0;

  static StateGrad zero(const ModelSpec& spec) {
    const Layout L = layout_of(spec);
    StateGrad g;
    if (L.alpha >= 0) g.alpha = Vector::Zero(L.A);
    if (L.beta >= 0) g.beta = Vector::Zero(L.A);
    g.kappa = Matrix::Zero(L.p, L.N);
    if (L.gamma >= 0) g.gamma = Vector::Zero(L.C);
    g.drift = Vector::Zero(L.p);
    g.sigma_kappa = Vector::Zero(L.p);
    return g;
  }
};

/// Pull a constrained-space gradient back through the bijection, adding the
/// gradient of the log-Jacobian, to obtain d/dz of (f(theta(z)) + logJ(z)).
inline Vector chain_to_unconstrained(const ModelSpec& spec, const ConstrainResult& cr,
                                     const StateGrad& g) {
  const Layout L = layout_of(spec);
  const ParamState& s = cr.state;
  Vector dz = Vector::Zero(L.dim);
  if (L.alpha >= 0) dz.segment(L.alpha, L.A) = g.alpha;
  if (L.beta >= 0) {
    // suffix[k] = sum_{i>k} g_i beta_i
    double suffix = 0.0;
    Vector suffixes(L.A - 1);
    for (int k = L.A - 2; k >= 0; --k) {
      suffix += g.beta[k + 1] * s.beta[k + 1];
      suffixes[k] = suffix;
    }
    for (int k = 0; k < L.A - 1; ++k) {
      const double v = cr.sb.v[k];
      const double chain = cr.sb.rem_before[k] * v * (1.0 - v) * g.beta[k] - v * suffixes[k];
      const double jac = (1.0 - v) - static_cast<double>(L.A - 1 - k) * v;
      dz[L.beta + k] = chain + jac;
    }
  }
  const int t0 = L.kappa1_fixed ? 1 : 0;
  for (int i = 0; i < L.p; ++i)
    for (int j = 0; j < L.n_kappa_free; ++j)
      dz[L.kappa + i * L.n_kappa_free + j] = g.kappa(i, t0 + j);
  if (L.gamma >= 0) {
    const double derived = L.rh_sum_zero ? g.gamma[1] : 0.0;
    for (int j = 0; j < L.gamma_free_count; ++j)
      dz[L.gamma + j] = g.gamma[L.gamma_free_begin + j] - derived;
  }
  if (L.phi >= 0) dz[L.phi] = g.phi * s.phi + 1.0;
  dz.segment(L.drift, L.p) = g.drift;
  for (int i = 0; i < L.p; ++i) dz[L.sigma + i] = g.sigma_kappa[i] * s.sigma_kappa[i] + 1.0;
  if (L.rho >= 0) dz[L.rho] = g.rho * (1.0 - s.rho * s.rho) - 2.0 * s.rho;
  if (L.psi >= 0) {
    dz[L.psi] = g.psi1;
    dz[L.psi + 1] = g.psi2;
    dz[L.sigma_gamma] = g.sigma_gamma * s.sigma_gamma + 1.0;
  }
  return dz;
}

}  // namespace mortavg
