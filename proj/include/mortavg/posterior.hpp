#pragma once

#include <boost/math/special_functions/digamma.hpp>
#include <math.h>

#include <memory>
#include <random>
#include <sstream>

#include "mortavg/transform.hpp"

namespace mortavg {

namespace detail {

// Thread-safe positive-argument log-gamma.
inline double lgamma_pos(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

// log(1 + exp(x)) without overflow or cancellation.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

// lgamma(d + phi) - lgamma(phi). Direct subtraction loses ~phi*eps absolute
// accuracy, so huge phi switches to the Stirling-series difference.
inline double lgamma_ratio(double d, double phi) {
  if (d == 0.0) return 0.0;
  if (phi < 1e8) return lgamma_pos(d + phi) - lgamma_pos(phi);
  return d * std::log(phi) + (phi + d - 0.5) * std::log1p(d / phi) - d -
         d / (12.0 * phi * (phi + d));
}

}  // namespace detail

/// Count log-pmf of d deaths with mean m = e * exp(eta) and NB dispersion phi,
/// in the gamma-function form valid for fractional observed deaths.
/// Evaluated from log(m) so that extreme eta cannot produce NaN; the
/// m/(m+phi) and phi/(m+phi) factors enter through softplus of
/// t = log(m) - log(phi), which stays accurate for phi up to the Poisson limit.
inline double nb_log_pmf(double d, double log_m, double phi) {
  const double t = log_m - std::log(phi);
  return detail::lgamma_ratio(d, phi) - detail::lgamma_pos(d + 1.0) - d * detail::softplus(-t) -
         phi * detail::softplus(t);
}

inline double poisson_log_pmf(double d, double log_m) {
  return d * log_m - std::exp(log_m) - detail::lgamma_pos(d + 1.0);
}

/// Sum over cells of the count log-likelihood for the given state.
inline double log_likelihood(const ModelSpec& spec, const ParamState& state,
                             const MortalitySurface& surface) {
  spec.check_surface(surface);
  const Array2D eta = predictor(spec, state);
  const Array2D log_m = surface.exposures.log() + eta;
  double total = 0.0;
  for (int x = 0; x < spec.n_ages(); ++x)
    for (int t = 0; t < spec.n_years(); ++t) {
      const double cell = spec.is_nb()
                              ? nb_log_pmf(surface.deaths(x, t), log_m(x, t), state.phi)
                              : poisson_log_pmf(surface.deaths(x, t), log_m(x, t));
      if (!std::isfinite(cell)) {
        std::ostringstream os;
        os << "non-finite log-likelihood at age " << spec.ages[x] << ", year " << spec.years[t]
           << " (d=" << surface.deaths(x, t) << ", e=" << surface.exposures(x, t)
           << ", eta=" << eta(x, t) << ", phi=" << state.phi << ")";
        throw NumericalError(os.str());
      }
      total += cell;
    }
  return total;
}

namespace detail {

// Log prior density over the constrained state, with optional gradient
// accumulation. Density terms:
//   alpha_x ~ N(0, 100); beta ~ Dirichlet(1,..,1); 1/phi ~ Half-Normal(0,1);
//   drift, psi ~ N(0, 10); sigmas ~ Exp(0.1); rho ~ U[-1, 1];
//   kappa: random walk with drift, transitions t2..tN;
//   gamma: AR(2) transitions over positions 3..C of the constrained cohort
//   sequence (conditioning on the first two values).
inline double log_prior_impl(const ModelSpec& spec, const ParamState& s, StateGrad* g) {
  const PriorConfig& pr = spec.prior;
  const int N = spec.n_years(), p = spec.n_periods(), C = spec.n_cohorts();
  double lp = 0.0;

  if (spec.has_alpha()) {
    const double var = pr.alpha_sd * pr.alpha_sd;
    for (int x = 0; x < spec.n_ages(); ++x) {
      lp += normal_logpdf(s.alpha[x], pr.alpha_mean, pr.alpha_sd);
      if (g) g->alpha[x] += -(s.alpha[x] - pr.alpha_mean) / var;
    }
  }
  if (spec.has_beta()) {
    // Dirichlet(1,...,1) is flat on the simplex with constant log-density
    // log Gamma(A); no gradient.
    lp += lgamma_pos(static_cast<double>(spec.n_ages()));
  }
  if (spec.is_nb()) {
    // Density over phi induced by 1/phi ~ Half-Normal(0, 1).
    lp += 0.5 * std::log(2.0 / M_PI) - 0.5 / (s.phi * s.phi) - 2.0 * std::log(s.phi);
    if (g) g->phi += 1.0 / (s.phi * s.phi * s.phi) - 2.0 / s.phi;
  }
  const double drift_var = pr.drift_sd * pr.drift_sd;
  for (int i = 0; i < p; ++i) {
    lp += normal_logpdf(s.drift[i], 0.0, pr.drift_sd);
    if (g) g->drift[i] += -s.drift[i] / drift_var;
    lp += std::log(pr.sigma_rate) - pr.sigma_rate * s.sigma_kappa[i];
    if (g) g->sigma_kappa[i] += -pr.sigma_rate;
  }
  if (p == 2) lp += -std::log(2.0);  // rho ~ U[-1, 1]

  // Random walk with drift over the period indexes.
  if (p == 1) {
    const double sd = s.sigma_kappa[0];
    const double var = sd * sd;
    for (int t = 1; t < N; ++t) {
      const double u = s.kappa(0, t) - s.kappa(0, t - 1) - s.drift[0];
      lp += normal_logpdf(u, 0.0, sd);
      if (g) {
        const double du = -u / var;
        g->kappa(0, t) += du;
        g->kappa(0, t - 1) -= du;
        g->drift[0] -= du;
        g->sigma_kappa[0] += -1.0 / sd + u * u / (var * sd);
      }
    }
  } else {
    const double s1 = s.sigma_kappa[0], s2 = s.sigma_kappa[1], r = s.rho;
    const double k = 1.0 / (1.0 - r * r);
    const double log_norm = -log_2pi - std::log(s1) - std::log(s2) + 0.5 * std::log(k);
    for (int t = 1; t < N; ++t) {
      const double u1 = s.kappa(0, t) - s.kappa(0, t - 1) - s.drift[0];
      const double u2 = s.kappa(1, t) - s.kappa(1, t - 1) - s.drift[1];
      const double a = u1 / s1, b = u2 / s2;
      const double q = k * (a * a - 2.0 * r * a * b + b * b);
      lp += log_norm - 0.5 * q;
      if (g) {
        const double du1 = -k * (a - r * b) / s1;
        const double du2 = -k * (b - r * a) / s2;
        g->kappa(0, t) += du1;
        g->kappa(0, t - 1) -= du1;
        g->drift[0] -= du1;
        g->kappa(1, t) += du2;
        g->kappa(1, t - 1) -= du2;
        g->drift[1] -= du2;
        g->sigma_kappa[0] += (-1.0 + k * a * (a - r * b)) / s1;
        g->sigma_kappa[1] += (-1.0 + k * b * (b - r * a)) / s2;
        g->rho += r * k - (r * k * q - k * a * b);
      }
    }
  }

  if (spec.has_cohort()) {
    const double psi_var = pr.psi_sd * pr.psi_sd;
    lp += normal_logpdf(s.psi1, 0.0, pr.psi_sd) + normal_logpdf(s.psi2, 0.0, pr.psi_sd);
    lp += std::log(pr.sigma_rate) - pr.sigma_rate * s.sigma_gamma;
    if (g) {
      g->psi1 += -s.psi1 / psi_var;
      g->psi2 += -s.psi2 / psi_var;
      g->sigma_gamma += -pr.sigma_rate;
    }
    const double sd = s.sigma_gamma;
    const double var = sd * sd;
    for (int c = 2; c < C; ++c) {
      const double u = s.gamma[c] - s.psi1 * s.gamma[c - 1] - s.psi2 * s.gamma[c - 2];
      lp += normal_logpdf(u, 0.0, sd);
      if (g) {
        const double du = -u / var;
        g->gamma[c] += du;
        g->gamma[c - 1] -= du * s.psi1;
        g->gamma[c - 2] -= du * s.psi2;
        g->psi1 -= du * s.gamma[c - 1];
        g->psi2 -= du * s.gamma[c - 2];
        g->sigma_gamma += -1.0 / sd + u * u / (var * sd);
      }
    }
  }
  return lp;
}

}  // namespace detail

/// Log prior density of a constrained state (value only).
inline double log_prior(const ModelSpec& spec, const ParamState& state) {
  state.check_dims(spec);
  return detail::log_prior_impl(spec, state, nullptr);
}

/// Interface the samplers and the bridge estimator drive: an unnormalized
/// log-density over R^dim with an exact gradient.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;
  virtual int dim() const = 0;
  virtual double value_and_gradient(const Eigen::Ref<const Vector>& z, Vector& grad) const = 0;
  virtual double value(const Eigen::Ref<const Vector>& z) const {
    Vector grad(dim());
    return value_and_gradient(z, grad);
  }
  /// Starting point for one chain: uniform over [-2, 2] per coordinate unless
  /// a subclass has something better.
  virtual Vector init_draw(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Vector z(dim());
    for (int i = 0; i < z.size(); ++i) z[i] = u(rng);
    return z;
  }
};

/// Unnormalized log posterior over the unconstrained space:
///   log p(y | theta(z)) + log p(theta(z)) + log |J(z)|
/// with its exact gradient. Throws NumericalError instead of returning NaN.
class LogPosterior final : public TargetDensity {
 public:
  LogPosterior(ModelSpec spec, const MortalitySurface& surface)
      : spec_(std::move(spec)), layout_(layout_of(spec_)) {
    spec_.check_surface(surface);
    deaths_ = surface.deaths;
    log_expo_ = surface.exposures.log();
    lgamma_d1_ = 0.0;
    for (int x = 0; x < deaths_.rows(); ++x)
      for (int t = 0; t < deaths_.cols(); ++t)
        lgamma_d1_ += detail::lgamma_pos(deaths_(x, t) + 1.0);
  }

  int dim() const override { return layout_.dim; }
  const ModelSpec& spec() const { return spec_; }

  /// Uniform [-2, 2] start, with the level coordinates pinned at crude log
  /// rates averaged over the observed years to shorten warmup.
  Vector init_draw(std::mt19937_64& rng) const override {
    Vector z = TargetDensity::init_draw(rng);
    if (layout_.alpha >= 0) {
      for (int x = 0; x < layout_.A; ++x) {
        double acc = 0.0;
        for (int t = 0; t < layout_.N; ++t)
          acc += std::log(deaths_(x, t) + 0.5) - log_expo_(x, t);
        z[layout_.alpha + x] = acc / layout_.N;
      }
    }
    return z;
  }

  double value_and_gradient(const Eigen::Ref<const Vector>& z, Vector& grad) const override {
    if (!z.allFinite()) throw NumericalError("non-finite unconstrained coordinates");
    const ConstrainResult cr = constrain(spec_, z);
    const ParamState& s = cr.state;
    StateGrad g = StateGrad::zero(spec_);

    const Array2D eta = predictor(spec_, s);
    const int A = spec_.n_ages(), N = spec_.n_years();
    const bool nb = spec_.is_nb();
    const double phi = s.phi;
    const double log_phi = nb ? std::log(phi) : 0.0;
    const double lgamma_phi = nb && phi < 1e8 ? detail::lgamma_pos(phi) : 0.0;

    double loglik = -lgamma_d1_;
    Array2D w(A, N);  // d loglik / d eta per cell
    double dphi = 0.0;
    for (int x = 0; x < A; ++x) {
      for (int t = 0; t < N; ++t) {
        const double d = deaths_(x, t);
        const double log_m = log_expo_(x, t) + eta(x, t);
        if (nb) {
          const double t_lm = log_m - log_phi;
          const double lgr = phi < 1e8 ? detail::lgamma_pos(d + phi) - lgamma_phi
                                       : detail::lgamma_ratio(d, phi);
          loglik += lgr - d * detail::softplus(-t_lm) - phi * detail::softplus(t_lm);
          const double lse = log_phi + detail::softplus(t_lm);
          const double inv_mphi = std::exp(-lse);
          const double m_frac = std::exp(log_m - lse);  // m / (m + phi)
          w(x, t) = phi * (d * inv_mphi - m_frac);
          dphi += boost::math::digamma(d + phi) + log_phi + 1.0 - lse - (d + phi) * inv_mphi;
        } else {
          const double m = std::exp(log_m);
          loglik += d * log_m - m;
          w(x, t) = d - m;
        }
      }
    }
    if (nb) dphi -= A * N * boost::math::digamma(phi);

    // Push the per-cell predictor gradient into the parameter blocks.
    if (spec_.has_alpha()) g.alpha += w.rowwise().sum().matrix();
    const Vector col_sums = w.colwise().sum().matrix();
    switch (spec_.family) {
      case Family::LC:
      case Family::RH:
        g.beta += (w.matrix() * s.kappa.row(0).transpose());
        g.kappa.row(0) += (s.beta.transpose() * w.matrix());
        break;
      case Family::APC:
        g.kappa.row(0) += col_sums.transpose();
        break;
      case Family::CBD:
      case Family::M6: {
        g.kappa.row(0) += col_sums.transpose();
        const double xbar = spec_.mean_age();
        for (int t = 0; t < N; ++t) {
          double acc = 0.0;
          for (int x = 0; x < A; ++x) acc += w(x, t) * (spec_.ages[x] - xbar);
          g.kappa(1, t) += acc;
        }
        break;
      }
    }
    if (spec_.has_cohort()) {
      for (int x = 0; x < A; ++x)
        for (int t = 0; t < N; ++t) g.gamma[spec_.cohort_index(x, t)] += w(x, t);
    }
    if (nb) g.phi += dphi;

    const double lp = detail::log_prior_impl(spec_, s, &g);
    const double total = loglik + lp + cr.log_jacobian;
    grad = chain_to_unconstrained(spec_, cr, g);
    if (!std::isfinite(total) || !grad.allFinite()) {
      std::ostringstream os;
      os << "non-finite log posterior (loglik=" << loglik << ", logprior=" << lp
         << ", logJ=" << cr.log_jacobian << ", family=" << to_string(spec_.family) << ")";
      throw NumericalError(os.str());
    }
    return total;
  }

 private:
  ModelSpec spec_;
  Layout layout_;
  Array2D deaths_, log_expo_;
  double lgamma_d1_ = 0.0;
};

/// Value-and-gradient entry point matching the sampler's calling convention.
inline std::pair<double, Vector> log_posterior_and_gradient(const ModelSpec& spec,
                                                            const Eigen::Ref<const Vector>& z,
                                                            const MortalitySurface& surface) {
  LogPosterior target(spec, surface);
  Vector grad(target.dim());
  const double v = target.value_and_gradient(z, grad);
  return {v, std::move(grad)};
}

}  // namespace mortavg
