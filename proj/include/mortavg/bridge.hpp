#pragma once

#include <functional>

#include "mortavg/draws.hpp"

namespace mortavg {

struct BridgeResult {
  double log_ml = 0.0;
  int iterations = 0;
  double terminal_delta = 0.0;
  int n_posterior_draws = 0;
  int n_proposal_draws = 0;
  bool converged = false;
};

/// Multivariate normal with a cached Cholesky factor, used as the bridge
/// proposal in unconstrained space.
class MvNormal {
 public:
  MvNormal(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    const Eigen::Index D = mean_.size();
    if (cov_.rows() != D || cov_.cols() != D)
      throw DataError("proposal covariance has wrong shape");
    Eigen::LLT<Matrix> llt(cov_);
    if (llt.info() != Eigen::Success)
      throw NumericalError("proposal covariance is not positive definite");
    chol_ = llt.matrixL();
    log_norm_ = -0.5 * D * log_2pi;
    for (Eigen::Index i = 0; i < D; ++i) {
      if (!(chol_(i, i) > 0.0))
        throw NumericalError("proposal covariance is not positive definite");
      log_norm_ -= std::log(chol_(i, i));
    }
  }

  int dim() const { return static_cast<int>(mean_.size()); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }

  double log_density(const Eigen::Ref<const Vector>& x) const {
    const Vector u = chol_.triangularView<Eigen::Lower>().solve(x - mean_);
    return log_norm_ - 0.5 * u.squaredNorm();
  }

  Vector sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> n01;
    Vector xi(mean_.size());
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi[i] = n01(rng);
    return mean_ + chol_ * xi;
  }

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
  double log_norm_ = 0.0;
};

/// Moment-matched normal proposal over unconstrained draws (rows), with a
/// small diagonal jitter so weakly identified directions stay factorizable.
inline MvNormal fit_proposal(const Eigen::Ref<const Matrix>& z) {
  const Eigen::Index S = z.rows(), D = z.cols();
  if (S < 2 * D) throw DataError("proposal fit needs at least 2*D draws");
  const Vector mean = z.colwise().mean();
  Matrix centered = z.rowwise() - mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(S - 1);
  const double jitter = 1e-8 * cov.trace() / static_cast<double>(D);
  if (!(jitter > 0.0))
    throw NumericalError("draws are degenerate, proposal covariance is singular");
  cov.diagonal().array() += jitter;
  return MvNormal(mean, cov);
}

inline MvNormal fit_proposal(const PosteriorDraws& draws) { return fit_proposal(draws.z); }

using LogDensityFn = std::function<double(const Eigen::Ref<const Vector>&)>;

/// Normalizing constant of an unnormalized log density against a normalized
/// proposal, by the iterated optimal-bridge scheme. The recursion runs in log
/// space until successive log estimates move less than tol.
inline BridgeResult bridge_log_ml(const LogDensityFn& log_unnorm_posterior,
                                  const MvNormal& proposal,
                                  const Eigen::Ref<const Matrix>& posterior_draws,
                                  const Eigen::Ref<const Matrix>& proposal_draws,
                                  double tol = 1e-10, int max_iter = 1000) {
  const Eigen::Index S1 = posterior_draws.rows(), S2 = proposal_draws.rows();
  if (S1 < 1 || S2 < 1) throw DataError("bridge estimator needs draws from both ends");

  // Log ratios target/proposal at both draw sets. The target may vanish in
  // the proposal tails; that is a zero summand, not an error. On its own
  // posterior draws the target must be finite.
  Vector l1(S1), l2(S2);
  for (Eigen::Index j = 0; j < S1; ++j) {
    double lp;
    try {
      lp = log_unnorm_posterior(posterior_draws.row(j).transpose());
    } catch (const NumericalError&) {
      lp = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(lp))
      throw NumericalError("log target not finite at posterior draw " + std::to_string(j));
    l1[j] = lp - proposal.log_density(posterior_draws.row(j).transpose());
  }
  for (Eigen::Index i = 0; i < S2; ++i) {
    double lp;
    try {
      lp = log_unnorm_posterior(proposal_draws.row(i).transpose());
    } catch (const NumericalError&) {
      lp = -std::numeric_limits<double>::infinity();
    }
    if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity())
      throw NumericalError("log target not finite at proposal draw " + std::to_string(i));
    l2[i] = lp - proposal.log_density(proposal_draws.row(i).transpose());
  }

  BridgeResult res;
  res.n_posterior_draws = static_cast<int>(S1);
  res.n_proposal_draws = static_cast<int>(S2);
  const double log_s1 = std::log(static_cast<double>(S1));
  const double log_s2 = std::log(static_cast<double>(S2));
  double log_r = 0.0;
  Vector num_terms(S2), den_terms(S1);
  for (int it = 1; it <= max_iter; ++it) {
    for (Eigen::Index i = 0; i < S2; ++i)
      num_terms[i] = l2[i] - log_sum_exp(l2[i], log_r);
    for (Eigen::Index j = 0; j < S1; ++j)
      den_terms[j] = -log_sum_exp(l1[j], log_r);
    const double next =
        (log_sum_exp(num_terms) - log_s2) - (log_sum_exp(den_terms) - log_s1);
    res.terminal_delta = std::abs(next - log_r);
    res.iterations = it;
    log_r = next;
    if (res.terminal_delta < tol) {
      res.converged = true;
      break;
    }
  }
  res.log_ml = log_r;
  return res;
}

struct EvidenceOptions {
  double tol = 1e-10;
  int max_iter = 1000;
  std::uint64_t seed = 0;
};

/// Marginal likelihood of a fitted model from its unconstrained draws: the
/// first half of the rows fits the proposal, the second half enters the
/// estimator together with an equal number of fresh proposal draws.
inline BridgeResult estimate_log_ml(const TargetDensity& target,
                                    const Eigen::Ref<const Matrix>& z,
                                    const EvidenceOptions& opts = {}) {
  const Eigen::Index S = z.rows();
  const Eigen::Index S_fit = S / 2;
  const Eigen::Index S1 = S - S_fit;
  if (S_fit < 2 * z.cols())
    throw DataError("marginal likelihood needs at least 4*D posterior draws");
  MvNormal proposal = fit_proposal(z.topRows(S_fit));
  std::mt19937_64 rng(opts.seed + 0x9E3779B97F4A7C15ULL);
  Matrix proposal_draws(S1, z.cols());
  for (Eigen::Index i = 0; i < S1; ++i) proposal_draws.row(i) = proposal.sample(rng).transpose();
  LogDensityFn fn = [&target](const Eigen::Ref<const Vector>& x) { return target.value(x); };
  return bridge_log_ml(fn, proposal, z.bottomRows(S1), proposal_draws, opts.tol, opts.max_iter);
}

inline BridgeResult estimate_log_ml(const PosteriorDraws& draws, const MortalitySurface& surface,
                                    const EvidenceOptions& opts = {}) {
  LogPosterior target(draws.spec, surface);
  return estimate_log_ml(target, draws.z, opts);
}

/// Posterior model probabilities from log marginal likelihoods.
inline Vector bma_weights(const Eigen::Ref<const Vector>& log_mls,
                          const Vector& prior_probs = Vector()) {
  const Eigen::Index K = log_mls.size();
  if (K < 1) throw DataError("model weights need at least one model");
  for (Eigen::Index k = 0; k < K; ++k)
    if (!std::isfinite(log_mls[k]))
      throw DataError("log marginal likelihood " + std::to_string(k) + " is not finite");
  Vector score = log_mls;
  if (prior_probs.size() > 0) {
    if (prior_probs.size() != K) throw DataError("prior model probabilities have wrong length");
    if (prior_probs.minCoeff() <= 0.0 || std::abs(prior_probs.sum() - 1.0) > 1e-8)
      throw DataError("prior model probabilities must form a simplex");
    score += prior_probs.array().log().matrix();
  }
  const double lse = log_sum_exp(score);
  Vector w(K);
  for (Eigen::Index k = 0; k < K; ++k) w[k] = std::exp(score[k] - lse);
  return w;
}

}  // namespace mortavg
