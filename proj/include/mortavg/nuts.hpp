#pragma once

#include <cstdint>
#include <future>
#include <random>

#include "mortavg/posterior.hpp"

namespace mortavg {

struct SamplerConfig {
  int n_chains = 4;
  int n_iter = 4000;  // per chain, warmup included
  double warmup_fraction = 0.5;
  double target_accept = 0.8;
  int max_depth = 10;
  std::uint64_t seed = 1;
  bool parallel_chains = true;

  void validate() const {
    if (n_chains < 1) throw DataError("sampler: n_chains must be >= 1");
    if (n_iter < 4 || n_iter % 2 != 0) throw DataError("sampler: n_iter must be even and >= 4");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
      throw DataError("sampler: warmup fraction must lie in (0, 1)");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw DataError("sampler: target acceptance must lie in (0, 1)");
    if (max_depth < 1 || max_depth > 14) throw DataError("sampler: max depth out of range");
  }
  int n_warmup() const { return static_cast<int>(std::lround(n_iter * warmup_fraction)); }
  int n_keep() const { return n_iter - n_warmup(); }
};

struct ChainDiagnostics {
  int chain_id = 0;
  double step_size = 0.0;
  int divergences = 0;        // post-warmup
  double mean_accept = 0.0;   // post-warmup
  double mean_energy_error = 0.0;
  double max_energy_error = 0.0;
  int max_depth_hits = 0;
};

/// Raw multi-chain sampling output over an arbitrary target, chain-major row
/// order (all post-warmup draws of chain 0, then chain 1, ...).
struct SampleResult {
  Matrix z;  // S x D
  std::vector<int> chain_id;
  std::vector<int> iteration;  // post-warmup index within chain
  std::vector<ChainDiagnostics> chains;
  std::vector<std::string> warnings;
  int n_chains = 0;

  int n_draws() const { return static_cast<int>(z.rows()); }
  int total_divergences() const {
    int n = 0;
    for (const auto& c : chains) n += c.divergences;
    return n;
  }
};

namespace nuts_detail {

struct PhasePoint {
  Vector z, p, grad;  // grad of log target at z
  double logp = 0.0;
  double H = 0.0;  // -logp + kinetic energy with this momentum
};

// One chain's working state: target, diagonal inverse metric, RNG.
class Chain {
 public:
  Chain(const TargetDensity& target, const SamplerConfig& cfg, int chain_id)
      : target_(target),
        cfg_(cfg),
        rng_(cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(chain_id + 1)),
        inv_metric_(Vector::Ones(target.dim())) {}

  std::mt19937_64& rng() { return rng_; }

  // Any failure to evaluate the target (domain error, overflow in a special
  // function, non-finite result) rejects the proposed point instead of
  // aborting the chain.
  bool eval(const Vector& z, double& logp, Vector& grad) {
    try {
      logp = target_.value_and_gradient(z, grad);
    } catch (const std::exception&) {
      return false;
    }
    return std::isfinite(logp) && grad.allFinite();
  }

  double kinetic(const Vector& p) const {
    return 0.5 * p.dot(inv_metric_.cwiseProduct(p));
  }

  Vector sample_momentum() {
    std::normal_distribution<double> n01;
    Vector p(inv_metric_.size());
    for (int i = 0; i < p.size(); ++i) p[i] = n01(rng_) / std::sqrt(inv_metric_[i]);
    return p;
  }

  // One leapfrog step; false when the gradient evaluation fails.
  bool leapfrog(PhasePoint& pt, double eps) {
    pt.p += 0.5 * eps * pt.grad;
    pt.z += eps * inv_metric_.cwiseProduct(pt.p);
    if (!eval(pt.z, pt.logp, pt.grad)) return false;
    pt.p += 0.5 * eps * pt.grad;
    pt.H = -pt.logp + kinetic(pt.p);
    return true;
  }

  // Heuristic initial step size: double/halve until the one-step acceptance
  // ratio crosses 1/2.
  double find_reasonable_step(const PhasePoint& origin) {
    double eps = 1.0;
    auto delta_H = [&](double e) {
      PhasePoint pt = origin;
      pt.p = sample_momentum_cached_;
      pt.H = -pt.logp + kinetic(pt.p);
      const double H0 = pt.H;
      if (!leapfrog(pt, e)) return -std::numeric_limits<double>::infinity();
      return H0 - pt.H;  // log acceptance ratio
    };
    sample_momentum_cached_ = sample_momentum();
    double dh = delta_H(eps);
    const bool grow = dh > std::log(0.5);
    for (int i = 0; i < 100; ++i) {
      if (grow ? !(dh > std::log(0.5)) : !(dh < std::log(0.5))) break;
      eps *= grow ? 2.0 : 0.5;
      if (eps > 1e7 || eps < 1e-10) break;
      dh = delta_H(eps);
    }
    return eps;
  }

  struct Tree {
    PhasePoint minus, plus;  // trajectory boundaries
    Vector rho;              // momentum sum over leaves
    PhasePoint proposal;
    double log_weight = -std::numeric_limits<double>::infinity();
    bool divergent = false;
    bool turning = false;
  };

  struct TransitionStats {
    double accept_sum = 0.0;
    int n_leaves = 0;
    bool divergent = false;
    int depth = 0;
    double energy_error = 0.0;  // H(selected) - H0
  };

  Vector p_sharp(const Vector& p) const { return inv_metric_.cwiseProduct(p); }

  static bool no_u_turn(const Vector& p_sharp_minus, const Vector& p_sharp_plus,
                        const Vector& rho) {
    return p_sharp_minus.dot(rho) > 0.0 && p_sharp_plus.dot(rho) > 0.0;
  }

  // Build a balanced subtree of 2^depth leaves in the given direction.
  Tree build_tree(int depth, const PhasePoint& from, double direction, double H0, double eps,
                  TransitionStats& stats) {
    if (depth == 0) {
      Tree leaf;
      PhasePoint pt = from;
      const bool ok = leapfrog(pt, direction * eps);
      stats.n_leaves += 1;
      if (!ok || pt.H - H0 > 1000.0) {
        leaf.divergent = true;
        stats.divergent = true;
        return leaf;
      }
      stats.accept_sum += std::min(1.0, std::exp(H0 - pt.H));
      leaf.minus = pt;
      leaf.plus = pt;
      leaf.rho = pt.p;
      leaf.proposal = pt;
      leaf.log_weight = H0 - pt.H;
      return leaf;
    }
    Tree inner = build_tree(depth - 1, from, direction, H0, eps, stats);
    if (inner.divergent || inner.turning) return inner;
    const PhasePoint& edge = direction > 0 ? inner.plus : inner.minus;
    Tree outer = build_tree(depth - 1, edge, direction, H0, eps, stats);
    if (outer.divergent || outer.turning) {
      inner.divergent = outer.divergent;
      inner.turning = outer.turning;
      return inner;
    }
    Tree merged;
    merged.minus = direction > 0 ? inner.minus : outer.minus;
    merged.plus = direction > 0 ? outer.plus : inner.plus;
    merged.rho = inner.rho + outer.rho;
    merged.log_weight = log_sum_exp(inner.log_weight, outer.log_weight);
    std::uniform_real_distribution<double> u01;
    merged.proposal =
        std::log(u01(rng_)) < outer.log_weight - merged.log_weight ? outer.proposal
                                                                   : inner.proposal;
    // U-turn checks on the merged subtree and across the two halves.
    const Vector ps_minus = p_sharp(merged.minus.p);
    const Vector ps_plus = p_sharp(merged.plus.p);
    bool ok = no_u_turn(ps_minus, ps_plus, merged.rho);
    const PhasePoint& inner_edge = direction > 0 ? inner.plus : inner.minus;
    const PhasePoint& outer_edge = direction > 0 ? outer.minus : outer.plus;
    ok = ok && no_u_turn(p_sharp(inner_edge.p), ps_plus, inner_edge.p + outer.rho);
    ok = ok && no_u_turn(ps_minus, p_sharp(outer_edge.p), inner.rho + outer_edge.p);
    merged.turning = !ok;
    return merged;
  }

  // One NUTS transition from z; returns the new position.
  Vector transition(const Vector& z, double eps, TransitionStats& stats) {
    PhasePoint origin;
    origin.z = z;
    if (!eval(origin.z, origin.logp, origin.grad))
      throw NumericalError("log target not finite at the current draw");
    origin.p = sample_momentum();
    origin.H = -origin.logp + kinetic(origin.p);
    const double H0 = origin.H;

    Tree tree;
    tree.minus = origin;
    tree.plus = origin;
    tree.rho = origin.p;
    tree.proposal = origin;
    tree.log_weight = 0.0;

    std::uniform_real_distribution<double> u01;
    for (int depth = 0; depth < cfg_.max_depth; ++depth) {
      const double direction = u01(rng_) < 0.5 ? 1.0 : -1.0;
      const PhasePoint& edge = direction > 0 ? tree.plus : tree.minus;
      Tree sub = build_tree(depth, edge, direction, H0, eps, stats);
      stats.depth = depth + 1;
      if (sub.divergent || sub.turning) {
        stats.divergent = stats.divergent || sub.divergent;
        break;
      }
      // Biased progressive sampling favors the fresh subtree.
      if (std::log(u01(rng_)) < sub.log_weight - tree.log_weight)
        tree.proposal = sub.proposal;
      const Tree& inner = tree;
      bool ok = true;
      {
        const PhasePoint& inner_edge = direction > 0 ? inner.plus : inner.minus;
        const PhasePoint& outer_edge = direction > 0 ? sub.minus : sub.plus;
        const Vector rho = inner.rho + sub.rho;
        const Vector ps_minus = p_sharp(direction > 0 ? inner.minus.p : sub.minus.p);
        const Vector ps_plus = p_sharp(direction > 0 ? sub.plus.p : inner.plus.p);
        ok = no_u_turn(ps_minus, ps_plus, rho);
        ok = ok && no_u_turn(p_sharp(inner_edge.p), ps_plus, inner_edge.p + sub.rho);
        ok = ok && no_u_turn(ps_minus, p_sharp(outer_edge.p), inner.rho + outer_edge.p);
      }
      tree.log_weight = log_sum_exp(tree.log_weight, sub.log_weight);
      tree.rho += sub.rho;
      if (direction > 0)
        tree.plus = sub.plus;
      else
        tree.minus = sub.minus;
      if (!ok) break;
      if (depth + 1 == cfg_.max_depth) ++max_depth_hits_;
    }
    stats.energy_error = tree.proposal.H - H0;
    return tree.proposal.z;
  }

  void set_inv_metric(Vector v) { inv_metric_ = std::move(v); }
  int max_depth_hits() const { return max_depth_hits_; }

 private:
  const TargetDensity& target_;
  const SamplerConfig& cfg_;
  std::mt19937_64 rng_;
  Vector inv_metric_;
  Vector sample_momentum_cached_;
  int max_depth_hits_ = 0;
};

// Nesterov dual averaging of log step size toward a target acceptance.
class DualAveraging {
 public:
  void restart(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = 0.0;
    h_bar_ = 0.0;
    m_ = 0;
  }
  double update(double accept, double target) {
    ++m_;
    const double eta = 1.0 / (m_ + t0_);
    h_bar_ = (1.0 - eta) * h_bar_ + eta * (target - accept);
    log_eps_ = mu_ - std::sqrt(static_cast<double>(m_)) / gamma_ * h_bar_;
    const double w = std::pow(static_cast<double>(m_), -kappa_);
    log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps_);
  }
  double final_eps() const { return std::exp(log_eps_bar_); }

 private:
  double mu_ = 0.0, log_eps_ = 0.0, log_eps_bar_ = 0.0, h_bar_ = 0.0;
  int m_ = 0;
  static constexpr double gamma_ = 0.05, t0_ = 10.0, kappa_ = 0.75;
};

// Running mean/variance accumulator.
struct Welford {
  Vector mean, m2;
  long n = 0;
  void reset(int dim) {
    mean = Vector::Zero(dim);
    m2 = Vector::Zero(dim);
    n = 0;
  }
  void add(const Vector& x) {
    ++n;
    const Vector delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta.cwiseProduct(x - mean);
  }
  // Sample variance shrunk toward a small constant, the standard metric
  // regularization.
  Vector regularized_variance() const {
    const double dn = static_cast<double>(n);
    Vector var = m2 / std::max(1.0, dn - 1.0);
    return (dn / (dn + 5.0)) * var + Vector::Constant(var.size(), 1e-3 * (5.0 / (dn + 5.0)));
  }
};

// Warmup schedule: a fast step-size interval, doubling covariance windows,
// then a terminal fast interval.
struct AdaptSchedule {
  int init_buffer = 75, term_buffer = 50, base_window = 25;
  int n_warmup = 0;

  explicit AdaptSchedule(int warmup) : n_warmup(warmup) {
    if (init_buffer + base_window + term_buffer > n_warmup) {
      init_buffer = static_cast<int>(0.15 * n_warmup);
      term_buffer = static_cast<int>(0.10 * n_warmup);
      base_window = n_warmup - init_buffer - term_buffer;
      if (base_window < 1) {
        init_buffer = std::max(0, n_warmup - 2);
        term_buffer = std::min(1, n_warmup - init_buffer);
        base_window = n_warmup - init_buffer - term_buffer;
      }
    }
  }
  bool in_window(int iter) const {
    return iter >= init_buffer && iter < n_warmup - term_buffer;
  }
  bool window_closes(int iter) const {
    if (!in_window(iter)) return false;
    int start = init_buffer, width = base_window;
    while (true) {
      int end = start + width;
      if (end + 2 * width > n_warmup - term_buffer) end = n_warmup - term_buffer;
      if (iter == end - 1) return true;
      if (iter < end) return false;
      start = end;
      width *= 2;
    }
  }
};

struct ChainOutput {
  Matrix draws;  // n_keep x D
  ChainDiagnostics diag;
};

inline ChainOutput run_chain(const TargetDensity& target, const SamplerConfig& cfg,
                             int chain_id) {
  Chain chain(target, cfg, chain_id);
  const int D = target.dim();
  const int n_warmup = cfg.n_warmup();
  const int n_keep = cfg.n_keep();

  // Initialization with retries until the target is finite.
  Vector z;
  {
    double logp;
    Vector grad(D);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      z = target.init_draw(chain.rng());
      ok = chain.eval(z, logp, grad);
    }
    if (!ok)
      throw NumericalError(
          "log target not finite at initialization after 100 attempts (chain " +
          std::to_string(chain_id) + ")");
  }

  PhasePoint pt;
  pt.z = z;
  {
    double logp;
    Vector grad(D);
    chain.eval(z, logp, grad);
    pt.logp = logp;
    pt.grad = grad;
  }
  double eps = chain.find_reasonable_step(pt);
  DualAveraging da;
  da.restart(eps);
  AdaptSchedule schedule(n_warmup);
  Welford welford;
  welford.reset(D);

  ChainOutput out;
  out.draws.resize(n_keep, D);
  out.diag.chain_id = chain_id;
  double accept_total = 0.0, energy_total = 0.0, energy_max = 0.0;

  for (int iter = 0; iter < cfg.n_iter; ++iter) {
    Chain::TransitionStats stats;
    z = chain.transition(z, eps, stats);
    const double accept = stats.n_leaves > 0 ? stats.accept_sum / stats.n_leaves : 0.0;
    if (iter < n_warmup) {
      eps = da.update(accept, cfg.target_accept);
      if (schedule.in_window(iter)) welford.add(z);
      if (schedule.window_closes(iter)) {
        chain.set_inv_metric(welford.regularized_variance());
        welford.reset(D);
        PhasePoint here;
        here.z = z;
        here.grad.resize(D);
        if (chain.eval(z, here.logp, here.grad)) {
          eps = chain.find_reasonable_step(here);
          da.restart(eps);
        }
      }
      if (iter == n_warmup - 1) eps = da.final_eps();
    } else {
      out.draws.row(iter - n_warmup) = z.transpose();
      if (stats.divergent) ++out.diag.divergences;
      accept_total += accept;
      energy_total += stats.energy_error;
      energy_max = std::max(energy_max, std::abs(stats.energy_error));
    }
  }
  out.diag.step_size = eps;
  out.diag.mean_accept = accept_total / n_keep;
  out.diag.mean_energy_error = energy_total / n_keep;
  out.diag.max_energy_error = energy_max;
  out.diag.max_depth_hits = chain.max_depth_hits();
  return out;
}

}  // namespace nuts_detail

/// Run multi-chain NUTS over an arbitrary target density. Chains use private
/// RNG streams derived from (seed, chain id) and merge in chain order, so the
/// result is reproducible for a fixed config and platform.
inline SampleResult sample_target(const TargetDensity& target, const SamplerConfig& cfg) {
  cfg.validate();
  std::vector<nuts_detail::ChainOutput> outputs(cfg.n_chains);
  if (cfg.parallel_chains && cfg.n_chains > 1) {
    std::vector<std::future<nuts_detail::ChainOutput>> futures;
    futures.reserve(cfg.n_chains);
    for (int c = 0; c < cfg.n_chains; ++c)
      futures.push_back(std::async(std::launch::async,
                                   [&target, &cfg, c] { return nuts_detail::run_chain(target, cfg, c); }));
    for (int c = 0; c < cfg.n_chains; ++c) outputs[c] = futures[c].get();
  } else {
    for (int c = 0; c < cfg.n_chains; ++c) outputs[c] = nuts_detail::run_chain(target, cfg, c);
  }

  const int n_keep = cfg.n_keep();
  SampleResult res;
  res.n_chains = cfg.n_chains;
  res.z.resize(static_cast<Eigen::Index>(cfg.n_chains) * n_keep, target.dim());
  res.chain_id.resize(res.z.rows());
  res.iteration.resize(res.z.rows());
  for (int c = 0; c < cfg.n_chains; ++c) {
    res.z.middleRows(static_cast<Eigen::Index>(c) * n_keep, n_keep) = outputs[c].draws;
    for (int i = 0; i < n_keep; ++i) {
      res.chain_id[c * n_keep + i] = c;
      res.iteration[c * n_keep + i] = i;
    }
    res.chains.push_back(outputs[c].diag);
    const double frac = static_cast<double>(outputs[c].diag.divergences) / n_keep;
    if (frac > 0.25)
      res.warnings.push_back("chain " + std::to_string(c) + ": " +
                             std::to_string(outputs[c].diag.divergences) + " of " +
                             std::to_string(n_keep) + " transitions diverged (" +
                             std::to_string(100.0 * frac) + "%)");
  }
  return res;
}

}  // namespace mortavg
