#pragma once

#include "mortavg/bridge.hpp"
#include "mortavg/forecast.hpp"

namespace mortavg {

struct WeightVector {
  std::vector<std::string> models;
  Vector weights;

  int size() const { return static_cast<int>(weights.size()); }
};

namespace averaging_detail {

// Per-cell predictive densities rescaled by the cell's best model, flattened
// to cells x K. Keeps every mixture sum well inside double range.
struct StackingProblem {
  Matrix q;       // cells x K, q = exp(lppd - row max)
  Vector cell_max;
  double shift_total = 0.0;
};

inline StackingProblem prepare(const std::vector<LppdMatrix>& lppds) {
  const int K = static_cast<int>(lppds.size());
  if (K < 1) throw DataError("stacking needs at least one model");
  for (int k = 1; k < K; ++k)
    if (lppds[k].ages != lppds[0].ages || lppds[k].years != lppds[0].years ||
        lppds[k].cells.rows() != lppds[0].cells.rows() ||
        lppds[k].cells.cols() != lppds[0].cells.cols())
      throw DataError("predictive density matrices cover different validation cells");
  const Eigen::Index n_cells = lppds[0].cells.size();
  StackingProblem prob;
  prob.q.resize(n_cells, K);
  prob.cell_max.resize(n_cells);
  for (Eigen::Index c = 0; c < n_cells; ++c) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const double v = lppds[k].cells(c);
      if (!std::isfinite(v)) throw DataError("non-finite log predictive density in stacking input");
      mx = std::max(mx, v);
    }
    prob.cell_max[c] = mx;
    for (int k = 0; k < K; ++k) prob.q(c, k) = std::exp(lppds[k].cells(c) - mx);
  }
  prob.shift_total = prob.cell_max.sum();
  return prob;
}

inline double shifted_objective(const StackingProblem& prob, const Vector& w) {
  return (prob.q * w).array().log().sum();
}

}  // namespace averaging_detail

/// Log score of the weighted predictive mixture over the validation cells:
///   sum_cells log sum_k w_k exp(lppd_k,cell)
inline double stacking_objective(const std::vector<LppdMatrix>& lppds,
                                 const Eigen::Ref<const Vector>& w) {
  auto prob = averaging_detail::prepare(lppds);
  return averaging_detail::shifted_objective(prob, w) + prob.shift_total;
}

/// Weights maximizing the mixture log score over the simplex, by exponentiated
/// gradient ascent with backtracking from the uniform vector. The objective is
/// concave, so the stationary point reached is the global optimum.
inline WeightVector stacking_weights(const std::vector<LppdMatrix>& lppds, double tol = 1e-10,
                                     int max_iter = 50000) {
  auto prob = averaging_detail::prepare(lppds);
  const int K = static_cast<int>(lppds.size());
  WeightVector out;
  for (const auto& m : lppds) out.models.push_back(m.model);
  Vector w = Vector::Constant(K, 1.0 / K);
  if (K == 1) {
    out.weights = w;
    return out;
  }
  double f = averaging_detail::shifted_objective(prob, w);
  for (int it = 0; it < max_iter; ++it) {
    const Vector mix = prob.q * w;
    Vector grad = Vector::Zero(K);
    for (Eigen::Index c = 0; c < prob.q.rows(); ++c)
      grad += prob.q.row(c).transpose() / mix[c];

    double step = 1.0;
    Vector w_new(K);
    double f_new = f;
    bool improved = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vector expo = step * (grad.array() - grad.maxCoeff()).matrix();
      for (int k = 0; k < K; ++k) w_new[k] = w[k] * std::exp(expo[k]);
      w_new /= w_new.sum();
      f_new = averaging_detail::shifted_objective(prob, w_new);
      if (f_new >= f) {
        improved = f_new > f;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
    const double rel = (f_new - f) / std::max(1.0, std::abs(f));
    w = w_new;
    f = f_new;
    if (rel < tol) break;
  }
  w /= w.sum();
  out.weights = w;
  return out;
}

/// Softmax of the summed validation log predictive densities, one per model.
inline WeightVector pseudo_bma_weights(const std::vector<LppdMatrix>& lppds) {
  const int K = static_cast<int>(lppds.size());
  if (K < 1) throw DataError("model weights need at least one model");
  Vector elpd(K);
  WeightVector out;
  for (int k = 0; k < K; ++k) {
    elpd[k] = lppds[k].total();
    if (!std::isfinite(elpd[k]))
      throw DataError("non-finite predictive density total for model " + lppds[k].model);
    out.models.push_back(lppds[k].model);
  }
  out.weights = bma_weights(elpd);
  return out;
}

/// Mixture of forecast ensembles: each output draw keeps its draw index and
/// takes the model assigned to that slot. Model slot counts are exact
/// largest-remainder shares of the weights; the rng only shuffles slots.
inline ForecastEnsemble combine(const std::vector<ForecastEnsemble>& ensembles,
                                const WeightVector& weights, std::mt19937_64& rng) {
  const int K = static_cast<int>(ensembles.size());
  if (K < 1) throw DataError("mixture needs at least one ensemble");
  if (weights.size() != K) throw DataError("weight vector length does not match ensembles");
  if (weights.weights.minCoeff() < -1e-12 || std::abs(weights.weights.sum() - 1.0) > 1e-8)
    throw DataError("mixture weights must form a simplex");
  const int S = ensembles[0].n_draws();
  for (const auto& e : ensembles) {
    if (e.n_draws() != S || e.forecast_years != ensembles[0].forecast_years ||
        e.spec.ages != ensembles[0].spec.ages)
      throw DataError("forecast ensembles cover different grids");
  }
  const bool with_deaths =
      std::all_of(ensembles.begin(), ensembles.end(),
                  [](const ForecastEnsemble& e) { return e.has_deaths(); });

  // Exact seat counts per model.
  std::vector<int> seats(K, 0);
  std::vector<std::pair<double, int>> remainder(K);
  int assigned = 0;
  for (int k = 0; k < K; ++k) {
    const double share = std::max(0.0, weights.weights[k]) * S;
    seats[k] = static_cast<int>(std::floor(share));
    remainder[k] = {share - seats[k], k};
    assigned += seats[k];
  }
  std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < S; ++i, ++assigned) ++seats[remainder[i % K].second];

  std::vector<int> slot;
  slot.reserve(S);
  for (int k = 0; k < K; ++k) slot.insert(slot.end(), seats[k], k);
  std::shuffle(slot.begin(), slot.end(), rng);

  ForecastEnsemble out;
  out.spec = ensembles[0].spec;
  out.forecast_years = ensembles[0].forecast_years;
  out.exposures_used = ensembles[0].exposures_used;
  out.rates.resize(S, ensembles[0].rates.cols());
  if (with_deaths) out.predictive_deaths.resize(S, ensembles[0].rates.cols());
  for (int s = 0; s < S; ++s) {
    out.rates.row(s) = ensembles[slot[s]].rates.row(s);
    if (with_deaths) out.predictive_deaths.row(s) = ensembles[slot[s]].predictive_deaths.row(s);
  }
  for (int k = 0; k < K; ++k)
    out.mixture_weights.emplace_back(weights.models.empty() ? "model" + std::to_string(k)
                                                            : weights.models[k],
                                     weights.weights[k]);
  return out;
}

}  // namespace mortavg
