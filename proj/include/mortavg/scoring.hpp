#pragma once

#include "mortavg/forecast.hpp"

namespace mortavg {

namespace scoring_detail {

inline void check_grids(const ForecastEnsemble& ens, const MortalitySurface& test) {
  test.validate();
  if (test.ages != ens.spec.ages) throw DataError("test ages do not match the forecast grid");
  if (test.years != ens.forecast_years)
    throw DataError("test years do not match the forecast years");
}

// Gaussian kernel density over one cell's rate draws, Silverman bandwidth
// floored at a sliver of the mean so near-ties stay evaluable.
inline double kde_log_density(const Eigen::Ref<const Vector>& draws, double y) {
  const Eigen::Index S = draws.size();
  if (draws.minCoeff() == draws.maxCoeff())
    throw NumericalError("all rate draws identical, density bandwidth is zero");
  const double mean = draws.mean();
  const double sd = std::sqrt((draws.array() - mean).square().sum() / (S - 1.0));
  const double h =
      std::max(sd * std::pow(4.0 / (3.0 * static_cast<double>(S)), 0.2), 1e-12 * mean);
  Vector terms(S);
  for (Eigen::Index i = 0; i < S; ++i) {
    const double u = (y - draws[i]) / h;
    terms[i] = -0.5 * u * u;
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(S) * h) - 0.5 * log_2pi;
}

// E|X - y| - 0.5 E|X - X'| over the empirical draw distribution. The pair
// term sums sorted gaps weighted by the ordered pairs that straddle them,
// which vanishes exactly for a point-mass ensemble.
inline double sample_crps(const Eigen::Ref<const Vector>& draws, double y) {
  const Eigen::Index S = draws.size();
  std::vector<double> x(draws.data(), draws.data() + S);
  std::sort(x.begin(), x.end());
  // A point mass scores |x - y| identically; skip the sums so the identity
  // holds bitwise at any ensemble size.
  if (x.front() == x.back()) return std::abs(x.front() - y);
  double e_xy = 0.0;
  for (Eigen::Index i = 0; i < S; ++i) e_xy += std::abs(x[i] - y);
  e_xy /= static_cast<double>(S);
  double pair_sum = 0.0;
  for (Eigen::Index k = 0; k + 1 < S; ++k)
    pair_sum += (x[k + 1] - x[k]) * static_cast<double>(k + 1) * static_cast<double>(S - 1 - k);
  const double e_xx = 2.0 * pair_sum / (static_cast<double>(S) * static_cast<double>(S));
  return e_xy - 0.5 * e_xx;
}

}  // namespace scoring_detail

/// Headline scores with the per-cell detail they average over. Cell tables are
/// A x H; every headline is the plain mean of its table.
struct ScoreReport {
  std::vector<int> ages, years;
  double log_score = 0.0;
  double crps = 0.0;
  double mae = 0.0;
  Vector mae_by_age;
  Matrix cell_neg_log_density;  // A x H
  Matrix cell_crps;             // A x H
  Matrix cell_abs_error;        // A x H
  Matrix observed_rate;         // A x H
  Matrix mean_rate;             // A x H
};

/// Negative mean log kernel density of the observed rates under the ensemble.
inline double log_score(const ForecastEnsemble& ens, const MortalitySurface& test) {
  scoring_detail::check_grids(ens, test);
  const int A = ens.spec.n_ages(), H = ens.horizon();
  double acc = 0.0;
  for (int x = 0; x < A; ++x) {
    double inner = 0.0;
    for (int h = 0; h < H; ++h) {
      const double y = test.deaths(x, h) / test.exposures(x, h);
      inner += scoring_detail::kde_log_density(ens.rates.col(x * H + h), y);
    }
    acc += inner / H;
  }
  return -acc / A;
}

/// Mean sample CRPS of the observed rates against the ensemble draws.
inline double crps(const ForecastEnsemble& ens, const MortalitySurface& test) {
  scoring_detail::check_grids(ens, test);
  const int A = ens.spec.n_ages(), H = ens.horizon();
  double acc = 0.0;
  for (int x = 0; x < A; ++x) {
    double inner = 0.0;
    for (int h = 0; h < H; ++h) {
      const double y = test.deaths(x, h) / test.exposures(x, h);
      inner += scoring_detail::sample_crps(ens.rates.col(x * H + h), y);
    }
    acc += inner / H;
  }
  return acc / A;
}

/// Mean absolute error of expected deaths under the posterior mean rate,
/// overall and per age.
inline std::pair<double, Vector> mae(const ForecastEnsemble& ens, const MortalitySurface& test) {
  scoring_detail::check_grids(ens, test);
  const int A = ens.spec.n_ages(), H = ens.horizon();
  Vector by_age = Vector::Zero(A);
  for (int x = 0; x < A; ++x) {
    for (int h = 0; h < H; ++h) {
      const double mu_hat = ens.rates.col(x * H + h).mean();
      by_age[x] += std::abs(test.deaths(x, h) - test.exposures(x, h) * mu_hat);
    }
    by_age[x] /= H;
  }
  return {by_age.mean(), by_age};
}

/// n-year survival probability from a given age under one year's rate column.
inline double survival_probability(const Eigen::Ref<const Vector>& rates,
                                   const std::vector<int>& ages, int from_age, int n_years) {
  if (rates.size() != static_cast<Eigen::Index>(ages.size()))
    throw DataError("rate column and age grid differ in length");
  const auto it = std::find(ages.begin(), ages.end(), from_age);
  if (it == ages.end()) throw DataError("starting age not on the age grid");
  const int start = static_cast<int>(it - ages.begin());
  if (n_years < 1 || start + n_years > static_cast<int>(ages.size()))
    throw DataError("survival horizon runs past the age grid");
  double acc = 0.0;
  for (int i = 0; i < n_years; ++i) acc += rates[start + i];
  return std::exp(-acc);
}

/// Expected years lived in the next `horizon` years: the sum of the k-year
/// survival probabilities for k = 1..horizon.
inline double truncated_life_expectancy(const Eigen::Ref<const Vector>& rates,
                                        const std::vector<int>& ages, int from_age = 50,
                                        int horizon = 40) {
  if (rates.size() != static_cast<Eigen::Index>(ages.size()))
    throw DataError("rate column and age grid differ in length");
  const auto it = std::find(ages.begin(), ages.end(), from_age);
  if (it == ages.end()) throw DataError("starting age not on the age grid");
  const int start = static_cast<int>(it - ages.begin());
  if (horizon < 1 || start + horizon > static_cast<int>(ages.size()))
    throw DataError("life expectancy horizon runs past the age grid");
  double acc = 0.0, cum = 0.0;
  for (int k = 1; k <= horizon; ++k) {
    cum += rates[start + k - 1];
    acc += std::exp(-cum);
  }
  return acc;
}

inline ScoreReport score(const ForecastEnsemble& ens, const MortalitySurface& test) {
  scoring_detail::check_grids(ens, test);
  const int A = ens.spec.n_ages(), H = ens.horizon();
  ScoreReport r;
  r.ages = test.ages;
  r.years = test.years;
  r.cell_neg_log_density.resize(A, H);
  r.cell_crps.resize(A, H);
  r.cell_abs_error.resize(A, H);
  r.observed_rate.resize(A, H);
  r.mean_rate.resize(A, H);
  for (int x = 0; x < A; ++x)
    for (int h = 0; h < H; ++h) {
      const auto col = ens.rates.col(x * H + h);
      const double y = test.deaths(x, h) / test.exposures(x, h);
      r.observed_rate(x, h) = y;
      r.mean_rate(x, h) = col.mean();
      r.cell_neg_log_density(x, h) = -scoring_detail::kde_log_density(col, y);
      r.cell_crps(x, h) = scoring_detail::sample_crps(col, y);
      r.cell_abs_error(x, h) =
          std::abs(test.deaths(x, h) - test.exposures(x, h) * r.mean_rate(x, h));
    }
  r.mae_by_age = r.cell_abs_error.rowwise().mean();
  r.log_score = r.cell_neg_log_density.rowwise().mean().mean();
  r.crps = r.cell_crps.rowwise().mean().mean();
  r.mae = r.mae_by_age.mean();
  return r;
}

inline nlohmann::json score_json(const ScoreReport& r) {
  nlohmann::json j;
  j["log_score"] = r.log_score;
  j["crps"] = r.crps;
  j["mae"] = r.mae;
  j["sign_convention"] = "log_score is the negative mean log density; lower is better for all";
  nlohmann::json by_age = nlohmann::json::object();
  for (size_t x = 0; x < r.ages.size(); ++x)
    by_age[std::to_string(r.ages[x])] = r.mae_by_age[static_cast<Eigen::Index>(x)];
  j["mae_by_age"] = by_age;
  return j;
}

inline void save_score_json(const ScoreReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write score JSON " + path);
  out << score_json(r).dump(2) << '\n';
}

inline void save_score_csv(const ScoreReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write score CSV " + path);
  out << "age,year,observed_rate,mean_rate,neg_log_density,crps,abs_error\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (size_t x = 0; x < r.ages.size(); ++x)
    for (size_t h = 0; h < r.years.size(); ++h) {
      out << r.ages[x] << ',' << r.years[h];
      const auto i = static_cast<Eigen::Index>(x), t = static_cast<Eigen::Index>(h);
      put(r.observed_rate(i, t));
      put(r.mean_rate(i, t));
      put(r.cell_neg_log_density(i, t));
      put(r.cell_crps(i, t));
      put(r.cell_abs_error(i, t));
      out << '\n';
    }
}

}  // namespace mortavg
