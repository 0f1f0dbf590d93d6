#pragma once

#include "mortavg/draws.hpp"

namespace mortavg {

/// Per-draw forecast of mortality rates over H years past the fitted window.
/// rates(s, x*H + h) is draw s at age index x, forecast step h.
struct ForecastEnsemble {
  ModelSpec spec;
  std::vector<int> forecast_years;
  Matrix rates;              // S x (A*H)
  Matrix predictive_deaths;  // S x (A*H) when simulated, else 0x0
  Array2D exposures_used;    // A x H
  std::vector<std::pair<std::string, double>> mixture_weights;  // set by combine()

  int n_draws() const { return static_cast<int>(rates.rows()); }
  int horizon() const { return static_cast<int>(forecast_years.size()); }
  double rate(int s, int x, int h) const { return rates(s, x * horizon() + h); }
  bool has_deaths() const { return predictive_deaths.size() > 0; }
};

namespace forecast_detail {

// One joint path of the latent indexes for a single posterior draw: the
// period effects over H future years and any new cohorts entering over those
// years (one per year, at the youngest age).
struct LatentPaths {
  Matrix kappa;        // p x H
  Vector gamma_future; // H values for cohorts beyond the fitted range
};

inline LatentPaths sample_paths(const ModelSpec& spec, const ParamState& s, int horizon,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  const int p = spec.n_periods();
  LatentPaths out;
  out.kappa.resize(p, horizon);
  Vector prev = s.kappa.col(spec.n_years() - 1);
  for (int h = 0; h < horizon; ++h) {
    if (p == 1) {
      prev[0] += s.drift[0] + s.sigma_kappa[0] * n01(rng);
    } else {
      const double z1 = n01(rng), z2 = n01(rng);
      prev[0] += s.drift[0] + s.sigma_kappa[0] * z1;
      prev[1] += s.drift[1] +
                 s.sigma_kappa[1] * (s.rho * z1 + std::sqrt(1.0 - s.rho * s.rho) * z2);
    }
    out.kappa.col(h) = prev;
  }
  if (spec.has_cohort()) {
    out.gamma_future.resize(horizon);
    const int C = spec.n_cohorts();
    double g1 = s.gamma[C - 1];  // boundary zero is a fitted value
    double g2 = s.gamma[C - 2];
    for (int h = 0; h < horizon; ++h) {
      const double g = s.psi1 * g1 + s.psi2 * g2 + s.sigma_gamma * n01(rng);
      out.gamma_future[h] = g;
      g2 = g1;
      g1 = g;
    }
  }
  return out;
}

// Linear predictor at age index x, forecast step h (year years.back()+h+1).
inline double eta_cell(const ModelSpec& spec, const ParamState& s, const LatentPaths& paths,
                       int x, int h) {
  const int A = spec.n_ages(), N = spec.n_years(), C = spec.n_cohorts();
  double eta = 0.0;
  if (spec.has_alpha()) eta += s.alpha[x];
  if (spec.has_beta())
    eta += s.beta[x] * paths.kappa(0, h);
  else if (spec.family == Family::APC)
    eta += paths.kappa(0, h);
  else
    eta += paths.kappa(0, h) + (spec.ages[x] - spec.mean_age()) * paths.kappa(1, h);
  if (spec.has_cohort()) {
    const int c = (N + h) - x + A - 1;
    eta += c < C ? s.gamma[c] : paths.gamma_future[c - C];
  }
  return eta;
}

}  // namespace forecast_detail

/// Future period effects, one p x H path per posterior draw: a random walk
/// with drift using each draw's own (c, sigma, rho).
inline std::vector<Matrix> project_kappa(const PosteriorDraws& draws, int horizon,
                                         std::mt19937_64& rng) {
  if (horizon < 1) throw DataError("projection horizon must be >= 1");
  std::vector<Matrix> out;
  out.reserve(draws.n_draws());
  for (int s = 0; s < draws.n_draws(); ++s)
    out.push_back(
        forecast_detail::sample_paths(draws.spec, draws.state_at(s), horizon, rng).kappa);
  return out;
}

/// Future cohort effects, one length-H row per posterior draw: the fitted
/// second order autoregression continued past the last fitted cohort.
inline Matrix project_gamma(const PosteriorDraws& draws, int horizon, std::mt19937_64& rng) {
  if (horizon < 1) throw DataError("projection horizon must be >= 1");
  if (!draws.spec.has_cohort())
    throw DataError("model " + to_string(draws.spec.family) + " has no cohort effect");
  std::normal_distribution<double> n01;
  Matrix out(draws.n_draws(), horizon);
  const int C = draws.spec.n_cohorts();
  for (int s = 0; s < draws.n_draws(); ++s) {
    const ParamState st = draws.state_at(s);
    double g1 = st.gamma[C - 1], g2 = st.gamma[C - 2];
    for (int h = 0; h < horizon; ++h) {
      const double g = st.psi1 * g1 + st.psi2 * g2 + st.sigma_gamma * n01(rng);
      out(s, h) = g;
      g2 = g1;
      g1 = g;
    }
  }
  return out;
}

/// Forecast rates (and optionally simulated death counts) over the years
/// following the fitted window, against supplied future exposures.
inline ForecastEnsemble forecast(const PosteriorDraws& draws, const Array2D& exposures,
                                 const std::vector<int>& forecast_years, std::uint64_t seed,
                                 bool simulate_deaths = false) {
  const ModelSpec& spec = draws.spec;
  const int A = spec.n_ages();
  const int H = static_cast<int>(forecast_years.size());
  if (H < 1) throw DataError("forecast needs at least one year");
  for (int h = 0; h < H; ++h)
    if (forecast_years[h] != spec.years.back() + 1 + h)
      throw DataError("forecast years must continue the fitted window without gaps");
  if (exposures.rows() != A || exposures.cols() != H)
    throw DataError("forecast exposures must be A x H");
  if (!(exposures > 0.0).all()) throw DataError("forecast exposures must be positive");

  ForecastEnsemble ens;
  ens.spec = spec;
  ens.forecast_years = forecast_years;
  ens.exposures_used = exposures;
  const int S = draws.n_draws();
  ens.rates.resize(S, A * H);
  if (simulate_deaths) ens.predictive_deaths.resize(S, A * H);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (int s = 0; s < S; ++s) {
    const ParamState st = draws.state_at(s);
    const auto paths = forecast_detail::sample_paths(spec, st, H, rng);
    for (int x = 0; x < A; ++x)
      for (int h = 0; h < H; ++h) {
        const double mu = std::exp(forecast_detail::eta_cell(spec, st, paths, x, h));
        ens.rates(s, x * H + h) = mu;
        if (simulate_deaths) {
          const double m = exposures(x, h) * mu;
          double mean = m;
          if (spec.is_nb()) {
            std::gamma_distribution<double> mix(st.phi, 1.0 / st.phi);
            mean = m * mix(rng);
          }
          std::poisson_distribution<long> pois(mean);
          ens.predictive_deaths(s, x * H + h) = static_cast<double>(pois(rng));
        }
      }
  }
  return ens;
}

/// Pointwise log posterior predictive density of observed deaths over a
/// validation window that directly continues the fitted years.
struct LppdMatrix {
  std::string model;
  std::vector<int> ages, years;
  Matrix cells;  // A x M

  double total() const { return cells.sum(); }
};

inline LppdMatrix lppd(const PosteriorDraws& draws, const MortalitySurface& validation,
                       std::uint64_t seed) {
  const ModelSpec& spec = draws.spec;
  validation.validate();
  if (validation.ages != spec.ages)
    throw DataError("validation ages do not match the fitted ages");
  if (validation.years.front() != spec.years.back() + 1)
    throw DataError("validation years must immediately follow the fitted years");
  const int A = spec.n_ages();
  const int M = validation.n_years();
  const int S = draws.n_draws();

  Matrix logp(A * M, S);
  std::mt19937_64 rng(seed);
  for (int s = 0; s < S; ++s) {
    const ParamState st = draws.state_at(s);
    const auto paths = forecast_detail::sample_paths(spec, st, M, rng);
    for (int x = 0; x < A; ++x)
      for (int j = 0; j < M; ++j) {
        const double log_m = std::log(validation.exposures(x, j)) +
                             forecast_detail::eta_cell(spec, st, paths, x, j);
        const double d = validation.deaths(x, j);
        logp(x * M + j, s) =
            spec.is_nb() ? nb_log_pmf(d, log_m, st.phi) : poisson_log_pmf(d, log_m);
      }
  }

  LppdMatrix out;
  out.model = to_string(spec.family) + "-" + to_string(spec.likelihood);
  out.ages = validation.ages;
  out.years = validation.years;
  out.cells.resize(A, M);
  const double log_s = std::log(static_cast<double>(S));
  for (int x = 0; x < A; ++x)
    for (int j = 0; j < M; ++j) {
      const double v = log_sum_exp(logp.row(x * M + j).transpose()) - log_s;
      if (!std::isfinite(v))
        throw NumericalError("log predictive density not finite at age " +
                             std::to_string(validation.ages[x]) + ", year " +
                             std::to_string(validation.years[j]));
      out.cells(x, j) = v;
    }
  return out;
}

/// Long-format persistence: one row per (draw, age, year) with the rate.
inline void save_forecast_csv(const ForecastEnsemble& ens, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write forecast CSV " + path);
  out << "draw,age,year,rate\n";
  char buf[32];
  const int H = ens.horizon();
  for (int s = 0; s < ens.n_draws(); ++s)
    for (int x = 0; x < ens.spec.n_ages(); ++x)
      for (int h = 0; h < H; ++h) {
        std::snprintf(buf, sizeof buf, "%.17g", ens.rates(s, x * H + h));
        out << s << ',' << ens.spec.ages[x] << ',' << ens.forecast_years[h] << ',' << buf
            << '\n';
      }
}

inline void save_forecast_metadata(const ForecastEnsemble& ens, const std::string& path) {
  nlohmann::json j;
  j["family"] =
      ens.mixture_weights.empty() ? std::string(to_string(ens.spec.family)) : std::string("mixture");
  j["likelihood"] = to_string(ens.spec.likelihood);
  j["n_draws"] = ens.n_draws();
  j["ages"] = {{"first", ens.spec.ages.front()}, {"last", ens.spec.ages.back()}};
  j["fitted_years"] = {{"first", ens.spec.years.front()}, {"last", ens.spec.years.back()}};
  j["forecast_years"] = {{"first", ens.forecast_years.front()},
                         {"last", ens.forecast_years.back()}};
  j["simulated_deaths"] = ens.has_deaths();
  if (!ens.mixture_weights.empty()) {
    nlohmann::json w = nlohmann::json::object();
    for (const auto& [model, weight] : ens.mixture_weights) w[model] = weight;
    j["mixture_weights"] = w;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write forecast metadata " + path);
  out << j.dump(2) << '\n';
}

/// Rebuild an ensemble from the CSV/metadata pair the savers wrote. Only the
/// rate draws travel through files; simulated deaths and the exposures used
/// at forecast time are not part of the interchange format.
inline ForecastEnsemble load_forecast_csv(const std::string& csv_path,
                                          const std::string& metadata_path) {
  std::ifstream jin(metadata_path);
  if (!jin) throw DataError("cannot open forecast metadata " + metadata_path);
  nlohmann::json j;
  try {
    jin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("forecast metadata " + metadata_path + " is not valid JSON: " + e.what());
  }

  ForecastEnsemble ens;
  try {
    const std::string family = j.at("family").get<std::string>();
    if (family == "mixture") {
      for (const auto& item : j.at("mixture_weights").items())
        ens.mixture_weights.emplace_back(item.key(), item.value().get<double>());
    } else {
      ens.spec.family = family_from_string(family);
    }
    ens.spec.likelihood = likelihood_from_string(j.at("likelihood").get<std::string>());
    const int a0 = j.at("ages").at("first").get<int>(), a1 = j.at("ages").at("last").get<int>();
    for (int x = a0; x <= a1; ++x) ens.spec.ages.push_back(x);
    const int f0 = j.at("fitted_years").at("first").get<int>(),
              f1 = j.at("fitted_years").at("last").get<int>();
    for (int t = f0; t <= f1; ++t) ens.spec.years.push_back(t);
    const int y0 = j.at("forecast_years").at("first").get<int>(),
              y1 = j.at("forecast_years").at("last").get<int>();
    for (int t = y0; t <= y1; ++t) ens.forecast_years.push_back(t);
    ens.rates.resize(j.at("n_draws").get<int>(), 0);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("forecast metadata " + metadata_path + " is incomplete: " + e.what());
  }
  const int S = static_cast<int>(ens.rates.rows());
  const int A = ens.spec.n_ages(), H = ens.horizon();
  if (S < 1 || A < 1 || H < 1) throw DataError("forecast metadata describes an empty ensemble");
  ens.rates.resize(S, A * H);
  ens.rates.setConstant(std::numeric_limits<double>::quiet_NaN());

  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open forecast CSV " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty forecast CSV " + csv_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "draw,age,year,rate")
    throw DataError("unexpected forecast CSV header in " + csv_path +
                    " (expected 'draw,age,year,rate')");
  long rows = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> f;
    size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
      const size_t comma = (i < 3) ? line.find(',', pos) : std::string::npos;
      if (i < 3 && comma == std::string::npos)
        throw DataError("malformed row in " + csv_path + " at line " + std::to_string(lineno));
      f[i] = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
    int s = 0, age = 0, year = 0;
    double rate = 0.0;
    if (!detail::parse_int(f[0], s) || !detail::parse_int(f[1], age) ||
        !detail::parse_int(f[2], year) || !detail::parse_double(f[3], rate))
      throw DataError("malformed row in " + csv_path + " at line " + std::to_string(lineno));
    if (s < 0 || s >= S) throw DataError("draw index out of range in " + csv_path);
    if (age < ens.spec.ages.front() || age > ens.spec.ages.back())
      throw DataError("age outside the metadata grid in " + csv_path);
    if (year < ens.forecast_years.front() || year > ens.forecast_years.back())
      throw DataError("year outside the metadata grid in " + csv_path);
    ens.rates(s, (age - ens.spec.ages.front()) * H + (year - ens.forecast_years.front())) = rate;
    ++rows;
  }
  if (rows != static_cast<long>(S) * A * H || !ens.rates.allFinite())
    throw DataError("forecast CSV " + csv_path + " does not cover the full draw grid");
  return ens;
}

}  // namespace mortavg
