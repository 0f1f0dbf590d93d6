#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "mortavg/io.hpp"
#include "mortavg/nuts.hpp"

namespace mortavg {

/// Names of all constrained scalar parameters, in the order the constrained
/// draw matrix stores them. Indexed by real age / calendar year / birth year.
inline std::vector<std::string> param_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  if (spec.has_alpha())
    for (int age : spec.ages) names.push_back("alpha[" + std::to_string(age) + "]");
  if (spec.has_beta())
    for (int age : spec.ages) names.push_back("beta[" + std::to_string(age) + "]");
  for (int i = 0; i < spec.n_periods(); ++i)
    for (int year : spec.years)
      names.push_back("kappa" + std::to_string(i + 1) + "[" + std::to_string(year) + "]");
  for (int c = 0; c < spec.n_cohorts(); ++c)
    names.push_back("gamma[" + std::to_string(spec.cohort_year(c)) + "]");
  if (spec.is_nb()) names.push_back("phi");
  for (int i = 0; i < spec.n_periods(); ++i) names.push_back("drift" + std::to_string(i + 1));
  for (int i = 0; i < spec.n_periods(); ++i) names.push_back("sigma" + std::to_string(i + 1));
  if (spec.n_periods() == 2) names.push_back("rho");
  if (spec.has_cohort()) {
    names.push_back("psi1");
    names.push_back("psi2");
    names.push_back("sigma_gamma");
  }
  return names;
}

inline Vector flatten_state(const ModelSpec& spec, const ParamState& s) {
  std::vector<double> out;
  auto push_vec = [&out](const Vector& v) {
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  };
  if (spec.has_alpha()) push_vec(s.alpha);
  if (spec.has_beta()) push_vec(s.beta);
  for (int i = 0; i < spec.n_periods(); ++i)
    for (int t = 0; t < spec.n_years(); ++t) out.push_back(s.kappa(i, t));
  push_vec(s.gamma);
  if (spec.is_nb()) out.push_back(s.phi);
  push_vec(s.drift);
  push_vec(s.sigma_kappa);
  if (spec.n_periods() == 2) out.push_back(s.rho);
  if (spec.has_cohort()) {
    out.push_back(s.psi1);
    out.push_back(s.psi2);
    out.push_back(s.sigma_gamma);
  }
  return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline ParamState unflatten_state(const ModelSpec& spec, const Eigen::Ref<const Vector>& row) {
  ParamState s;
  const int A = spec.n_ages(), N = spec.n_years(), p = spec.n_periods(), C = spec.n_cohorts();
  Eigen::Index k = 0;
  auto take = [&row, &k](int n) {
    Vector v = row.segment(k, n);
    k += n;
    return v;
  };
  if (spec.has_alpha()) s.alpha = take(A);
  if (spec.has_beta()) s.beta = take(A);
  s.kappa.resize(p, N);
  for (int i = 0; i < p; ++i)
    for (int t = 0; t < N; ++t) s.kappa(i, t) = row[k++];
  s.gamma = take(C);
  if (spec.is_nb()) s.phi = row[k++];
  s.drift = take(p);
  s.sigma_kappa = take(p);
  if (p == 2) s.rho = row[k++];
  if (spec.has_cohort()) {
    s.psi1 = row[k++];
    s.psi2 = row[k++];
    s.sigma_gamma = row[k++];
  }
  if (k != row.size()) throw DataError("constrained draw row has unexpected length");
  return s;
}

/// Post-warmup posterior sample of one fitted model: unconstrained rows
/// (chain-major) alongside the materialized constrained view.
struct PosteriorDraws {
  ModelSpec spec;
  SamplerConfig config;
  Matrix z;            // S x D unconstrained
  Matrix constrained;  // S x P
  std::vector<std::string> names;
  std::vector<int> chain_id;
  std::vector<int> iteration;
  std::vector<ChainDiagnostics> chain_diags;
  std::vector<std::string> warnings;
  int n_chains = 0;

  int n_draws() const { return static_cast<int>(z.rows()); }
  ParamState state_at(int s) const { return unflatten_state(spec, constrained.row(s)); }
};

/// Rank-normalized split-R-hat of one scalar sequence set. `column` holds the
/// chain-major draws of a single parameter; all chains have equal length.
inline double split_rhat(const Eigen::Ref<const Vector>& column, int n_chains) {
  if (n_chains < 2) throw DataError("R-hat needs at least 2 chains");
  const int per_chain = static_cast<int>(column.size()) / n_chains;
  const int half = per_chain / 2;
  if (half < 2) throw DataError("R-hat needs at least 4 draws per chain");
  const int m = 2 * n_chains;  // split sequences
  const int L = half;
  const int total = m * L;

  // Pool values; constants are converged by convention.
  std::vector<std::pair<double, int>> pool;  // (value, flat index)
  pool.reserve(total);
  for (int c = 0; c < n_chains; ++c)
    for (int s = 0; s < 2; ++s)
      for (int i = 0; i < L; ++i)
        pool.emplace_back(column[c * per_chain + s * half + i],
                          (2 * c + s) * L + i);
  double lo = pool.front().first, hi = pool.front().first;
  for (auto& [v, idx] : pool) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi - lo > 0.0)) return 1.0;

  // Average ranks with ties, then the normal-quantile transform.
  std::sort(pool.begin(), pool.end());
  Vector zval(total);
  const boost::math::normal_distribution<double> n01;
  int i = 0;
  while (i < total) {
    int j = i;
    while (j + 1 < total && pool[j + 1].first == pool[i].first) ++j;
    const double avg_rank = 0.5 * (i + j) + 1.0;  // 1-based average rank
    const double q = (avg_rank - 0.375) / (total + 0.25);
    const double zq = boost::math::quantile(n01, q);
    for (int t = i; t <= j; ++t) zval[pool[t].second] = zq;
    i = j + 1;
  }

  // Classic split-R-hat over the transformed sequences.
  Vector means(m), vars(m);
  for (int s = 0; s < m; ++s) {
    const auto seg = zval.segment(static_cast<Eigen::Index>(s) * L, L);
    means[s] = seg.mean();
    vars[s] = (seg.array() - means[s]).square().sum() / (L - 1);
  }
  const double W = vars.mean();
  const double grand = means.mean();
  const double B = L * (means.array() - grand).square().sum() / (m - 1);
  if (W < 1e-300 && B < 1e-300) return 1.0;
  const double var_plus = (L - 1.0) / L * W + B / L;
  return std::sqrt(var_plus / W);
}

/// R-hat per named constrained parameter.
inline std::vector<std::pair<std::string, double>> rhat(const PosteriorDraws& d) {
  if (d.n_chains < 2) throw DataError("R-hat needs at least 2 chains");
  std::vector<std::pair<std::string, double>> out;
  out.reserve(d.names.size());
  for (Eigen::Index j = 0; j < d.constrained.cols(); ++j)
    out.emplace_back(d.names[j], split_rhat(d.constrained.col(j), d.n_chains));
  return out;
}

/// Fit one mortality model: builds the log posterior, runs the chains, and
/// materializes the constrained view with parameter names.
inline PosteriorDraws sample(const ModelSpec& spec, const MortalitySurface& surface,
                             const SamplerConfig& cfg) {
  LogPosterior target(spec, surface);
  SampleResult res = sample_target(target, cfg);
  PosteriorDraws d;
  d.spec = spec;
  d.config = cfg;
  d.z = std::move(res.z);
  d.chain_id = std::move(res.chain_id);
  d.iteration = std::move(res.iteration);
  d.chain_diags = std::move(res.chains);
  d.warnings = std::move(res.warnings);
  d.n_chains = res.n_chains;
  d.names = param_names(spec);
  d.constrained.resize(d.z.rows(), static_cast<Eigen::Index>(d.names.size()));
  for (Eigen::Index s = 0; s < d.z.rows(); ++s)
    d.constrained.row(s) = flatten_state(spec, constrain(spec, d.z.row(s).transpose()).state);
  return d;
}

/// Columnar draw table: chain, iteration, then one column per parameter.
inline void save_draws_csv(const PosteriorDraws& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write draws CSV " + path);
  out << "chain,iteration";
  for (const auto& n : d.names) out << ',' << n;
  out << '\n';
  char buf[32];
  for (int s = 0; s < d.n_draws(); ++s) {
    out << d.chain_id[s] << ',' << d.iteration[s];
    for (Eigen::Index j = 0; j < d.constrained.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", d.constrained(s, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

inline nlohmann::json diagnostics_json(const PosteriorDraws& d) {
  nlohmann::json j;
  j["family"] = to_string(d.spec.family);
  j["likelihood"] = to_string(d.spec.likelihood);
  j["ages"] = {{"first", d.spec.ages.front()}, {"last", d.spec.ages.back()}};
  j["years"] = {{"first", d.spec.years.front()}, {"last", d.spec.years.back()}};
  j["sampler"] = {{"n_chains", d.config.n_chains},
                  {"n_iter", d.config.n_iter},
                  {"warmup_fraction", d.config.warmup_fraction},
                  {"target_accept", d.config.target_accept},
                  {"max_depth", d.config.max_depth},
                  {"seed", d.config.seed}};
  j["chains"] = nlohmann::json::array();
  for (const auto& c : d.chain_diags)
    j["chains"].push_back({{"chain", c.chain_id},
                           {"step_size", c.step_size},
                           {"divergences", c.divergences},
                           {"mean_accept", c.mean_accept},
                           {"mean_energy_error", c.mean_energy_error},
                           {"max_energy_error", c.max_energy_error},
                           {"max_depth_hits", c.max_depth_hits}});
  j["warnings"] = d.warnings;
  if (d.n_chains >= 2) {
    nlohmann::json r = nlohmann::json::object();
    double worst = 0.0;
    for (const auto& [name, value] : rhat(d)) {
      r[name] = value;
      worst = std::max(worst, value);
    }
    j["rhat"] = r;
    j["max_rhat"] = worst;
  }
  return j;
}

inline void save_diagnostics_json(const PosteriorDraws& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write diagnostics JSON " + path);
  out << diagnostics_json(d).dump(2) << '\n';
}

/// Load a draws CSV with its diagnostics sidecar; constrained rows are mapped
/// back through the bijection, so invalid draws are rejected on load.
inline PosteriorDraws load_draws(const std::string& csv_path, const std::string& json_path) {
  std::ifstream jin(json_path);
  if (!jin) throw DataError("cannot open diagnostics JSON " + json_path);
  nlohmann::json j;
  try {
    jin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed diagnostics JSON " + json_path + ": " + e.what());
  }
  PosteriorDraws d;
  try {
    d.spec.family = family_from_string(j.at("family").get<std::string>());
    d.spec.likelihood = likelihood_from_string(j.at("likelihood").get<std::string>());
    for (int a = j.at("ages").at("first").get<int>(); a <= j.at("ages").at("last").get<int>();
         ++a)
      d.spec.ages.push_back(a);
    for (int y = j.at("years").at("first").get<int>();
         y <= j.at("years").at("last").get<int>(); ++y)
      d.spec.years.push_back(y);
    const auto& sc = j.at("sampler");
    d.config.n_chains = sc.at("n_chains").get<int>();
    d.config.n_iter = sc.at("n_iter").get<int>();
    d.config.warmup_fraction = sc.at("warmup_fraction").get<double>();
    d.config.target_accept = sc.at("target_accept").get<double>();
    d.config.max_depth = sc.at("max_depth").get<int>();
    d.config.seed = sc.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("chains")) {
      ChainDiagnostics cd;
      cd.chain_id = c.at("chain").get<int>();
      cd.step_size = c.at("step_size").get<double>();
      cd.divergences = c.at("divergences").get<int>();
      cd.mean_accept = c.at("mean_accept").get<double>();
      cd.mean_energy_error = c.at("mean_energy_error").get<double>();
      cd.max_energy_error = c.at("max_energy_error").get<double>();
      cd.max_depth_hits = c.at("max_depth_hits").get<int>();
      d.chain_diags.push_back(cd);
    }
    if (j.contains("warnings"))
      for (const auto& w : j.at("warnings")) d.warnings.push_back(w.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("diagnostics JSON " + json_path + " missing fields: " + e.what());
  }
  d.n_chains = d.config.n_chains;
  d.names = param_names(d.spec);

  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open draws CSV " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty draws CSV " + csv_path);
  {
    std::string expect = "chain,iteration";
    for (const auto& n : d.names) expect += "," + n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expect)
      throw DataError("draws CSV header does not match the model in " + csv_path);
  }
  std::vector<std::vector<double>> rows;
  std::vector<int> chains, iters;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> vals;
    vals.reserve(d.names.size() + 2);
    size_t pos = 0;
    while (pos <= line.size()) {
      const size_t comma = line.find(',', pos);
      const std::string tok =
          line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      double v;
      if (!detail::parse_double(tok, v))
        throw DataError("malformed draws row in " + csv_path + " at line " +
                        std::to_string(lineno));
      vals.push_back(v);
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (vals.size() != d.names.size() + 2)
      throw DataError("draws row has wrong column count in " + csv_path + " at line " +
                      std::to_string(lineno));
    chains.push_back(static_cast<int>(vals[0]));
    iters.push_back(static_cast<int>(vals[1]));
    vals.erase(vals.begin(), vals.begin() + 2);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw DataError("no draws in " + csv_path);
  const Layout L = layout_of(d.spec);
  d.constrained.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(d.names.size()));
  d.z.resize(static_cast<Eigen::Index>(rows.size()), L.dim);
  for (size_t s = 0; s < rows.size(); ++s) {
    for (size_t p = 0; p < rows[s].size(); ++p)
      d.constrained(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(p)) = rows[s][p];
    d.z.row(static_cast<Eigen::Index>(s)) =
        unconstrain(d.spec, unflatten_state(d.spec, d.constrained.row(s))).transpose();
  }
  d.chain_id = std::move(chains);
  d.iteration = std::move(iters);
  return d;
}

}  // namespace mortavg
