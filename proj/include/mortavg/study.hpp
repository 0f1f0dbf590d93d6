#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "mortavg/averaging.hpp"
#include "mortavg/bridge.hpp"
#include "mortavg/scoring.hpp"
#include "mortavg/synthetic.hpp"

namespace mortavg {

/// One weighting experiment: which models compete, how replicates are
/// generated, how years are split, and which averaging methods run.
struct ExperimentPlan {
  std::vector<Family> models{Family::LC, Family::CBD, Family::APC};
  std::vector<Family> generators;  // empty: every replicate reuses the input data
  Likelihood likelihood = Likelihood::NegBinomial;
  SplitPlan split;
  SamplerConfig sampler;
  std::vector<std::string> methods{"stacking", "pseudo_bma", "bma"};
  int replicates = 8;
  std::string out_dir;

  void validate() const {
    if (replicates < 1) throw DataError("study needs at least one replicate");
    if (models.empty()) throw DataError("study needs at least one model");
    if (methods.empty()) throw DataError("study needs at least one averaging method");
    for (const auto& m : methods)
      if (m != "stacking" && m != "pseudo_bma" && m != "bma")
        throw DataError("unknown averaging method: " + m);
    if (split.validation.empty())
      throw DataError("study split needs validation years for the leave-future-out methods");
    if (split.test.empty()) throw DataError("study split needs test years to score against");
    if (generators.size() > 2)
      throw DataError("at most two generator models (pairs are mixed, more are not defined)");
    sampler.validate();
  }
};

struct FitHealth {
  std::string model;
  std::string window;
  double max_rhat = 0.0;
  double divergence_fraction = 0.0;
};

struct MethodScore {
  double log_score = 0.0;
  double crps = 0.0;
  double mae = 0.0;
};

struct ReplicateResult {
  int replicate = 0;
  bool failed = false;
  std::string failure;
  std::vector<std::string> models;
  Vector elpd;    // per model, validation window
  Vector log_ml;  // per model, fit window for evidence
  std::map<std::string, Vector> weights;        // method -> per-model weights
  std::vector<MethodScore> model_scores;        // parallel to models, test window
  std::map<std::string, MethodScore> method_scores;  // mixtures, test window
  std::vector<FitHealth> health;
};

struct StudyReport {
  std::vector<std::string> models;
  std::vector<std::string> methods;
  std::vector<ReplicateResult> replicates;

  int n_failed() const {
    int n = 0;
    for (const auto& r : replicates) n += r.failed ? 1 : 0;
    return n;
  }

  std::vector<const ReplicateResult*> completed() const {
    std::vector<const ReplicateResult*> out;
    for (const auto& r : replicates)
      if (!r.failed) out.push_back(&r);
    return out;
  }

  int model_index(const std::string& model) const {
    for (size_t k = 0; k < models.size(); ++k)
      if (models[k] == model) return static_cast<int>(k);
    throw DataError("model " + model + " is not part of this study");
  }

  double mean_weight(const std::string& method, const std::string& model) const {
    const int k = model_index(model);
    double acc = 0.0;
    int n = 0;
    for (const auto* r : completed()) {
      acc += r->weights.at(method)[k];
      ++n;
    }
    if (n == 0) throw DataError("no completed replicates to aggregate");
    return acc / n;
  }

  /// Completed replicates in which the model's test MAE is strictly the
  /// smallest among the single models.
  int min_mae_count(const std::string& model) const {
    const int k = model_index(model);
    int n = 0;
    for (const auto* r : completed()) {
      bool best = true;
      for (size_t j = 0; j < models.size(); ++j)
        if (static_cast<int>(j) != k && r->model_scores[j].mae <= r->model_scores[k].mae)
          best = false;
      n += best ? 1 : 0;
    }
    return n;
  }

  double mean_method_mae(const std::string& method) const {
    double acc = 0.0;
    int n = 0;
    for (const auto* r : completed()) {
      acc += r->method_scores.at(method).mae;
      ++n;
    }
    if (n == 0) throw DataError("no completed replicates to aggregate");
    return acc / n;
  }

  /// Mean over replicates of the best single-model test MAE.
  double mean_best_single_mae() const {
    double acc = 0.0;
    int n = 0;
    for (const auto* r : completed()) {
      double best = r->model_scores[0].mae;
      for (const auto& s : r->model_scores) best = std::min(best, s.mae);
      acc += best;
      ++n;
    }
    if (n == 0) throw DataError("no completed replicates to aggregate");
    return acc / n;
  }

  double rhat_ok_fraction(double threshold = 1.05) const {
    int ok = 0, total = 0;
    for (const auto* r : completed())
      for (const auto& h : r->health) {
        ++total;
        ok += h.max_rhat < threshold ? 1 : 0;
      }
    if (total == 0) throw DataError("no fits to summarize");
    return static_cast<double>(ok) / total;
  }

  double mean_divergence_fraction() const {
    double acc = 0.0;
    int total = 0;
    for (const auto* r : completed())
      for (const auto& h : r->health) {
        acc += h.divergence_fraction;
        ++total;
      }
    if (total == 0) throw DataError("no fits to summarize");
    return acc / total;
  }
};

namespace study_detail {

constexpr std::uint64_t kSeedStride = 0x9E3779B97F4A7C15ULL;

inline FitHealth fit_health(const PosteriorDraws& d, const char* window) {
  FitHealth h;
  h.model = to_string(d.spec.family);
  h.window = window;
  for (const auto& [name, value] : rhat(d)) h.max_rhat = std::max(h.max_rhat, value);
  long divergences = 0;
  for (const auto& c : d.chain_diags) divergences += c.divergences;
  h.divergence_fraction = static_cast<double>(divergences) /
                          (static_cast<double>(d.config.n_chains) * d.config.n_keep());
  return h;
}

inline MethodScore method_score(const ScoreReport& r) {
  return MethodScore{r.log_score, r.crps, r.mae};
}

inline void run_replicate(const ExperimentPlan& plan, const MortalitySurface& surface, int r,
                          ReplicateResult& res) {
  auto [train, validation, test] = split(surface, plan.split);
  const MortalitySurface fit_full =
      restrict_years(surface, {plan.split.train.first, plan.split.validation.last});
  const int K = static_cast<int>(plan.models.size());
  const std::uint64_t rep_seed = plan.sampler.seed + kSeedStride * (r + 1);

  res.elpd.resize(K);
  res.log_ml.resize(K);
  std::vector<LppdMatrix> lppds;
  std::vector<ForecastEnsemble> ensembles;
  for (int k = 0; k < K; ++k) {
    const Family f = plan.models[k];
    SamplerConfig cfg = plan.sampler;

    cfg.seed = rep_seed + 101 * (k + 1);
    const ModelSpec spec_short = ModelSpec::for_surface(f, plan.likelihood, train);
    const PosteriorDraws short_draws = sample(spec_short, train, cfg);
    res.health.push_back(fit_health(short_draws, "train"));
    lppds.push_back(lppd(short_draws, *validation, rep_seed + 7 * (k + 1)));
    res.elpd[k] = lppds.back().total();

    cfg.seed = rep_seed + 211 * (k + 1);
    const ModelSpec spec_full = ModelSpec::for_surface(f, plan.likelihood, fit_full);
    const PosteriorDraws full_draws = sample(spec_full, fit_full, cfg);
    res.health.push_back(fit_health(full_draws, "train+validation"));
    EvidenceOptions eopts;
    eopts.seed = rep_seed + 17 * (k + 1);
    res.log_ml[k] = estimate_log_ml(full_draws, fit_full, eopts).log_ml;

    ensembles.push_back(
        forecast(full_draws, test->exposures, test->years, rep_seed + 23 * (k + 1)));
    res.model_scores.push_back(method_score(score(ensembles.back(), *test)));
  }

  for (size_t mi = 0; mi < plan.methods.size(); ++mi) {
    const std::string& method = plan.methods[mi];
    WeightVector w;
    if (method == "stacking") {
      w = stacking_weights(lppds);
    } else if (method == "pseudo_bma") {
      w = pseudo_bma_weights(lppds);
    } else {
      w.models = res.models;
      w.weights = bma_weights(res.log_ml);
    }
    res.weights[method] = w.weights;
    std::mt19937_64 mix_rng(rep_seed + 31 * (mi + 1));
    const ForecastEnsemble mixture = combine(ensembles, w, mix_rng);
    res.method_scores[method] = method_score(score(mixture, *test));
  }
}

}  // namespace study_detail

/// Run the full weighting experiment: generate or reuse data per replicate,
/// fit every model on the leave-future-out and evidence windows, weight by
/// every requested method, forecast the test window and score everything.
/// Failures are recorded on the replicate and do not stop the study.
inline StudyReport run_weighting_study(const ExperimentPlan& plan, const MortalitySurface& data) {
  plan.validate();
  data.validate();
  plan.split.validate_against(data);

  StudyReport report;
  for (Family f : plan.models) report.models.push_back(to_string(f));
  report.methods = plan.methods;

  std::vector<PosteriorDraws> generator_draws;
  for (size_t g = 0; g < plan.generators.size(); ++g) {
    SamplerConfig cfg = plan.sampler;
    cfg.seed = plan.sampler.seed + 557 * (g + 1);
    const ModelSpec spec = ModelSpec::for_surface(plan.generators[g], plan.likelihood, data);
    generator_draws.push_back(sample(spec, data, cfg));
  }

  for (int r = 0; r < plan.replicates; ++r) {
    ReplicateResult res;
    res.replicate = r;
    res.models = report.models;
    try {
      MortalitySurface surface_r = data;
      if (!generator_draws.empty()) {
        std::mt19937_64 rng(plan.sampler.seed + study_detail::kSeedStride * (r + 1));
        surface_r = generate_synthetic(generator_draws[0], data.exposures, rng, r);
        for (size_t g = 1; g < generator_draws.size(); ++g)
          surface_r = mix_synthetic(
              surface_r, generate_synthetic(generator_draws[g], data.exposures, rng, r));
      }
      study_detail::run_replicate(plan, surface_r, r, res);
    } catch (const std::exception& e) {
      res.failed = true;
      res.failure = e.what();
    }
    report.replicates.push_back(std::move(res));
  }
  return report;
}

namespace study_detail {

inline std::string g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace study_detail

/// Long-format weight table: one row per replicate x method x model.
inline void save_study_weights_csv(const StudyReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "replicate,method,model,weight\n";
  for (const auto& r : rep.replicates) {
    if (r.failed) continue;
    for (const auto& method : rep.methods)
      for (size_t k = 0; k < rep.models.size(); ++k)
        out << r.replicate << ',' << method << ',' << rep.models[k] << ','
            << study_detail::g17(r.weights.at(method)[k]) << '\n';
  }
}

/// Long-format score table over single models and weighted mixtures.
inline void save_study_scores_csv(const StudyReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "replicate,name,kind,log_score,crps,mae\n";
  for (const auto& r : rep.replicates) {
    if (r.failed) continue;
    for (size_t k = 0; k < rep.models.size(); ++k)
      out << r.replicate << ',' << rep.models[k] << ",model,"
          << study_detail::g17(r.model_scores[k].log_score) << ','
          << study_detail::g17(r.model_scores[k].crps) << ','
          << study_detail::g17(r.model_scores[k].mae) << '\n';
    for (const auto& method : rep.methods) {
      const MethodScore& s = r.method_scores.at(method);
      out << r.replicate << ',' << method << ",mixture," << study_detail::g17(s.log_score) << ','
          << study_detail::g17(s.crps) << ',' << study_detail::g17(s.mae) << '\n';
    }
  }
}

/// Per-fit sampler health: largest split R-hat and divergence fraction.
inline void save_study_health_csv(const StudyReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "replicate,model,window,max_rhat,divergence_fraction\n";
  for (const auto& r : rep.replicates) {
    if (r.failed) continue;
    for (const auto& h : r.health)
      out << r.replicate << ',' << h.model << ',' << h.window << ','
          << study_detail::g17(h.max_rhat) << ',' << study_detail::g17(h.divergence_fraction)
          << '\n';
  }
}

/// Evidence inputs per replicate: validation elpd and log marginal likelihood.
inline void save_study_evidence_csv(const StudyReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "replicate,model,elpd,log_ml\n";
  for (const auto& r : rep.replicates) {
    if (r.failed) continue;
    for (size_t k = 0; k < rep.models.size(); ++k)
      out << r.replicate << ',' << rep.models[k] << ',' << study_detail::g17(r.elpd[k]) << ','
          << study_detail::g17(r.log_ml[k]) << '\n';
  }
}

inline nlohmann::json study_summary_json(const StudyReport& rep) {
  nlohmann::json j;
  j["models"] = rep.models;
  j["methods"] = rep.methods;
  j["replicates"] = rep.replicates.size();
  j["failed_replicates"] = rep.n_failed();
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& r : rep.replicates)
    if (r.failed) failures.push_back({{"replicate", r.replicate}, {"error", r.failure}});
  j["failures"] = failures;
  if (rep.n_failed() < static_cast<int>(rep.replicates.size())) {
    nlohmann::json mw;
    for (const auto& method : rep.methods) {
      nlohmann::json per_model;
      for (const auto& model : rep.models) per_model[model] = rep.mean_weight(method, model);
      mw[method] = per_model;
    }
    j["mean_weights"] = mw;
    nlohmann::json mae;
    for (const auto& method : rep.methods) mae[method] = rep.mean_method_mae(method);
    j["mean_mixture_mae"] = mae;
    j["mean_best_single_mae"] = rep.mean_best_single_mae();
    nlohmann::json counts;
    for (const auto& model : rep.models) counts[model] = rep.min_mae_count(model);
    j["min_mae_counts"] = counts;
    j["rhat_ok_fraction"] = rep.rhat_ok_fraction();
    j["mean_divergence_fraction"] = rep.mean_divergence_fraction();
  }
  return j;
}

/// Emit the whole report set into a directory: weights, scores, health,
/// evidence CSVs plus an aggregate JSON summary.
inline void save_study_report(const StudyReport& rep, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  save_study_weights_csv(rep, (base / "weights.csv").string());
  save_study_scores_csv(rep, (base / "scores.csv").string());
  save_study_health_csv(rep, (base / "health.csv").string());
  save_study_evidence_csv(rep, (base / "evidence.csv").string());
  std::ofstream out(base / "study.json");
  if (!out) throw DataError("cannot open " + (base / "study.json").string() + " for writing");
  out << study_summary_json(rep).dump(2) << '\n';
}

}  // namespace mortavg
