#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mortavg/io.hpp"
#include "mortavg/study.hpp"

using namespace mortavg;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_range(const std::string& s) {
  const size_t dash = s.find('-', 1);
  int lo = 0, hi = 0;
  if (dash == std::string::npos || !detail::parse_int(s.substr(0, dash), lo) ||
      !detail::parse_int(s.substr(dash + 1), hi) || lo > hi)
    throw UsageError("expected an inclusive range like 1959-1998, got '" + s + "'");
  return {lo, hi};
}

std::pair<int, double> parse_shock(const std::string& s) {
  const size_t colon = s.find(':');
  int year = 0;
  double change = 0.0;
  std::string tail = colon == std::string::npos ? "" : s.substr(colon + 1);
  if (!tail.empty() && tail.front() == '+') tail.erase(0, 1);
  if (colon == std::string::npos || !detail::parse_int(s.substr(0, colon), year) ||
      !detail::parse_double(tail, change))
    throw UsageError("expected a shock like 2016:+0.05, got '" + s + "'");
  return {year, change};
}

struct DataOpts {
  std::string data, deaths, exposures;
  std::string sex = "male";
  std::string ages, years;
};

void add_data_opts(CLI::App* sub, DataOpts& o) {
  sub->add_option("--data", o.data, "long CSV surface (age,year,deaths,exposures)");
  sub->add_option("--deaths", o.deaths, "HMD 1x1 deaths table (use with --exposures)");
  sub->add_option("--exposures", o.exposures, "HMD 1x1 exposures table");
  sub->add_option("--sex", o.sex, "HMD column: male, female or total")->capture_default_str();
  sub->add_option("--ages", o.ages, "inclusive age window, e.g. 50-90");
  sub->add_option("--years", o.years, "inclusive year window, e.g. 1959-2019");
}

MortalitySurface load_surface(const DataOpts& o) {
  if (!o.data.empty()) {
    MortalitySurface s = read_csv_surface(o.data);
    if (!o.ages.empty() || !o.years.empty()) {
      const auto ar = o.ages.empty() ? std::pair{s.ages.front(), s.ages.back()}
                                     : parse_range(o.ages);
      const auto yr = o.years.empty() ? std::pair{s.years.front(), s.years.back()}
                                      : parse_range(o.years);
      s = restrict_surface(s, ar.first, ar.second, yr.first, yr.second);
    }
    return s;
  }
  if (o.deaths.empty() || o.exposures.empty())
    throw UsageError("provide --data, or an HMD pair via --deaths and --exposures");
  if (o.ages.empty() || o.years.empty())
    throw UsageError("HMD input needs explicit --ages and --years windows");
  return parse_hmd(o.deaths, o.exposures, sex_from_string(o.sex), parse_range(o.ages),
                   parse_range(o.years));
}

std::filesystem::path out_path(const std::string& out_dir, const std::string& name) {
  std::filesystem::create_directories(out_dir);
  return std::filesystem::path(out_dir) / name;
}

// Seeds for the weights pipeline key on what is fitted, not on argument
// position, so duplicated model entries reproduce bit-identical fits.
std::uint64_t model_seed(std::uint64_t base, Family f, Likelihood l, int salt) {
  return base + 401ULL * (static_cast<int>(f) + 1) + 4099ULL * (static_cast<int>(l) + 1) +
         27644437ULL * salt;
}

nlohmann::json weight_map(const std::vector<std::string>& models,
                          const Eigen::Ref<const Vector>& w) {
  nlohmann::json j = nlohmann::json::object();
  for (size_t k = 0; k < models.size(); ++k) j[models[k]] = w[static_cast<Eigen::Index>(k)];
  return j;
}

int run_fit(const DataOpts& data_opts, const std::string& model, const std::string& likelihood,
            const SamplerConfig& cfg, const std::string& out_dir) {
  const MortalitySurface surface = load_surface(data_opts);
  const ModelSpec spec =
      ModelSpec::for_surface(family_from_string(model), likelihood_from_string(likelihood), surface);
  const PosteriorDraws draws = sample(spec, surface, cfg);

  const std::string stem = to_string(spec.family);
  const auto csv = out_path(out_dir, stem + ".draws.csv");
  const auto json = out_path(out_dir, stem + ".diagnostics.json");
  save_draws_csv(draws, csv.string());
  save_diagnostics_json(draws, json.string());

  double max_rhat = 0.0;
  if (draws.n_chains >= 2)
    for (const auto& [name, value] : rhat(draws)) max_rhat = std::max(max_rhat, value);
  long divergences = 0;
  for (const auto& c : draws.chain_diags) divergences += c.divergences;
  std::printf("fit %s-%s: %d chains x %d iterations, %d draws kept\n", stem.c_str(),
              to_string(spec.likelihood).c_str(), cfg.n_chains, cfg.n_iter, draws.n_draws());
  if (draws.n_chains >= 2) std::printf("max split R-hat %.4f, divergences %ld\n", max_rhat, divergences);
  for (const auto& w : draws.warnings) std::printf("warning: %s\n", w.c_str());
  std::printf("wrote %s\nwrote %s\n", csv.string().c_str(), json.string().c_str());
  return 0;
}

int run_weights(const DataOpts& data_opts, const std::vector<std::string>& models,
                const std::string& likelihood, const std::string& train_years,
                const std::string& validation_years, const SamplerConfig& cfg,
                const std::string& out_dir) {
  if (models.empty()) throw UsageError("weights needs at least one --model");
  const MortalitySurface surface = load_surface(data_opts);
  const auto tr = parse_range(train_years);
  const auto va = parse_range(validation_years);
  const YearRange train_range{tr.first, tr.second};
  const YearRange val_range{va.first, va.second};
  if (val_range.first != train_range.last + 1)
    throw DataError("validation years must immediately follow the training years");
  const MortalitySurface train = restrict_years(surface, train_range);
  const MortalitySurface validation = restrict_years(surface, val_range);
  const MortalitySurface bma_window =
      restrict_years(surface, YearRange{train_range.first, val_range.last});

  const Likelihood lik = likelihood_from_string(likelihood);
  const int K = static_cast<int>(models.size());
  std::vector<LppdMatrix> lppds;
  Vector log_ml(K);
  std::vector<std::string> labels;
  for (int k = 0; k < K; ++k) {
    const Family f = family_from_string(models[static_cast<size_t>(k)]);
    labels.push_back(to_string(f));
    SamplerConfig fit_cfg = cfg;

    fit_cfg.seed = model_seed(cfg.seed, f, lik, 1);
    const PosteriorDraws short_draws =
        sample(ModelSpec::for_surface(f, lik, train), train, fit_cfg);
    lppds.push_back(lppd(short_draws, validation, model_seed(cfg.seed, f, lik, 2)));

    fit_cfg.seed = model_seed(cfg.seed, f, lik, 3);
    const PosteriorDraws full_draws =
        sample(ModelSpec::for_surface(f, lik, bma_window), bma_window, fit_cfg);
    EvidenceOptions eopts;
    eopts.seed = model_seed(cfg.seed, f, lik, 4);
    log_ml[k] = estimate_log_ml(full_draws, bma_window, eopts).log_ml;

    // Keep the train+validation fits around so forecast can pick them up.
    save_draws_csv(full_draws, out_path(out_dir, labels.back() + ".draws.csv").string());
    save_diagnostics_json(full_draws,
                          out_path(out_dir, labels.back() + ".diagnostics.json").string());
  }

  const WeightVector stacking = stacking_weights(lppds);
  const WeightVector pbma = pseudo_bma_weights(lppds);
  const Vector bma = bma_weights(log_ml);

  nlohmann::json j;
  j["models"] = labels;
  j["likelihood"] = to_string(lik);
  j["methods"] = {{"stacking", weight_map(labels, stacking.weights)},
                  {"pseudo_bma", weight_map(labels, pbma.weights)},
                  {"bma", weight_map(labels, bma)}};
  Vector elpd(K);
  for (int k = 0; k < K; ++k) elpd[k] = lppds[static_cast<size_t>(k)].total();
  j["elpd"] = weight_map(labels, elpd);
  j["log_marginal_likelihood"] = weight_map(labels, log_ml);
  j["windows"] = {{"train", {train_range.first, train_range.last}},
                  {"validation", {val_range.first, val_range.last}},
                  {"bma_fit", {train_range.first, val_range.last}}};
  const auto path = out_path(out_dir, "weights.json");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';

  std::printf("%-12s", "model");
  for (const auto& l : labels) std::printf(" %10s", l.c_str());
  std::printf("\n");
  auto row = [&](const char* name, const Vector& w) {
    std::printf("%-12s", name);
    for (int k = 0; k < K; ++k) std::printf(" %10.4f", w[k]);
    std::printf("\n");
  };
  row("stacking", stacking.weights);
  row("pseudo_bma", pbma.weights);
  row("bma", bma);
  std::printf("wrote %s\n", path.string().c_str());
  return 0;
}

int run_forecast(const DataOpts& data_opts, const std::vector<std::string>& fits, int horizon,
                 bool simulate_deaths, const std::string& weights_file, const std::string& method,
                 const SamplerConfig& cfg, const std::string& out_dir) {
  if (fits.empty()) throw UsageError("forecast needs at least one --fit PREFIX");
  if (horizon < 1) throw UsageError("--horizon must be positive");
  const MortalitySurface surface = load_surface(data_opts);

  const Array2D last_exposures =
      surface.exposures.col(surface.n_years() - 1).replicate(1, horizon);
  std::printf("note: repeating year-%d exposures across the %d-year forecast horizon\n",
              surface.years.back(), horizon);

  std::vector<ForecastEnsemble> ensembles;
  std::vector<std::string> labels;
  for (size_t k = 0; k < fits.size(); ++k) {
    const PosteriorDraws draws =
        load_draws(fits[k] + ".draws.csv", fits[k] + ".diagnostics.json");
    std::vector<int> years;
    for (int h = 1; h <= horizon; ++h) years.push_back(draws.spec.years.back() + h);
    ensembles.push_back(forecast(draws, last_exposures, years, cfg.seed + 23ULL * (k + 1),
                                 simulate_deaths));
    labels.push_back(to_string(draws.spec.family));
  }

  ForecastEnsemble result;
  if (ensembles.size() == 1 && weights_file.empty()) {
    result = std::move(ensembles.front());
  } else {
    if (weights_file.empty())
      throw UsageError("combining several fits needs --weights and --method");
    std::ifstream win(weights_file);
    if (!win) throw DataError("cannot open weights file " + weights_file);
    nlohmann::json j;
    try {
      win >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("weights file " + weights_file + " is not valid JSON: " + e.what());
    }
    if (!j.at("methods").contains(method))
      throw DataError("weights file has no '" + method + "' method");
    const auto& map = j.at("methods").at(method);
    WeightVector w;
    w.models = labels;
    w.weights.resize(static_cast<Eigen::Index>(labels.size()));
    for (size_t k = 0; k < labels.size(); ++k) {
      if (!map.contains(labels[k]))
        throw DataError("weights file has no weight for model " + labels[k]);
      w.weights[static_cast<Eigen::Index>(k)] = map.at(labels[k]).get<double>();
    }
    std::mt19937_64 rng(cfg.seed + 2027ULL);
    result = combine(ensembles, w, rng);
  }

  const auto csv = out_path(out_dir, "forecast.csv");
  const auto meta = out_path(out_dir, "forecast.json");
  save_forecast_csv(result, csv.string());
  save_forecast_metadata(result, meta.string());
  if (result.has_deaths()) {
    const auto dcsv = out_path(out_dir, "forecast_deaths.csv");
    std::ofstream out(dcsv);
    if (!out) throw DataError("cannot write " + dcsv.string());
    out << "draw,age,year,deaths\n";
    char buf[32];
    const int H = result.horizon();
    for (int s = 0; s < result.n_draws(); ++s)
      for (int x = 0; x < result.spec.n_ages(); ++x)
        for (int h = 0; h < H; ++h) {
          std::snprintf(buf, sizeof buf, "%.17g", result.predictive_deaths(s, x * H + h));
          out << s << ',' << result.spec.ages[x] << ',' << result.forecast_years[h] << ',' << buf
              << '\n';
        }
    std::printf("wrote %s\n", dcsv.string().c_str());
  }
  std::printf("forecast years %d-%d, %d draws\n", result.forecast_years.front(),
              result.forecast_years.back(), result.n_draws());
  std::printf("wrote %s\nwrote %s\n", csv.string().c_str(), meta.string().c_str());
  return 0;
}

int run_score(const DataOpts& data_opts, const std::string& forecast_csv,
              const std::string& metadata, const std::string& out_dir) {
  std::string meta = metadata;
  if (meta.empty()) {
    std::filesystem::path p(forecast_csv);
    p.replace_extension(".json");
    meta = p.string();
  }
  const ForecastEnsemble ens = load_forecast_csv(forecast_csv, meta);
  MortalitySurface test = load_surface(data_opts);
  test = restrict_surface(test, ens.spec.ages.front(), ens.spec.ages.back(),
                          ens.forecast_years.front(), ens.forecast_years.back());
  const ScoreReport report = score(ens, test);

  const auto json_path = out_path(out_dir, "score.json");
  const auto csv_path = out_path(out_dir, "score.csv");
  save_score_json(report, json_path.string());
  save_score_csv(report, csv_path.string());
  std::printf("%-12s %12.6f\n", "log score", report.log_score);
  std::printf("%-12s %12.6f\n", "crps x1000", 1000.0 * report.crps);
  std::printf("%-12s %12.6f\n", "mae", report.mae);
  std::printf("wrote %s\nwrote %s\n", json_path.string().c_str(), csv_path.string().c_str());
  return 0;
}

int run_simulate(const DataOpts& data_opts, const std::vector<std::string>& models,
                 const std::vector<std::string>& generators,
                 const std::vector<std::string>& methods, const std::string& likelihood,
                 const std::string& train_years, const std::string& validation_years,
                 const std::string& test_years, int replicates, const SamplerConfig& cfg,
                 const std::string& out_dir) {
  if (models.empty()) throw UsageError("simulate needs at least one --model");
  const MortalitySurface data = load_surface(data_opts);

  ExperimentPlan plan;
  plan.models.clear();
  for (const auto& m : models) plan.models.push_back(family_from_string(m));
  plan.generators.clear();
  for (const auto& g : generators) plan.generators.push_back(family_from_string(g));
  if (!methods.empty()) plan.methods = methods;
  plan.likelihood = likelihood_from_string(likelihood);
  const auto tr = parse_range(train_years), va = parse_range(validation_years),
             te = parse_range(test_years);
  plan.split.train = {tr.first, tr.second};
  plan.split.validation = {va.first, va.second};
  plan.split.test = {te.first, te.second};
  plan.sampler = cfg;
  plan.replicates = replicates;
  plan.out_dir = out_dir;

  const StudyReport report = run_weighting_study(plan, data);
  save_study_report(report, out_dir);

  std::printf("study: %zu replicates, %d failed\n", report.replicates.size(), report.n_failed());
  if (report.n_failed() < static_cast<int>(report.replicates.size())) {
    std::printf("%-12s", "mean weight");
    for (const auto& m : report.models) std::printf(" %10s", m.c_str());
    std::printf("\n");
    for (const auto& method : report.methods) {
      std::printf("%-12s", method.c_str());
      for (const auto& m : report.models) std::printf(" %10.4f", report.mean_weight(method, m));
      std::printf("\n");
    }
    std::printf("mean test MAE: best single %.4f", report.mean_best_single_mae());
    for (const auto& method : report.methods)
      std::printf(", %s %.4f", method.c_str(), report.mean_method_mae(method));
    std::printf("\n");
    std::printf("sampler health: R-hat ok fraction %.3f, mean divergence fraction %.4f\n",
                report.rhat_ok_fraction(), report.mean_divergence_fraction());
  }
  for (const auto& r : report.replicates)
    if (r.failed) std::printf("replicate %d failed: %s\n", r.replicate, r.failure.c_str());
  std::printf("wrote %s\n", (std::filesystem::path(out_dir) / "study.json").string().c_str());
  return report.n_failed() > 0 ? 4 : 0;
}

int run_perturb(const DataOpts& data_opts, const std::vector<std::string>& shocks,
                std::string out_file, const std::string& out_dir) {
  if (shocks.empty()) throw UsageError("perturb needs at least one --shock YEAR:CHANGE");
  const MortalitySurface data = load_surface(data_opts);
  std::vector<std::pair<int, double>> parsed;
  for (const auto& s : shocks) parsed.push_back(parse_shock(s));
  const MortalitySurface out = perturb(data, parsed);
  if (out_file.empty()) out_file = out_path(out_dir, "perturbed.csv").string();
  write_csv_surface(out, out_file);
  for (const auto& [year, change] : parsed)
    std::printf("year %d: %+.1f%% deaths\n", year, 100.0 * change);
  std::printf("wrote %s\n", out_file.c_str());
  return 0;
}

// Config files mirror long flag names; values already present on the command
// line win, so config entries are appended only for flags the user omitted.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string config_file;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_file = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) config_file = args[i].substr(9);
  }
  if (config_file.empty()) return args;

  std::ifstream in(config_file);
  if (!in) throw UsageError("cannot open config file " + config_file);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + config_file + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object of flag values");

  auto has_flag = [&args](const std::string& flag) {
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
  };
  auto token_of = [](const nlohmann::json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    if (v.is_number_float()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
      return buf;
    }
    throw UsageError("unsupported value type in config file");
  };
  for (const auto& item : j.items()) {
    if (item.key() == "config") continue;
    const std::string flag = "--" + item.key();
    if (has_flag(flag)) continue;
    const nlohmann::json& v = item.value();
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
    } else if (v.is_array()) {
      for (const auto& elem : v) {
        args.push_back(flag);
        args.push_back(token_of(elem));
      }
    } else {
      args.push_back(flag);
      args.push_back(token_of(v));
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian mortality model averaging: fit, weight, forecast, score"};
  app.require_subcommand(1);

  SamplerConfig cfg;
  cfg.n_iter = 1000;
  std::string out_dir = ".";
  std::string config_file;
  app.add_option("--seed", cfg.seed, "base random seed")->capture_default_str();
  app.add_option("--chains", cfg.n_chains, "number of MCMC chains")->capture_default_str();
  app.add_option("--iter", cfg.n_iter, "iterations per chain (half warmup)")
      ->capture_default_str();
  app.add_option("--out-dir", out_dir, "directory for output files")->capture_default_str();
  app.add_option("--config", config_file, "JSON file of flag values (explicit flags win)");

  DataOpts fit_data, weights_data, forecast_data, score_data, simulate_data, perturb_data;

  auto* fit = app.add_subcommand("fit", "sample one model's posterior");
  fit->fallthrough();
  add_data_opts(fit, fit_data);
  std::string fit_model, fit_likelihood = "nb";
  fit->add_option("--model", fit_model, "LC, CBD, APC, RH or M6")->required();
  fit->add_option("--likelihood", fit_likelihood, "nb or poisson")->capture_default_str();

  auto* weights = app.add_subcommand("weights", "fit several models and weight them three ways");
  weights->fallthrough();
  add_data_opts(weights, weights_data);
  std::vector<std::string> weights_models;
  std::string weights_likelihood = "nb", weights_train, weights_validation;
  weights->add_option("--model", weights_models, "model to include (repeatable)");
  weights->add_option("--likelihood", weights_likelihood, "nb or poisson")->capture_default_str();
  weights->add_option("--train-years", weights_train, "training window, e.g. 1959-1988")
      ->required();
  weights->add_option("--validation-years", weights_validation,
                      "leave-future-out validation window")
      ->required();

  auto* forecast_cmd = app.add_subcommand("forecast", "project rates from saved fits");
  forecast_cmd->fallthrough();
  add_data_opts(forecast_cmd, forecast_data);
  std::vector<std::string> forecast_fits;
  std::string forecast_weights, forecast_method = "stacking";
  int forecast_horizon = 10;
  bool forecast_simulate = false;
  forecast_cmd->add_option("--fit", forecast_fits,
                           "fit prefix (expects PREFIX.draws.csv and PREFIX.diagnostics.json)");
  forecast_cmd->add_option("--horizon", forecast_horizon, "years to project")
      ->capture_default_str();
  forecast_cmd->add_flag("--simulate-deaths", forecast_simulate,
                         "also simulate death counts from the count law");
  forecast_cmd->add_option("--weights", forecast_weights, "weights JSON for combining fits");
  forecast_cmd->add_option("--method", forecast_method, "weight set to use when combining")
      ->capture_default_str();

  auto* score_cmd = app.add_subcommand("score", "score a forecast against observed data");
  score_cmd->fallthrough();
  add_data_opts(score_cmd, score_data);
  std::string score_forecast, score_metadata;
  score_cmd->add_option("--forecast", score_forecast, "forecast CSV to score")->required();
  score_cmd->add_option("--metadata", score_metadata,
                        "forecast metadata JSON (default: CSV path with .json)");

  auto* simulate = app.add_subcommand("simulate", "run a synthetic weighting study");
  simulate->fallthrough();
  add_data_opts(simulate, simulate_data);
  std::vector<std::string> sim_models, sim_generators, sim_methods;
  std::string sim_likelihood = "nb", sim_train, sim_validation, sim_test;
  int sim_replicates = 8;
  simulate->add_option("--model", sim_models, "competing model (repeatable)");
  simulate->add_option("--generator", sim_generators,
                       "data-generating model (none: reuse the data; two: mix the pair)");
  simulate->add_option("--method", sim_methods, "averaging method subset (default: all three)");
  simulate->add_option("--likelihood", sim_likelihood, "nb or poisson")->capture_default_str();
  simulate->add_option("--train-years", sim_train, "training window")->required();
  simulate->add_option("--validation-years", sim_validation, "validation window")->required();
  simulate->add_option("--test-years", sim_test, "test window")->required();
  simulate->add_option("--replicates", sim_replicates, "synthetic replicates")
      ->capture_default_str();

  auto* perturb_cmd = app.add_subcommand("perturb", "scale death counts of whole years");
  perturb_cmd->fallthrough();
  add_data_opts(perturb_cmd, perturb_data);
  std::vector<std::string> shocks;
  std::string perturb_out;
  perturb_cmd->add_option("--shock", shocks, "relative change, e.g. 2016:+0.05 (repeatable)");
  perturb_cmd->add_option("--out", perturb_out, "output CSV (default: OUT_DIR/perturbed.csv)");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    cfg.validate();
    if (app.got_subcommand(fit))
      return run_fit(fit_data, fit_model, fit_likelihood, cfg, out_dir);
    if (app.got_subcommand(weights))
      return run_weights(weights_data, weights_models, weights_likelihood, weights_train,
                         weights_validation, cfg, out_dir);
    if (app.got_subcommand(forecast_cmd))
      return run_forecast(forecast_data, forecast_fits, forecast_horizon, forecast_simulate,
                          forecast_weights, forecast_method, cfg, out_dir);
    if (app.got_subcommand(score_cmd))
      return run_score(score_data, score_forecast, score_metadata, out_dir);
    if (app.got_subcommand(simulate))
      return run_simulate(simulate_data, sim_models, sim_generators, sim_methods, sim_likelihood,
                          sim_train, sim_validation, sim_test, sim_replicates, cfg, out_dir);
    if (app.got_subcommand(perturb_cmd))
      return run_perturb(perturb_data, shocks, perturb_out, out_dir);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 2;
}
