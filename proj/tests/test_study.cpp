#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mortavg/study.hpp"

using namespace mortavg;

namespace {

ModelSpec lc_spec(int A, int N) {
  ModelSpec spec;
  spec.family = Family::LC;
  spec.likelihood = Likelihood::NegBinomial;
  for (int x = 0; x < A; ++x) spec.ages.push_back(50 + x);
  for (int t = 0; t < N; ++t) spec.years.push_back(1990 + t);
  return spec;
}

ParamState lc_state(const ModelSpec& spec) {
  ParamState s;
  const int A = spec.n_ages(), N = spec.n_years();
  s.alpha.resize(A);
  for (int x = 0; x < A; ++x) s.alpha[x] = -4.2 + 0.06 * x;
  s.beta = Vector::Constant(A, 1.0 / A);
  s.kappa = Matrix::Zero(1, N);
  for (int t = 0; t < N; ++t) s.kappa(0, t) = -0.12 * t;
  s.phi = 40.0;
  s.drift = Vector::Constant(1, -0.12);
  s.sigma_kappa = Vector::Constant(1, 0.05);
  return s;
}

PosteriorDraws draws_from_states(const ModelSpec& spec, const std::vector<ParamState>& states) {
  PosteriorDraws d;
  d.spec = spec;
  d.names = param_names(spec);
  d.n_chains = 1;
  d.z = Matrix::Zero(static_cast<Eigen::Index>(states.size()), 1);
  d.constrained.resize(static_cast<Eigen::Index>(states.size()),
                       static_cast<Eigen::Index>(d.names.size()));
  for (size_t s = 0; s < states.size(); ++s)
    d.constrained.row(static_cast<Eigen::Index>(s)) = flatten_state(spec, states[s]).transpose();
  for (size_t s = 0; s < states.size(); ++s) {
    d.chain_id.push_back(0);
    d.iteration.push_back(static_cast<int>(s));
  }
  return d;
}

MortalitySurface lc_data(int A, int N, unsigned long long seed, double exposure = 30000.0) {
  const auto spec = lc_spec(A, N);
  const auto d = draws_from_states(spec, {lc_state(spec)});
  std::mt19937_64 rng(seed);
  return generate_synthetic(d, Array2D::Constant(A, N, exposure), rng, 0);
}

}  // namespace

TEST_CASE("synthetic surfaces from a posterior draw", "[synthetic]") {
  const auto spec = lc_spec(4, 6);
  const Array2D e = Array2D::Constant(4, 6, 2000.0);

  SECTION("zero rates give zero deaths") {
    auto st = lc_state(spec);
    st.alpha.setConstant(-800.0);
    const auto d = draws_from_states(spec, {st});
    std::mt19937_64 rng(1);
    const auto s = generate_synthetic(d, e, rng, 0);
    CHECK((s.deaths == 0.0).all());
    CHECK((s.exposures == e).all());
    CHECK(s.ages == spec.ages);
    CHECK(s.years == spec.years);
  }
  SECTION("same draw and seed reproduce the surface") {
    const auto d = draws_from_states(spec, {lc_state(spec)});
    std::mt19937_64 r1(9), r2(9), r3(10);
    const auto a = generate_synthetic(d, e, r1, 0);
    const auto b = generate_synthetic(d, e, r2, 0);
    const auto c = generate_synthetic(d, e, r3, 0);
    CHECK((a.deaths == b.deaths).all());
    CHECK((a.deaths != c.deaths).any());
  }
  SECTION("replicates walk the draw pool round robin") {
    std::vector<ParamState> states;
    for (int i = 0; i < 10; ++i) {
      auto st = lc_state(spec);
      st.alpha.array() += 0.2 * i;
      states.push_back(st);
    }
    const auto d = draws_from_states(spec, states);
    std::mt19937_64 r1(5), r2(5);
    const auto a = generate_synthetic(d, e, r1, 3);
    const auto b = generate_synthetic(d, e, r2, 13);
    CHECK((a.deaths == b.deaths).all());
  }
  SECTION("cell means track the count law") {
    const auto small = lc_spec(2, 2);
    auto st = lc_state(small);
    st.phi = 10.0;
    const auto d = draws_from_states(small, {st});
    const Array2D exp_small = Array2D::Constant(2, 2, 1000.0);
    const Array2D m = exp_small * predictor(small, st).exp();
    std::mt19937_64 rng(7);
    Array2D acc = Array2D::Zero(2, 2);
    const int n = 20000;
    for (int i = 0; i < n; ++i) acc += generate_synthetic(d, exp_small, rng, 0).deaths;
    acc /= n;
    for (int x = 0; x < 2; ++x)
      for (int t = 0; t < 2; ++t) {
        const double se = std::sqrt(m(x, t) * (1.0 + m(x, t) / st.phi) / n);
        CHECK(std::abs(acc(x, t) - m(x, t)) < 5.0 * se);
      }
  }
  SECTION("exposure grid must match the fit") {
    const auto d = draws_from_states(spec, {lc_state(spec)});
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(generate_synthetic(d, Array2D::Constant(4, 5, 2000.0), rng, 0), DataError);
    CHECK_THROWS_AS(generate_synthetic(d, e, rng, -1), DataError);
  }
}

TEST_CASE("mixing synthetic pairs", "[synthetic]") {
  auto a = lc_data(3, 5, 21);
  SECTION("averaging with itself is the identity") {
    const auto m = mix_synthetic(a, a);
    CHECK((m.deaths == a.deaths).all());
    CHECK((m.exposures == a.exposures).all());
  }
  SECTION("cell averages") {
    auto b = a;
    a.deaths.setConstant(100.0);
    b.deaths.setConstant(200.0);
    const auto m = mix_synthetic(a, b);
    CHECK((m.deaths == 150.0).all());
  }
  SECTION("grids must agree") {
    const auto b = lc_data(3, 4, 21);
    CHECK_THROWS_AS(mix_synthetic(a, b), DataError);
    auto c = a;
    c.exposures(0, 0) += 1.0;
    CHECK_THROWS_AS(mix_synthetic(a, c), DataError);
  }
}

TEST_CASE("experiment plans validate", "[study]") {
  ExperimentPlan plan;
  plan.split.train = {1990, 1997};
  plan.split.validation = {1998, 2001};
  plan.split.test = {2002, 2005};
  plan.sampler.n_chains = 2;
  plan.sampler.n_iter = 100;
  CHECK_NOTHROW(plan.validate());

  auto bad = plan;
  bad.replicates = 0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.models.clear();
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.methods.clear();
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.methods = {"stacking", "median"};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.split.validation = {};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.split.test = {};
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = plan;
  bad.generators = {Family::LC, Family::CBD, Family::RH};
  CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("single-model study is trivial and deterministic", "[study]") {
  const auto data = lc_data(4, 12, 31);
  ExperimentPlan plan;
  plan.models = {Family::LC};
  plan.split.train = {1990, 1995};
  plan.split.validation = {1996, 1998};
  plan.split.test = {1999, 2001};
  plan.sampler.n_chains = 2;
  plan.sampler.n_iter = 160;
  plan.sampler.seed = 77;
  plan.replicates = 1;

  const auto rep = run_weighting_study(plan, data);
  REQUIRE(rep.n_failed() == 0);
  REQUIRE(rep.replicates.size() == 1);
  const auto& r = rep.replicates[0];
  for (const auto& method : rep.methods) {
    REQUIRE(r.weights.at(method).size() == 1);
    CHECK(r.weights.at(method)[0] == 1.0);
    CHECK(r.method_scores.at(method).mae == r.model_scores[0].mae);
    CHECK(r.method_scores.at(method).crps == r.model_scores[0].crps);
    CHECK(r.method_scores.at(method).log_score == r.model_scores[0].log_score);
  }
  CHECK(r.health.size() == 2);
  CHECK(rep.min_mae_count("LC") == 1);

  const auto again = run_weighting_study(plan, data);
  CHECK(again.replicates[0].log_ml == r.log_ml);
  CHECK(again.replicates[0].elpd == r.elpd);
  CHECK(again.replicates[0].model_scores[0].mae == r.model_scores[0].mae);
}

TEST_CASE("two-model study bookkeeping", "[study][slow]") {
  const auto data = lc_data(5, 16, 41);
  ExperimentPlan plan;
  plan.models = {Family::LC, Family::CBD};
  plan.generators = {Family::LC};
  plan.split.train = {1990, 1997};
  plan.split.validation = {1998, 2001};
  plan.split.test = {2002, 2005};
  plan.sampler.n_chains = 2;
  plan.sampler.n_iter = 240;
  plan.sampler.seed = 99;
  plan.replicates = 2;

  const auto rep = run_weighting_study(plan, data);
  REQUIRE(rep.n_failed() == 0);
  REQUIRE(rep.replicates.size() == 2);
  CHECK(rep.models == std::vector<std::string>{"LC", "CBD"});

  for (const auto& r : rep.replicates) {
    for (const auto& method : rep.methods) {
      const Vector& w = r.weights.at(method);
      REQUIRE(w.size() == 2);
      CHECK(w.minCoeff() >= 0.0);
      CHECK(w.sum() == Catch::Approx(1.0).margin(1e-9));
    }
    CHECK(r.elpd.allFinite());
    CHECK(r.log_ml.allFinite());
    CHECK(r.health.size() == 4);
    for (const auto& h : r.health) {
      CHECK(h.max_rhat > 0.9);
      CHECK(h.divergence_fraction >= 0.0);
    }
  }

  SECTION("aggregates reproduce from per-replicate rows") {
    for (const auto& method : rep.methods)
      for (size_t k = 0; k < rep.models.size(); ++k) {
        const double want = 0.5 * (rep.replicates[0].weights.at(method)[k] +
                                   rep.replicates[1].weights.at(method)[k]);
        CHECK(rep.mean_weight(method, rep.models[k]) == Catch::Approx(want).margin(1e-15));
      }
    const double want_mae = 0.5 * (rep.replicates[0].method_scores.at("stacking").mae +
                                   rep.replicates[1].method_scores.at("stacking").mae);
    CHECK(rep.mean_method_mae("stacking") == Catch::Approx(want_mae).margin(1e-12));
    CHECK(rep.min_mae_count("LC") + rep.min_mae_count("CBD") <= 2);
    CHECK(rep.rhat_ok_fraction() >= 0.0);
    CHECK(rep.mean_divergence_fraction() >= 0.0);
  }

  SECTION("report files land in the output directory") {
    testutil::TempDir dir("study");
    save_study_report(rep, dir.path.string());
    for (const char* name : {"weights.csv", "scores.csv", "health.csv", "evidence.csv"})
      CHECK(std::filesystem::exists(std::filesystem::path(dir.path.string()) / name));
    std::ifstream in(std::filesystem::path(dir.path.string()) / "study.json");
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    CHECK(j.at("failed_replicates").get<int>() == 0);
    CHECK(j.at("mean_weights").at("stacking").size() == 2);
    CHECK(j.at("rhat_ok_fraction").is_number());
  }
}

TEST_CASE("replicate failures are tallied, not fatal", "[study]") {
  const auto data = lc_data(5, 14, 51);
  ExperimentPlan plan;
  plan.models = {Family::RH};
  plan.split.train = {1990, 1997};
  plan.split.validation = {1998, 2000};
  plan.split.test = {2001, 2003};
  plan.sampler.n_chains = 2;
  plan.sampler.n_iter = 80;  // too few kept draws for the evidence stage
  plan.sampler.seed = 5;
  plan.replicates = 2;

  const auto rep = run_weighting_study(plan, data);
  CHECK(rep.n_failed() == 2);
  REQUIRE(rep.replicates.size() == 2);
  for (const auto& r : rep.replicates) {
    CHECK(r.failed);
    CHECK(!r.failure.empty());
  }
  CHECK_THROWS_AS(rep.mean_weight("bma", "RH"), DataError);

  testutil::TempDir dir("study-fail");
  save_study_report(rep, dir.path.string());
  std::ifstream in(std::filesystem::path(dir.path.string()) / "study.json");
  nlohmann::json j;
  in >> j;
  CHECK(j.at("failed_replicates").get<int>() == 2);
  CHECK(j.at("failures").size() == 2);
}
