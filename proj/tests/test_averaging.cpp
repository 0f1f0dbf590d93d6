#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mortavg/averaging.hpp"

using namespace mortavg;

namespace {

LppdMatrix make_lppd(const std::string& model, const Matrix& cells) {
  LppdMatrix m;
  m.model = model;
  m.cells = cells;
  for (int x = 0; x < cells.rows(); ++x) m.ages.push_back(60 + x);
  for (int t = 0; t < cells.cols(); ++t) m.years.push_back(2000 + t);
  return m;
}

std::vector<LppdMatrix> random_instance(int K, int A, int M, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  std::vector<LppdMatrix> out;
  for (int k = 0; k < K; ++k) {
    Matrix cells(A, M);
    for (int x = 0; x < A; ++x)
      for (int t = 0; t < M; ++t) cells(x, t) = -3.0 + 1.5 * n01(rng);
    out.push_back(make_lppd("m" + std::to_string(k), cells));
  }
  return out;
}

// Exhaustive simplex scan at a fixed step; the solver must match or beat it.
double grid_best_objective(const std::vector<LppdMatrix>& lppds, double step) {
  const int K = static_cast<int>(lppds.size());
  const int n = static_cast<int>(std::lround(1.0 / step));
  double best = -std::numeric_limits<double>::infinity();
  if (K == 2) {
    Vector w(2);
    for (int i = 0; i <= n; ++i) {
      w[0] = static_cast<double>(i) / n;
      w[1] = 1.0 - w[0];
      best = std::max(best, stacking_objective(lppds, w));
    }
  } else if (K == 3) {
    Vector w(3);
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j <= n - i; ++j) {
        w[0] = static_cast<double>(i) / n;
        w[1] = static_cast<double>(j) / n;
        w[2] = 1.0 - w[0] - w[1];
        best = std::max(best, stacking_objective(lppds, w));
      }
  }
  return best;
}

ForecastEnsemble constant_ensemble(const ModelSpec& spec, int S, double level, double slope) {
  ForecastEnsemble e;
  e.spec = spec;
  e.forecast_years = {spec.years.back() + 1, spec.years.back() + 2};
  const int A = spec.n_ages(), H = 2;
  e.rates.resize(S, A * H);
  for (int s = 0; s < S; ++s)
    for (int c = 0; c < A * H; ++c) e.rates(s, c) = level + slope * s + 0.001 * c;
  e.exposures_used = Array2D::Constant(A, H, 100.0);
  return e;
}

}  // namespace

TEST_CASE("stacking weights", "[averaging]") {
  ModelSpec spec;
  spec.ages = {60, 61};
  spec.years = {2000, 2001};

  SECTION("one model gets everything") {
    Matrix cells = Matrix::Constant(2, 2, -3.0);
    auto w = stacking_weights({make_lppd("only", cells)});
    REQUIRE(w.size() == 1);
    CHECK(w.weights[0] == 1.0);
  }
  SECTION("a strictly dominant model takes the full weight") {
    Matrix good = Matrix::Constant(3, 4, -2.0);
    Matrix bad = Matrix::Constant(3, 4, -6.0);
    auto w = stacking_weights({make_lppd("good", good), make_lppd("bad", bad)});
    CHECK(w.weights[0] == Catch::Approx(1.0).margin(1e-6));
    CHECK(w.weights[1] == Catch::Approx(0.0).margin(1e-6));
  }
  SECTION("identical models stay uniform") {
    Matrix cells(2, 3);
    cells << -1.0, -2.0, -3.0, -2.5, -1.5, -0.5;
    auto w = stacking_weights({make_lppd("a", cells), make_lppd("b", cells), make_lppd("c", cells)});
    for (int k = 0; k < 3; ++k) CHECK(w.weights[k] == Catch::Approx(1.0 / 3).margin(1e-12));
  }
  SECTION("solver matches the grid oracle on random instances") {
    std::mt19937_64 rng(2026);
    for (int rep = 0; rep < 50; ++rep) {
      const int K = 2 + rep % 2;
      auto lppds = random_instance(K, 3, 2, rng);
      auto w = stacking_weights(lppds);
      REQUIRE(std::abs(w.weights.sum() - 1.0) < 1e-12);
      REQUIRE(w.weights.minCoeff() >= 0.0);
      const double solver_obj = stacking_objective(lppds, w.weights);
      const double grid_obj = grid_best_objective(lppds, 1e-3);
      INFO("instance " << rep << " K=" << K);
      CHECK(solver_obj >= grid_obj - 1e-6);
    }
  }
  SECTION("returned weights beat the uniform vector and every vertex") {
    std::mt19937_64 rng(7);
    auto lppds = random_instance(3, 4, 3, rng);
    auto w = stacking_weights(lppds);
    const double at_w = stacking_objective(lppds, w.weights);
    CHECK(at_w >= stacking_objective(lppds, Vector::Constant(3, 1.0 / 3)) - 1e-9);
    for (int k = 0; k < 3; ++k) {
      Vector vertex = Vector::Zero(3);
      vertex[k] = 1.0;
      CHECK(at_w >= stacking_objective(lppds, vertex) - 1e-9);
    }
  }
  SECTION("common additive shift leaves the weights unchanged") {
    std::mt19937_64 rng(8);
    auto lppds = random_instance(2, 3, 3, rng);
    auto shifted = lppds;
    for (auto& m : shifted) m.cells.array() += 17.5;
    auto w1 = stacking_weights(lppds);
    auto w2 = stacking_weights(shifted);
    CHECK((w1.weights - w2.weights).cwiseAbs().maxCoeff() < 1e-9);
  }
  SECTION("mismatched cells are rejected") {
    Matrix a = Matrix::Constant(2, 2, -1.0), b = Matrix::Constant(3, 2, -1.0);
    CHECK_THROWS_AS(stacking_weights({make_lppd("a", a), make_lppd("b", b)}), DataError);
    Matrix c = Matrix::Constant(2, 2, -1.0);
    c(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(stacking_weights({make_lppd("a", a), make_lppd("c", c)}), DataError);
  }
}

TEST_CASE("pseudo-BMA weights", "[averaging]") {
  SECTION("equal totals are uniform") {
    Matrix cells = Matrix::Constant(2, 2, -4.0);
    auto w = pseudo_bma_weights({make_lppd("a", cells), make_lppd("b", cells)});
    CHECK(w.weights[0] == Catch::Approx(0.5).margin(1e-15));
    CHECK(w.weights[1] == Catch::Approx(0.5).margin(1e-15));
  }
  SECTION("softmax arithmetic at a known gap") {
    Matrix a = Matrix::Zero(1, 1);
    Matrix b = Matrix::Constant(1, 1, -std::log(3.0));
    auto w = pseudo_bma_weights({make_lppd("a", a), make_lppd("b", b)});
    CHECK(w.weights[0] == Catch::Approx(0.75).margin(1e-12));
    CHECK(w.weights[1] == Catch::Approx(0.25).margin(1e-12));
  }
  SECTION("fifty nats of advantage is decisive") {
    Matrix a = Matrix::Zero(1, 1);
    Matrix b = Matrix::Constant(1, 1, -50.0);
    auto w = pseudo_bma_weights({make_lppd("a", a), make_lppd("b", b)});
    CHECK(w.weights[0] >= 1.0 - 1e-20);
  }
  SECTION("matches the evidence softmax on the same vector") {
    Matrix a = Matrix::Constant(2, 2, -1.25);
    Matrix b = Matrix::Constant(2, 2, -1.5);
    auto w = pseudo_bma_weights({make_lppd("a", a), make_lppd("b", b)});
    Vector lm(2);
    lm << a.sum(), b.sum();
    Vector direct = bma_weights(lm);
    CHECK((w.weights - direct).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("common additive shift leaves the weights unchanged") {
    std::mt19937_64 rng(4);
    auto lppds = random_instance(3, 2, 2, rng);
    auto shifted = lppds;
    for (auto& m : shifted) m.cells.array() += -31.25;
    auto w1 = pseudo_bma_weights(lppds);
    auto w2 = pseudo_bma_weights(shifted);
    CHECK((w1.weights - w2.weights).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("forecast mixture", "[averaging]") {
  ModelSpec spec;
  spec.family = Family::LC;
  spec.ages = {60, 61, 62};
  spec.years = {2000, 2001};

  SECTION("degenerate weights reproduce the chosen ensemble") {
    auto a = constant_ensemble(spec, 100, 0.010, 1e-5);
    auto b = constant_ensemble(spec, 100, 0.050, 2e-5);
    WeightVector w;
    w.models = {"a", "b"};
    w.weights = Vector::Zero(2);
    w.weights[0] = 1.0;
    std::mt19937_64 rng(1);
    auto mix = combine({a, b}, w, rng);
    CHECK(mix.rates == a.rates);
    CHECK(mix.mixture_weights.size() == 2);
  }
  SECTION("even weights split the draws exactly") {
    auto a = constant_ensemble(spec, 4000, 0.010, 0.0);
    auto b = constant_ensemble(spec, 4000, 0.050, 0.0);
    WeightVector w;
    w.models = {"a", "b"};
    w.weights = Vector::Constant(2, 0.5);
    std::mt19937_64 rng(2);
    auto mix = combine({a, b}, w, rng);
    int from_a = 0;
    for (int s = 0; s < mix.n_draws(); ++s)
      if (mix.rates(s, 0) < 0.03) ++from_a;
    CHECK(from_a == 2000);
  }
  SECTION("largest remainder resolves fractional seats deterministically") {
    auto a = constant_ensemble(spec, 10, 0.010, 0.0);
    auto b = constant_ensemble(spec, 10, 0.050, 0.0);
    auto c = constant_ensemble(spec, 10, 0.090, 0.0);
    WeightVector w;
    w.models = {"a", "b", "c"};
    w.weights.resize(3);
    w.weights << 0.55, 0.25, 0.20;
    std::mt19937_64 rng(3);
    auto mix = combine({a, b, c}, w, rng);
    int na = 0, nb = 0, nc = 0;
    for (int s = 0; s < 10; ++s) {
      const double r = mix.rates(s, 0);
      if (r < 0.03)
        ++na;
      else if (r < 0.07)
        ++nb;
      else
        ++nc;
    }
    CHECK(na == 6);  // 5.5 rounds up on the largest remainder
    CHECK(nb == 2);  // 2.5 loses the tie to the earlier model
    CHECK(nc == 2);
  }
  SECTION("mixture mean is the weighted model mean") {
    const int S = 2000;
    auto a = constant_ensemble(spec, S, 0.010, 1e-6);
    auto b = constant_ensemble(spec, S, 0.050, -1e-6);
    WeightVector w;
    w.models = {"a", "b"};
    w.weights.resize(2);
    w.weights << 0.3, 0.7;
    std::mt19937_64 rng(4);
    auto mix = combine({a, b}, w, rng);
    const double want = 0.3 * a.rates.col(0).mean() + 0.7 * b.rates.col(0).mean();
    const double spread = 1e-6 * S;  // slope times draw range bounds the rounding effect
    CHECK(std::abs(mix.rates.col(0).mean() - want) < spread / std::sqrt(S) * 4.0);
  }
  SECTION("mismatched grids are rejected") {
    auto a = constant_ensemble(spec, 50, 0.010, 0.0);
    auto b = constant_ensemble(spec, 60, 0.050, 0.0);
    WeightVector w;
    w.models = {"a", "b"};
    w.weights = Vector::Constant(2, 0.5);
    std::mt19937_64 rng(5);
    CHECK_THROWS_AS(combine({a, b}, w, rng), DataError);
  }
}
