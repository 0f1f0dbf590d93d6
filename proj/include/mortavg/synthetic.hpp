#pragma once

#include "mortavg/draws.hpp"

namespace mortavg {

namespace synthetic_detail {

// Thin the posterior to a pool of at most 64 evenly spaced draws; replicate
// ids walk the pool round-robin so every replicate keys a single fixed draw.
inline int pool_draw_index(int n_draws, int replicate_id) {
  const int stride = std::max(1, n_draws / 64);
  const int pool = (n_draws + stride - 1) / stride;
  return (replicate_id % pool) * stride;
}

}  // namespace synthetic_detail

/// Simulate a full death surface from the model's count law at one posterior
/// draw, keeping the fitted grid and the exposures supplied.
inline MortalitySurface generate_synthetic(const PosteriorDraws& draws, const Array2D& exposures,
                                           std::mt19937_64& rng, int replicate_id) {
  const ModelSpec& spec = draws.spec;
  const int A = spec.n_ages(), N = spec.n_years();
  if (exposures.rows() != A || exposures.cols() != N)
    throw DataError("exposure grid does not match the fitted model grid");
  if (replicate_id < 0) throw DataError("replicate id must be nonnegative");
  if (draws.n_draws() == 0) throw DataError("no posterior draws to generate from");

  const ParamState st =
      draws.state_at(synthetic_detail::pool_draw_index(draws.n_draws(), replicate_id));
  const Array2D eta = predictor(spec, st);

  MortalitySurface out;
  out.ages = spec.ages;
  out.years = spec.years;
  out.exposures = exposures;
  out.deaths.resize(A, N);
  for (int x = 0; x < A; ++x)
    for (int t = 0; t < N; ++t) {
      const double m = exposures(x, t) * std::exp(eta(x, t));
      double mean = m;
      if (spec.is_nb()) {
        std::gamma_distribution<double> mix(st.phi, 1.0 / st.phi);
        mean = m * mix(rng);
      }
      if (mean > 0.0) {
        std::poisson_distribution<long> pois(mean);
        out.deaths(x, t) = static_cast<double>(pois(rng));
      } else {
        out.deaths(x, t) = 0.0;
      }
    }
  return out;
}

/// Average two simulated death surfaces cell by cell; grids and exposures
/// must coincide and are carried through unchanged.
inline MortalitySurface mix_synthetic(const MortalitySurface& a, const MortalitySurface& b) {
  if (a.ages != b.ages || a.years != b.years)
    throw DataError("mixed surfaces live on different grids");
  if ((a.exposures != b.exposures).any())
    throw DataError("mixed surfaces have different exposures");
  MortalitySurface out = a;
  out.deaths = (a.deaths + b.deaths) / 2.0;
  return out;
}

}  // namespace mortavg
