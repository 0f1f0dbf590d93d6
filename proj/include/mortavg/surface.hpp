#pragma once

#include <optional>
#include <tuple>
#include <vector>

#include "mortavg/types.hpp"

namespace mortavg {

/// Rectangular age x year grid of death counts and central exposures.
/// Ages and years are contiguous ascending integer grids; deaths may be
/// fractional (HMD post-processing), exposures are strictly positive.
struct MortalitySurface {
  std::vector<int> ages;
  std::vector<int> years;
  Array2D deaths;     // A x N
  Array2D exposures;  // A x N

  int n_ages() const { return static_cast<int>(ages.size()); }
  int n_years() const { return static_cast<int>(years.size()); }

  int year_index(int year) const {
    if (years.empty() || year < years.front() || year > years.back())
      throw DataError("year " + std::to_string(year) + " not in surface range");
    return year - years.front();
  }

  int age_index(int age) const {
    if (ages.empty() || age < ages.front() || age > ages.back())
      throw DataError("age " + std::to_string(age) + " not in surface range");
    return age - ages.front();
  }

  void validate() const {
    const auto A = static_cast<Eigen::Index>(ages.size());
    const auto N = static_cast<Eigen::Index>(years.size());
    if (A == 0 || N == 0) throw DataError("empty surface");
    if (deaths.rows() != A || deaths.cols() != N || exposures.rows() != A ||
        exposures.cols() != N)
      throw DataError("deaths/exposures shape does not match ages x years grid");
    for (size_t i = 1; i < ages.size(); ++i)
      if (ages[i] != ages[i - 1] + 1) throw DataError("ages not contiguous ascending");
    for (size_t i = 1; i < years.size(); ++i)
      if (years[i] != years[i - 1] + 1) throw DataError("years not contiguous ascending");
    for (int x = 0; x < A; ++x)
      for (int t = 0; t < N; ++t) {
        if (!std::isfinite(deaths(x, t)) || deaths(x, t) < 0.0)
          throw DataError("negative or missing death count at age " +
                          std::to_string(ages[x]) + ", year " + std::to_string(years[t]));
        if (!std::isfinite(exposures(x, t)) || exposures(x, t) <= 0.0)
          throw DataError("non-positive exposure at age " + std::to_string(ages[x]) +
                          ", year " + std::to_string(years[t]));
      }
  }
};

/// Inclusive calendar-year range.
struct YearRange {
  int first = 0;
  int last = -1;  // empty when last < first
  bool empty() const { return last < first; }
  int size() const { return empty() ? 0 : last - first + 1; }
};

/// Chronological train / validation / test partition of a surface's years.
struct SplitPlan {
  YearRange train;
  YearRange validation;  // may be empty
  YearRange test;        // may be empty

  void validate_against(const MortalitySurface& s) const {
    if (train.empty()) throw DataError("split plan: training range is empty");
    auto check_contained = [&](const YearRange& r, const char* name) {
      if (r.empty()) return;
      if (r.first < s.years.front() || r.last > s.years.back())
        throw DataError(std::string("split plan: ") + name + " range " +
                        std::to_string(r.first) + "-" + std::to_string(r.last) +
                        " not covered by surface years");
    };
    check_contained(train, "train");
    check_contained(validation, "validation");
    check_contained(test, "test");
    int prev_last = train.last;
    if (!validation.empty()) {
      if (validation.first != prev_last + 1)
        throw DataError("split plan: validation must immediately follow training years");
      prev_last = validation.last;
    }
    if (!test.empty()) {
      if (test.first != prev_last + 1)
        throw DataError("split plan: test must immediately follow preceding range");
    }
  }
};

/// Restrict a surface to inclusive age and year windows.
inline MortalitySurface restrict_surface(const MortalitySurface& s, int age_lo, int age_hi,
                                         int year_lo, int year_hi) {
  if (age_lo > age_hi || year_lo > year_hi)
    throw DataError("requested restriction window is empty");
  if (age_lo < s.ages.front() || age_hi > s.ages.back() || year_lo < s.years.front() ||
      year_hi > s.years.back())
    throw DataError("requested ages " + std::to_string(age_lo) + "-" + std::to_string(age_hi) +
                    ", years " + std::to_string(year_lo) + "-" + std::to_string(year_hi) +
                    " not covered by surface");
  const int x0 = s.age_index(age_lo), t0 = s.year_index(year_lo);
  const int A = age_hi - age_lo + 1, N = year_hi - year_lo + 1;
  MortalitySurface out;
  out.ages.resize(A);
  out.years.resize(N);
  for (int i = 0; i < A; ++i) out.ages[i] = age_lo + i;
  for (int j = 0; j < N; ++j) out.years[j] = year_lo + j;
  out.deaths = s.deaths.block(x0, t0, A, N);
  out.exposures = s.exposures.block(x0, t0, A, N);
  return out;
}

inline MortalitySurface restrict_years(const MortalitySurface& s, const YearRange& r) {
  return restrict_surface(s, s.ages.front(), s.ages.back(), r.first, r.last);
}

/// Column-wise partition into (train, validation?, test?). Ages unchanged;
/// concatenating the parts reproduces the year-restricted surface exactly.
inline std::tuple<MortalitySurface, std::optional<MortalitySurface>,
                  std::optional<MortalitySurface>>
split(const MortalitySurface& s, const SplitPlan& plan) {
  plan.validate_against(s);
  MortalitySurface train = restrict_years(s, plan.train);
  std::optional<MortalitySurface> validation, test;
  if (!plan.validation.empty()) validation = restrict_years(s, plan.validation);
  if (!plan.test.empty()) test = restrict_years(s, plan.test);
  return {std::move(train), std::move(validation), std::move(test)};
}

/// Scale the death counts of whole calendar years: d -> (1 + relative_change) * d.
/// Exposures and all other years are untouched.
inline MortalitySurface perturb(const MortalitySurface& s,
                                const std::vector<std::pair<int, double>>& shocks) {
  MortalitySurface out = s;
  for (const auto& [year, change] : shocks) {
    const int t = out.year_index(year);  // throws if absent
    out.deaths.col(t) *= (1.0 + change);
  }
  return out;
}

}  // namespace mortavg
