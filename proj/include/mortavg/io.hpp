#pragma once

#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mortavg/surface.hpp"

namespace mortavg {

enum class Sex { Female, Male, Total };

inline Sex sex_from_string(const std::string& s) {
  if (s == "female" || s == "f") return Sex::Female;
  if (s == "male" || s == "m") return Sex::Male;
  if (s == "total" || s == "t") return Sex::Total;
  throw DataError("unknown sex '" + s + "' (expected female|male|total)");
}

namespace detail {

inline std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream iss(line);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

inline bool parse_int(const std::string& s, int& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

// One HMD 1x1 table: (year, age) -> value for the chosen sex column.
// "." cells are recorded as NaN and only rejected if they fall inside the
// requested window.
struct HmdTable {
  std::map<std::pair<int, int>, double> cells;
  int min_year = 0, max_year = -1;
};

inline HmdTable read_hmd_table(const std::string& path, Sex sex, bool top_age_plus,
                               int top_age) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open HMD file " + path);
  HmdTable table;
  std::string line;
  bool header_seen = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (!header_seen) {
      if (toks.size() >= 5 && toks[0] == "Year" && toks[1] == "Age") header_seen = true;
      continue;
    }
    if (toks.size() != 5)
      throw DataError("malformed row in " + path + " at line " + std::to_string(lineno) +
                      " (expected 5 columns, got " + std::to_string(toks.size()) + ")");
    int year = 0;
    if (!parse_int(toks[0], year))
      throw DataError("malformed year '" + toks[0] + "' in " + path + " at line " +
                      std::to_string(lineno));
    int age = 0;
    if (!toks[1].empty() && toks[1].back() == '+') {
      // Open age band such as "110+": only used when requested as the top age.
      std::string head = toks[1].substr(0, toks[1].size() - 1);
      if (!parse_int(head, age) || !(top_age_plus && age == top_age)) continue;
    } else if (!parse_int(toks[1], age)) {
      throw DataError("malformed age '" + toks[1] + "' in " + path + " at line " +
                      std::to_string(lineno));
    }
    const std::string& cell = toks[2 + (sex == Sex::Female ? 0 : sex == Sex::Male ? 1 : 2)];
    double value = std::numeric_limits<double>::quiet_NaN();
    if (cell != "." && !parse_double(cell, value))
      throw DataError("malformed value '" + cell + "' in " + path + " at line " +
                      std::to_string(lineno));
    table.cells[{year, age}] = value;
    if (table.max_year < table.min_year) {
      table.min_year = table.max_year = year;
    } else {
      table.min_year = std::min(table.min_year, year);
      table.max_year = std::max(table.max_year, year);
    }
  }
  if (!header_seen)
    throw DataError("no 'Year Age Female Male Total' header found in " + path);
  return table;
}

inline void fill_from_table(const HmdTable& table, const std::string& path, Array2D& grid,
                            const std::vector<int>& ages, const std::vector<int>& years) {
  for (size_t x = 0; x < ages.size(); ++x)
    for (size_t t = 0; t < years.size(); ++t) {
      auto it = table.cells.find({years[t], ages[x]});
      if (it == table.cells.end() || std::isnan(it->second))
        throw DataError("missing cell at age " + std::to_string(ages[x]) + ", year " +
                        std::to_string(years[t]) + " in " + path);
      grid(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(t)) = it->second;
    }
}

}  // namespace detail

/// Parse a pair of HMD 1x1 period tables (deaths and exposures) restricted to
/// the requested inclusive age and year windows and sex column.
inline MortalitySurface parse_hmd(const std::string& deaths_path,
                                  const std::string& exposures_path, Sex sex,
                                  std::pair<int, int> age_range,
                                  std::pair<int, int> year_range) {
  if (age_range.first > age_range.second || year_range.first > year_range.second)
    throw DataError("requested age/year range is empty");
  auto deaths_tab = detail::read_hmd_table(deaths_path, sex, true, age_range.second);
  auto expos_tab = detail::read_hmd_table(exposures_path, sex, true, age_range.second);
  for (const auto* tab : {&deaths_tab, &expos_tab}) {
    const std::string& path = (tab == &deaths_tab) ? deaths_path : exposures_path;
    if (tab->max_year < tab->min_year || year_range.first < tab->min_year ||
        year_range.second > tab->max_year)
      throw DataError("requested years " + std::to_string(year_range.first) + "-" +
                      std::to_string(year_range.second) + " not covered by " + path);
  }
  MortalitySurface s;
  for (int a = age_range.first; a <= age_range.second; ++a) s.ages.push_back(a);
  for (int y = year_range.first; y <= year_range.second; ++y) s.years.push_back(y);
  s.deaths.resize(s.n_ages(), s.n_years());
  s.exposures.resize(s.n_ages(), s.n_years());
  detail::fill_from_table(deaths_tab, deaths_path, s.deaths, s.ages, s.years);
  detail::fill_from_table(expos_tab, exposures_path, s.exposures, s.ages, s.years);
  for (int x = 0; x < s.n_ages(); ++x)
    for (int t = 0; t < s.n_years(); ++t)
      if (s.exposures(x, t) <= 0.0)
        throw DataError("non-positive exposure at age " + std::to_string(s.ages[x]) +
                        ", year " + std::to_string(s.years[t]) + " in " + exposures_path);
  s.validate();
  return s;
}

/// Long CSV: header "age,year,deaths,exposures", one row per cell, LF endings.
inline MortalitySurface read_csv_surface(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "age,year,deaths,exposures")
    throw DataError("unexpected CSV header in " + path +
                    " (expected 'age,year,deaths,exposures')");
  struct Cell {
    double deaths, exposures;
  };
  std::map<std::pair<int, int>, Cell> cells;  // (age, year)
  int min_age = 0, max_age = -1, min_year = 0, max_year = -1;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 4> f;
    size_t pos = 0;
    for (int i = 0; i < 4; ++i) {
      size_t comma = (i < 3) ? line.find(',', pos) : std::string::npos;
      if (i < 3 && comma == std::string::npos)
        throw DataError("malformed row in " + path + " at line " + std::to_string(lineno));
      f[i] = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
    int age = 0, year = 0;
    Cell c{};
    if (!detail::parse_int(f[0], age) || !detail::parse_int(f[1], year) ||
        !detail::parse_double(f[2], c.deaths) || !detail::parse_double(f[3], c.exposures))
      throw DataError("malformed row in " + path + " at line " + std::to_string(lineno));
    cells[{age, year}] = c;
    if (max_age < min_age) {
      min_age = max_age = age;
      min_year = max_year = year;
    } else {
      min_age = std::min(min_age, age);
      max_age = std::max(max_age, age);
      min_year = std::min(min_year, year);
      max_year = std::max(max_year, year);
    }
  }
  if (cells.empty()) throw DataError("no data rows in " + path);
  MortalitySurface s;
  for (int a = min_age; a <= max_age; ++a) s.ages.push_back(a);
  for (int y = min_year; y <= max_year; ++y) s.years.push_back(y);
  s.deaths.resize(s.n_ages(), s.n_years());
  s.exposures.resize(s.n_ages(), s.n_years());
  for (int x = 0; x < s.n_ages(); ++x)
    for (int t = 0; t < s.n_years(); ++t) {
      auto it = cells.find({s.ages[x], s.years[t]});
      if (it == cells.end())
        throw DataError("missing cell at age " + std::to_string(s.ages[x]) + ", year " +
                        std::to_string(s.years[t]) + " in " + path);
      s.deaths(x, t) = it->second.deaths;
      s.exposures(x, t) = it->second.exposures;
      if (s.exposures(x, t) <= 0.0)
        throw DataError("non-positive exposure at age " + std::to_string(s.ages[x]) +
                        ", year " + std::to_string(s.years[t]) + " in " + path);
    }
  s.validate();
  return s;
}

inline void write_csv_surface(const MortalitySurface& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV file " + path);
  out << "age,year,deaths,exposures\n";
  char buf[160];
  for (int x = 0; x < s.n_ages(); ++x)
    for (int t = 0; t < s.n_years(); ++t) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g\n", s.ages[x], s.years[t],
                    s.deaths(x, t), s.exposures(x, t));
      out << buf;
    }
}

/// Heuristic used by the CLI: long-CSV files start with the fixed header,
/// anything else is treated as a single HMD table (which needs its companion).
inline bool looks_like_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file " + path);
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line == "age,year,deaths,exposures";
}

}  // namespace mortavg
