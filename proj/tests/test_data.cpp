#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mortavg/io.hpp"

using namespace mortavg;
using testutil::TempDir;
using testutil::make_surface;
using testutil::write_text;

namespace {

double fixture_deaths(Sex sex, int age, int year) {
  const double f = 10.0 + 0.25 * age + 0.5 * (year - 1979);
  if (sex == Sex::Female) return f;
  if (sex == Sex::Male) return f + 7.0;
  return 2.0 * f + 7.0;
}

double fixture_exposures(Sex sex, int age, int year) {
  const double f = 2000.0 + 3.0 * age + 2.0 * (year - 1979);
  if (sex == Sex::Female) return f;
  if (sex == Sex::Male) return f + 500.0;
  return 2.0 * f + 500.0;
}

std::string hmd_text(bool deaths_table, int year_lo, int year_hi) {
  std::ostringstream os;
  os << "France, " << (deaths_table ? "Deaths" : "Exposure to risk")
     << " (period 1x1),\tLast modified: 06 Aug 2023;  Methods Protocol: v6 (2017)\n\n";
  os << "  Year          Age             Female            Male           Total\n";
  char buf[160];
  for (int y = year_lo; y <= year_hi; ++y)
    for (int a = 0; a <= 110; ++a) {
      std::string age_label = a == 110 ? "110+" : std::to_string(a);
      if (deaths_table && a >= 103 && a <= 105) {
        std::snprintf(buf, sizeof buf, "  %d   %6s       .       .       .\n", y,
                      age_label.c_str());
        os << buf;
        continue;
      }
      auto val = [&](Sex s) { return deaths_table ? fixture_deaths(s, a, y) : fixture_exposures(s, a, y); };
      std::snprintf(buf, sizeof buf, "  %d   %6s   %12.2f   %12.2f   %12.2f\n", y,
                    age_label.c_str(), val(Sex::Female), val(Sex::Male), val(Sex::Total));
      os << buf;
    }
  return os.str();
}

}  // namespace

TEST_CASE("log_sum_exp handles extremes", "[types]") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(log_sum_exp(0.0, 0.0) == Catch::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(log_sum_exp(-inf, 3.5) == 3.5);
  CHECK(log_sum_exp(3.5, -inf) == 3.5);
  CHECK(log_sum_exp(1000.0, 1000.0) == Catch::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  Vector v(3);
  v << 700.0, 710.0, 705.0;
  const double expect = 710.0 + std::log(std::exp(-10.0) + 1.0 + std::exp(-5.0));
  CHECK(log_sum_exp(v) == Catch::Approx(expect).epsilon(1e-15));
  CHECK(log_sum_exp(Vector(0)) == -inf);
  CHECK(normal_logpdf(0.0, 0.0, 1.0) == Catch::Approx(-0.5 * log_2pi).epsilon(1e-15));
}

TEST_CASE("HMD column selection picks the requested sex", "[io]") {
  TempDir dir("hmdrow");
  write_text(dir.file("d.txt"),
             "Somewhere, Deaths (period 1x1)\n\n"
             "  Year          Age             Female            Male           Total\n"
             "  1959   49   150.00   250.00   400.00\n"
             "  1959   50   200.00   300.00   500.00\n"
             "  1959   51   220.00   320.00   540.00\n");
  write_text(dir.file("e.txt"),
             "Somewhere, Exposure to risk (period 1x1)\n\n"
             "  Year          Age             Female            Male           Total\n"
             "  1959   49   1000.00   1100.00   2100.00\n"
             "  1959   50   1000.00   1200.00   2200.00\n"
             "  1959   51   1000.00   1300.00   2300.00\n");
  auto s = parse_hmd(dir.file("d.txt"), dir.file("e.txt"), Sex::Male, {50, 50}, {1959, 1959});
  REQUIRE(s.n_ages() == 1);
  REQUIRE(s.n_years() == 1);
  CHECK(s.deaths(0, 0) == 300.0);
  CHECK(s.exposures(0, 0) == 1200.0);
  auto f = parse_hmd(dir.file("d.txt"), dir.file("e.txt"), Sex::Female, {49, 51}, {1959, 1959});
  CHECK(f.deaths(1, 0) == 200.0);
  CHECK(f.exposures(2, 0) == 1000.0);
}

TEST_CASE("HMD window parse produces the requested rectangle", "[io]") {
  TempDir dir("hmd");
  write_text(dir.file("Deaths_1x1.txt"), hmd_text(true, 1979, 2018));
  write_text(dir.file("Exposures_1x1.txt"), hmd_text(false, 1979, 2018));

  auto s = parse_hmd(dir.file("Deaths_1x1.txt"), dir.file("Exposures_1x1.txt"), Sex::Male,
                     {60, 100}, {1979, 2018});
  REQUIRE(s.n_ages() == 41);
  REQUIRE(s.n_years() == 40);
  CHECK(s.ages.front() == 60);
  CHECK(s.ages.back() == 100);
  CHECK(s.years.front() == 1979);
  CHECK(s.years.back() == 2018);
  CHECK(s.deaths(0, 0) == fixture_deaths(Sex::Male, 60, 1979));
  CHECK(s.deaths(40, 39) == fixture_deaths(Sex::Male, 100, 2018));
  CHECK(s.exposures(5, 7) == fixture_exposures(Sex::Male, 65, 1986));

  SECTION("deterministic on reparse") {
    auto s2 = parse_hmd(dir.file("Deaths_1x1.txt"), dir.file("Exposures_1x1.txt"), Sex::Male,
                        {60, 100}, {1979, 2018});
    CHECK((s2.deaths == s.deaths).all());
    CHECK((s2.exposures == s.exposures).all());
  }
  SECTION("open age band usable as the top age") {
    auto top = parse_hmd(dir.file("Deaths_1x1.txt"), dir.file("Exposures_1x1.txt"), Sex::Total,
                         {106, 110}, {1990, 1995});
    REQUIRE(top.n_ages() == 5);
    CHECK(top.deaths(4, 0) == fixture_deaths(Sex::Total, 110, 1990));
  }
  SECTION("missing cells inside the window are rejected") {
    CHECK_THROWS_MATCHES(
        parse_hmd(dir.file("Deaths_1x1.txt"), dir.file("Exposures_1x1.txt"), Sex::Male,
                  {60, 103}, {1979, 2018}),
        DataError, Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("103")));
  }
  SECTION("years outside file coverage are rejected") {
    CHECK_THROWS_AS(parse_hmd(dir.file("Deaths_1x1.txt"), dir.file("Exposures_1x1.txt"),
                              Sex::Male, {60, 100}, {1950, 2018}),
                    DataError);
  }
}

TEST_CASE("HMD malformed input diagnostics", "[io]") {
  TempDir dir("hmdbad");
  write_text(dir.file("noheader.txt"), "just some text\n1959 50 1 2 3\n");
  write_text(dir.file("short.txt"),
             "x\n  Year          Age             Female            Male           Total\n"
             "  1959   50   200.00   300.00\n");
  write_text(dir.file("zero.txt"),
             "x\n  Year          Age             Female            Male           Total\n"
             "  1959   50   1000.00   0.00   1000.00\n");
  write_text(dir.file("d.txt"),
             "x\n  Year          Age             Female            Male           Total\n"
             "  1959   50   200.00   300.00   500.00\n");
  CHECK_THROWS_MATCHES(
      parse_hmd(dir.file("noheader.txt"), dir.file("noheader.txt"), Sex::Male, {50, 50},
                {1959, 1959}),
      DataError, Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("header")));
  CHECK_THROWS_MATCHES(
      parse_hmd(dir.file("short.txt"), dir.file("short.txt"), Sex::Male, {50, 50}, {1959, 1959}),
      DataError, Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("5 columns")));
  CHECK_THROWS_MATCHES(
      parse_hmd(dir.file("d.txt"), dir.file("zero.txt"), Sex::Male, {50, 50}, {1959, 1959}),
      DataError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("non-positive exposure")));
}

TEST_CASE("CSV surface round trip is bit exact", "[io]") {
  TempDir dir("csv");
  auto s = make_surface(6, 9, 70, 1995, 11);
  s.deaths(2, 3) = 12.625;  // fractional counts survive
  const std::string path = dir.file("surface.csv");
  write_csv_surface(s, path);
  CHECK(looks_like_csv(path));
  auto r = read_csv_surface(path);
  REQUIRE(r.ages == s.ages);
  REQUIRE(r.years == s.years);
  CHECK((r.deaths == s.deaths).all());
  CHECK((r.exposures == s.exposures).all());

  write_text(dir.file("badheader.csv"), "age,year,deaths\n60,2000,1\n");
  CHECK_THROWS_AS(read_csv_surface(dir.file("badheader.csv")), DataError);
  CHECK_FALSE(looks_like_csv(dir.file("badheader.csv")));
  write_text(dir.file("hole.csv"),
             "age,year,deaths,exposures\n60,2000,5,100\n61,2001,6,100\n");
  CHECK_THROWS_MATCHES(
      read_csv_surface(dir.file("hole.csv")), DataError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("missing cell")));
  write_text(dir.file("garbled.csv"), "age,year,deaths,exposures\n60,2000,five,100\n");
  CHECK_THROWS_AS(read_csv_surface(dir.file("garbled.csv")), DataError);
}

TEST_CASE("chronological split produces the documented column counts", "[surface]") {
  auto s = make_surface(5, 40, 60, 1979, 3);

  SECTION("train, validation and test") {
    SplitPlan plan{{1979, 1998}, {1999, 2008}, {2009, 2018}};
    auto [train, val, test] = split(s, plan);
    REQUIRE(val.has_value());
    REQUIRE(test.has_value());
    CHECK(train.n_years() == 20);
    CHECK(val->n_years() == 10);
    CHECK(test->n_years() == 10);
    Array2D glued(5, 40);
    glued << train.deaths, val->deaths, test->deaths;
    CHECK((glued == s.deaths).all());
  }
  SECTION("train plus test only") {
    SplitPlan plan{{1979, 2008}, {}, {2009, 2018}};
    auto [train, val, test] = split(s, plan);
    CHECK(train.n_years() == 30);
    CHECK_FALSE(val.has_value());
    CHECK(test->n_years() == 10);
  }
  SECTION("train only covers the whole surface") {
    SplitPlan plan{{1979, 2018}, {}, {}};
    auto [train, val, test] = split(s, plan);
    CHECK(train.n_years() == 40);
    CHECK_FALSE(val.has_value());
    CHECK_FALSE(test.has_value());
    CHECK((train.deaths == s.deaths).all());
  }
  SECTION("gaps and overlaps are rejected") {
    CHECK_THROWS_AS(split(s, SplitPlan{{1979, 1998}, {2000, 2008}, {2009, 2018}}), DataError);
    CHECK_THROWS_AS(split(s, SplitPlan{{1979, 1998}, {1998, 2008}, {2009, 2018}}), DataError);
    CHECK_THROWS_AS(split(s, SplitPlan{{1979, 2018}, {}, {2019, 2020}}), DataError);
    CHECK_THROWS_AS(split(s, SplitPlan{{}, {}, {}}), DataError);
  }
}

TEST_CASE("restrict_surface windows", "[surface]") {
  auto s = make_surface(10, 10, 60, 2000, 5);
  auto r = restrict_surface(s, 62, 65, 2003, 2007);
  REQUIRE(r.n_ages() == 4);
  REQUIRE(r.n_years() == 5);
  CHECK(r.deaths(0, 0) == s.deaths(2, 3));
  CHECK(r.exposures(3, 4) == s.exposures(5, 7));
  CHECK_THROWS_AS(restrict_surface(s, 50, 65, 2003, 2007), DataError);
  CHECK_THROWS_AS(restrict_surface(s, 65, 62, 2003, 2007), DataError);
}

TEST_CASE("perturbation scales whole calendar years of deaths", "[surface]") {
  MortalitySurface s;
  s.ages = {60, 61, 62};
  s.years = {2015, 2016, 2017, 2018};
  s.deaths = Array2D::Constant(3, 4, 1000.0);
  s.exposures = Array2D::Constant(3, 4, 5e4);

  auto out = perturb(s, {{2016, 0.05}, {2017, 0.05}, {2018, -0.02}});
  for (int x = 0; x < 3; ++x) {
    CHECK(out.deaths(x, 0) == 1000.0);
    CHECK(out.deaths(x, 1) == 1050.0);
    CHECK(out.deaths(x, 2) == 1050.0);
    CHECK(out.deaths(x, 3) == 980.0);
  }
  CHECK((out.exposures == s.exposures).all());

  SECTION("bitwise agreement with the defining expression on irregular counts") {
    auto irregular = make_surface(4, 6, 65, 2013, 9);
    auto shocked = perturb(irregular, {{2015, 0.05}});
    Array2D expected = irregular.deaths;
    expected.col(2) *= (1.0 + 0.05);
    CHECK((shocked.deaths == expected).all());
  }
  SECTION("empty shock list is the identity") {
    auto same = perturb(s, {});
    CHECK((same.deaths == s.deaths).all());
  }
  SECTION("unknown shock year") {
    CHECK_THROWS_AS(perturb(s, {{1990, 0.05}}), DataError);
  }
}

TEST_CASE("surface validation rejects broken grids", "[surface]") {
  auto s = make_surface(3, 3);
  auto bad = s;
  bad.deaths(1, 1) = -2.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = s;
  bad.exposures(0, 2) = 0.0;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = s;
  bad.years[2] = 2005;
  CHECK_THROWS_AS(bad.validate(), DataError);
  bad = s;
  bad.deaths.resize(3, 2);
  CHECK_THROWS_AS(bad.validate(), DataError);
}
