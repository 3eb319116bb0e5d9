#include <doctest.h>

#include <cmath>

#include "rsv/dgp.hpp"
#include "rsv/error.hpp"
#include "rsv/multivalued.hpp"

using namespace rsv;

TEST_SUITE("multivalued") {
  TEST_CASE("bins, boundaries and the bias bound") {
    const BinningSpec s = make_binning(0.0, 1.0, 0.1);
    REQUIRE(s.centers.size() == 5);
    CHECK(s.centers[0] == doctest::Approx(0.1));
    CHECK(s.centers[4] == doctest::Approx(0.9));
    CHECK(bin_index(s, 0.0) == 0);
    CHECK(bin_index(s, 0.2) == 0);
    CHECK(bin_index(s, 0.2001) == 1);
    CHECK(bin_index(s, 1.0) == 4);
    CHECK_THROWS_WITH_AS(bin_index(s, 1.2), doctest::Contains("OutOfSupport"), Error);
    CHECK(bias_bound(s) == doctest::Approx(0.2));
    CHECK(default_epsilon(0.0, 1.0, 20) == doctest::Approx(0.025));
    CHECK_THROWS_AS(make_binning(0.0, 1.0, 0.0), Error);
  }

  TEST_CASE("simpson integration is exact for cubics") {
    CHECK(integrate([](double y) { return y * y * y; }, 0.0, 2.0, 10) == doctest::Approx(4.0).epsilon(1e-14));
  }

  TEST_CASE("discretization of real outcomes") {
    RealOutcomeData raw;
    raw.data.rsv_dim = 1;
    for (double y : {0.05, 0.5, 0.95}) {
      UnitRecord u;
      u.sample = SampleTag::Obs;
      u.rsv = {y};
      raw.data.units.push_back(u);
      raw.outcome.push_back(y);
    }
    UnitRecord e;
    e.sample = SampleTag::Exp;
    e.treatment = 1;
    e.rsv = {0.0};
    raw.data.units.push_back(e);
    raw.outcome.push_back(std::nullopt);
    const Dataset ds = discretize(raw, make_binning(0.0, 1.0, 0.25));
    CHECK(ds.k_outcomes == 2);
    CHECK(ds.units[0].outcome == 0);
    CHECK(ds.units[1].outcome == 0);
    CHECK(ds.units[2].outcome == 1);
    CHECK(!ds.units[3].outcome);
    CHECK(ds.outcome_values == std::vector<double>{0.25, 0.75});
  }

  TEST_CASE("error shrinks with the bin radius and stays within the bound") {
    ContinuousPopulation pop;
    pop.f0 = [](double) { return 1.0; };
    pop.f1 = [](double y) { return 3.0 * y * y; };
    double last = 1.0;
    for (double eps : {0.25, 0.125, 0.0625, 0.03125}) {
      const DiscretizationCheck c = discretization_error(pop, make_binning(0.0, 1.0, eps));
      CHECK(c.theta == doctest::Approx(0.25));
      CHECK(c.error <= 2 * eps);
      CHECK(c.error <= last + 1e-12);
      last = c.error;
    }
  }

  TEST_CASE("binned population is a valid oracle input") {
    ContinuousPopulation pop;
    pop.f0 = [](double y) { return 2.0 * (1.0 - y); };
    pop.f1 = [](double y) { return 2.0 * y; };
    const BinningSpec s = make_binning(0.0, 1.0, 0.1);
    const FinitePopulation fp = binned_population(pop, s);
    CHECK(fp.outcome_values.size() == 5);
    const OracleResult o = population_oracle(fp);
    CHECK(o.theta_ratio == doctest::Approx(o.theta).epsilon(1e-10));
    CHECK(std::fabs(o.theta - 1.0 / 3) <= 0.2);
  }
}
