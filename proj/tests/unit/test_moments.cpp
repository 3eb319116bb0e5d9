#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "rsv/dgp.hpp"
#include "rsv/error.hpp"
#include "rsv/moments.hpp"
#include "rsv/rng.hpp"

using namespace rsv;

namespace {

std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> r(ds.units.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return r;
}

}  // namespace

TEST_SUITE("moments") {
  TEST_CASE("variation values for each unit type") {
    Dataset ds;
    ds.rsv_dim = 1;
    // 3 treated, 1 untreated experimental units; 2 observational with Y=1, 2 with Y=0.
    for (int d : {1, 1, 1, 0}) ds.units.push_back(testutil::exp_unit(d, {0.0}));
    for (int y : {1, 1, 0, 0}) ds.units.push_back(testutil::obs_unit(y, {0.0}));
    const auto rows = all_rows(ds);
    const MarginalCounts c = marginal_counts(ds, rows, CellLayout::Standard);
    CHECK(c.p_d1e() == doctest::Approx(3.0 / 8));
    CHECK(c.p_d0e() == doctest::Approx(1.0 / 8));
    CHECK(variation(ds.units[0], c).delta_e == doctest::Approx(8.0 / 3));
    CHECK(variation(ds.units[3], c).delta_e == doctest::Approx(-8.0));
    CHECK(variation(ds.units[4], c).delta_o(0) == doctest::Approx(4.0));
    CHECK(variation(ds.units[6], c).delta_o(0) == doctest::Approx(-4.0));
    CHECK(variation(ds.units[6], c).delta_e == 0.0);
  }

  TEST_CASE("variations average to zero at their own counts") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const FinitePopulation pop = random_population(3, 5, seed);
      const SimulatedDataset sim = sample_population(pop, 400, seed);
      const auto rows = all_rows(sim.data);
      const MarginalCounts c = marginal_counts(sim.data, rows, CellLayout::Standard);
      double se = 0.0;
      Eigen::VectorXd so = Eigen::VectorXd::Zero(2);
      for (const auto& u : sim.data.units) {
        const auto v = variation(u, c, 2);
        se += v.delta_e;
        so += v.delta_o;
      }
      CHECK(std::fabs(se) < 1e-9);
      CHECK(so.cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("complete-case system merges the shared observational event") {
    const MomentSystem sys = complete_arm_system(2, 0, 1);
    const auto ev = moment_events(sys);
    // {D=1,e}: a=1; {Y=0,D=1,o}: a=-1, b=-1; {Y=1,D=1,o}: b=1.
    REQUIRE(ev.size() == 3);
    for (const auto& e : ev) {
      if (e.side == Side::Exp) {
        CHECK(e.cell == 1);
        CHECK(e.a == 1.0);
        CHECK(e.b(0) == 0.0);
      } else if (e.cell == 1) {
        CHECK(e.a == -1.0);
        CHECK(e.b(0) == -1.0);
      } else {
        CHECK(e.cell == 3);
        CHECK(e.a == 0.0);
        CHECK(e.b(0) == 1.0);
      }
    }
  }

  TEST_CASE("expansion equals the squared residual for multi-category systems") {
    Rng rng = make_rng(5);
    std::uniform_real_distribution<double> pr(0.05, 0.9), th(-2, 2);
    for (int draw = 0; draw < 200; ++draw) {
      MarginalCounts c;
      c.layout = CellLayout::Complete;
      c.k_outcomes = 3;
      c.n = 100;
      c.p_exp = {pr(rng), pr(rng)};
      c.p_obs.resize(6);
      for (double& p : c.p_obs) p = pr(rng);
      Eigen::VectorXd theta(2);
      theta << th(rng), th(rng);
      for (int d : {0, 1}) {
        const MomentSystem sys = complete_arm_system(3, 2, d);
        std::vector<UnitRecord> units = {testutil::exp_unit(0, {0.0}), testutil::exp_unit(1, {0.0})};
        for (int y = 0; y < 3; ++y)
          for (int dd : {0, 1}) {
            auto u = testutil::obs_unit(y, {0.0});
            u.treatment = dd;
            units.push_back(u);
          }
        for (const auto& u : units) {
          const auto v = variation(sys, u, c);
          const double r = v.delta_e - v.delta_o.dot(theta);
          CHECK(sigma2_expansion(sys, u, c, theta) == doctest::Approx(r * r).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("missing events raise ZeroCount with the event name") {
    Dataset ds;
    ds.rsv_dim = 1;
    ds.units = {testutil::exp_unit(1, {0.0}), testutil::obs_unit(0, {0.0}), testutil::obs_unit(1, {0.0})};
    const auto rows = all_rows(ds);
    const MarginalCounts c = marginal_counts(ds, rows, CellLayout::Standard);
    CHECK_THROWS_WITH_AS(variation(ds.units[0], c), doctest::Contains("{D=0,e}"), Error);
  }

  TEST_CASE("default reference category") {
    CHECK(default_reference(2) == 0);
    CHECK(default_reference(4) == 3);
    CHECK(non_reference(4, 3) == std::vector<int>{0, 1, 2});
    CHECK_THROWS_AS(incomplete_system(3, 3), Error);
  }
}
