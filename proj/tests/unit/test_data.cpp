#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "rsv/data.hpp"
#include "rsv/dgp.hpp"
#include "rsv/error.hpp"

using namespace rsv;

TEST_SUITE("data") {
  TEST_CASE("csv round trip preserves every record") {
    for (DgpKind kind : {DgpKind::Calibrated, DgpKind::Iv}) {
      DgpSpec s;
      s.kind = kind;
      s.n = 60;
      s.seed = 4;
      const SimulatedDataset sim = generate(s);
      const auto dir = testutil::scratch("roundtrip");
      write_csv(sim.data, (dir / "d.csv").string());
      CsvSchema schema;
      schema.mode = sim.data.mode;
      const Dataset back = load_csv((dir / "d.csv").string(), schema, sim.data.k_outcomes);
      REQUIRE(back.units.size() == sim.data.units.size());
      CHECK(back.rsv_dim == sim.data.rsv_dim);
      for (std::size_t i = 0; i < back.units.size(); ++i) CHECK(back.units[i] == sim.data.units[i]);
    }
  }

  TEST_CASE("did wide format loads as two records per unit") {
    DgpSpec s;
    s.kind = DgpKind::Did;
    s.n = 40;
    s.seed = 2;
    const SimulatedDataset sim = generate(s);
    const auto dir = testutil::scratch("did");
    write_csv(sim.data, (dir / "d.csv").string());
    CsvSchema schema;
    schema.mode = Mode::Did;
    const Dataset back = load_csv((dir / "d.csv").string(), schema);
    REQUIRE(back.units.size() == sim.data.units.size());
    std::multiset<std::tuple<long, int, int>> a, b;
    for (const auto& u : sim.data.units) a.insert({u.unit_key, *u.period, u.outcome.value_or(-1)});
    for (const auto& u : back.units) b.insert({u.unit_key, *u.period, u.outcome.value_or(-1)});
    CHECK(a == b);
  }

  TEST_CASE("parser reports malformed rows and schema violations") {
    const auto dir = testutil::scratch("bad");
    testutil::spit(dir / "a.csv", "sample,treatment,outcome,r_1\ne,1,NA,0.5\nx,1,NA,0.1\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "a.csv").string()), doctest::Contains("MalformedRow"), Error);
    testutil::spit(dir / "b.csv", "sample,treatment,outcome,r_1\ne,1,NA,abc\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "b.csv").string()), doctest::Contains("MalformedRow"), Error);
    testutil::spit(dir / "c.csv", "sample,treatment,outcome,r_1\ne,1,1,0.5\no,NA,0,0.2\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "c.csv").string()), doctest::Contains("exp_outcome_present"), Error);
    testutil::spit(dir / "d.csv", "sample,treatment,outcome\ne,1,NA\n");
    CHECK_THROWS_WITH_AS(load_csv((dir / "d.csv").string()), doctest::Contains("SchemaViolation"), Error);
    testutil::spit(dir / "e.csv", "");
    CHECK_THROWS_WITH_AS(load_csv((dir / "e.csv").string()), doctest::Contains("EmptySample"), Error);
  }

  TEST_CASE("validate flags treated observational units in incomplete mode") {
    Dataset ds;
    ds.rsv_dim = 1;
    ds.units = {testutil::exp_unit(1, {0.0}), testutil::obs_unit(1, {0.0})};
    ds.units[1].treatment = 1;
    const auto v = validate(ds);
    REQUIRE(v.size() == 1);
    CHECK(v[0].rule == "incomplete_obs_treated");
    CHECK(v[0].row == 1);
    ds.mode = Mode::Complete;
    bool single_arm = false;
    for (const auto& x : validate(ds)) single_arm |= x.rule == "complete_obs_single_arm";
    CHECK(single_arm);
  }

  TEST_CASE("folds keep clusters together and cover both samples") {
    DgpSpec s;
    s.n = 300;
    s.seed = 9;
    SimulatedDataset sim = generate(s);
    for (std::size_t i = 0; i < sim.data.units.size(); ++i) sim.data.units[i].cluster = std::to_string(i / 6);
    for (int L : {2, 3, 5}) {
      const auto fold = split_folds(sim.data, L, 17);
      CHECK(fold == split_folds(sim.data, L, 17));
      for (std::size_t i = 0; i < fold.size(); ++i) CHECK(fold[i] == fold[(i / 6) * 6]);
      for (int f = 0; f < L; ++f) {
        bool e = false, o = false;
        for (std::size_t i = 0; i < fold.size(); ++i)
          if (fold[i] == f) {
            e |= in_exp(sim.data.units[i].sample);
            o |= in_obs(sim.data.units[i].sample);
          }
        CHECK(e);
        CHECK(o);
      }
    }
    CHECK_THROWS_AS(split_folds(sim.data, 11, 0), Error);
    CHECK(split_folds(sim.data, 2, 1) != split_folds(sim.data, 2, 2));
  }

  TEST_CASE("fewer clusters than folds is infeasible") {
    Dataset ds;
    ds.rsv_dim = 1;
    for (int i = 0; i < 10; ++i) {
      auto u = i % 2 ? testutil::exp_unit(i % 4 == 1, {0.0}) : testutil::obs_unit(0, {0.0});
      u.cluster = "c" + std::to_string(i % 2);
      ds.units.push_back(u);
    }
    CHECK_THROWS_WITH_AS(split_folds(ds, 3, 0), doctest::Contains("InfeasibleSplit"), Error);
  }
}
