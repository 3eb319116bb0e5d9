#include <doctest.h>

#include <cmath>

#include "rsv/dgp.hpp"
#include "rsv/error.hpp"
#include "rsv/quasi.hpp"

using namespace rsv;

TEST_SUITE("quasi") {
  TEST_CASE("IV recovers the complier effect and its pieces") {
    DgpSpec s;
    s.kind = DgpKind::Iv;
    s.n = 20000;
    s.seed = 1;
    const SimulatedDataset sim = generate(s);
    EstimateConfig cfg;
    cfg.bootstrap = 50;
    const IvResult r = iv_late(sim.data, cfg);
    CHECK(std::fabs(r.late - 0.3) < 4 * r.se);
    // Only compliers move with the instrument.
    CHECK(r.beta_z.at(1) - r.beta_z.at(0) == doctest::Approx(0.6).epsilon(0.1));
    CHECK(r.alpha.size() == 4);
    CHECK(r.late == doctest::Approx((r.alpha_z.at(1) - r.alpha_z.at(0)) / (r.beta_z.at(1) - r.beta_z.at(0))));
    CHECK(r.result.estimand == "late");
  }

  TEST_CASE("without compliers the instrument is weak") {
    DgpSpec s;
    s.kind = DgpKind::Iv;
    s.n = 4000;
    s.complier_share = 0.0;
    s.always_share = 0.3;
    const SimulatedDataset sim = generate(s);
    EstimateConfig cfg;
    cfg.bootstrap = 0;
    CHECK_THROWS_WITH_AS(iv_late(sim.data, cfg), doctest::Contains("WeakInstrument"), Error);
  }

  TEST_CASE("DiD recovers the effect on the treated") {
    DgpSpec s;
    s.kind = DgpKind::Did;
    s.n = 20000;
    s.seed = 2;
    const SimulatedDataset sim = generate(s);
    EstimateConfig cfg;
    cfg.bootstrap = 50;
    const DidResult r = did_att(sim.data, cfg);
    CHECK(std::fabs(r.att - 0.2) < 4 * r.se);
    REQUIRE(r.alpha_t.size() == 4);
    const double att = (r.alpha_t.at("2,1") - r.alpha_t.at("1,1")) - (r.alpha_t.at("2,0") - r.alpha_t.at("1,0"));
    CHECK(r.att == doctest::Approx(att));
    CHECK(to_json(r).contains("alpha_t"));
  }

  TEST_CASE("frozen LATE and ATT") {
    DgpSpec s;
    s.n = 3000;
    s.seed = 5;
    EstimateConfig cfg;
    cfg.bootstrap = 0;
    s.kind = DgpKind::Iv;
    CHECK(iv_late(generate(s).data, cfg).late == doctest::Approx(0.3314277424637101).epsilon(1e-9));
    s.kind = DgpKind::Did;
    CHECK(did_att(generate(s).data, cfg).att == doctest::Approx(0.25939483927272733).epsilon(1e-9));
  }

  TEST_CASE("modes are checked") {
    DgpSpec s;
    s.n = 500;
    const SimulatedDataset sim = generate(s);
    CHECK_THROWS_AS(iv_late(sim.data, {}), Error);
    CHECK_THROWS_AS(did_att(sim.data, {}), Error);
  }
}
