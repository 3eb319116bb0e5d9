#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "rsv/dgp.hpp"
#include "rsv/diagnostics.hpp"
#include "rsv/error.hpp"
#include "rsv/rng.hpp"

using namespace rsv;

TEST_SUITE("diagnostics") {
  TEST_CASE("kernel density integrates to one") {
    Rng rng = make_rng(1);
    std::normal_distribution<double> z(0, 1);
    std::vector<double> x(500);
    for (double& v : x) v = z(rng);
    std::vector<double> grid;
    for (int i = 0; i <= 400; ++i) grid.push_back(-6 + 12.0 * i / 400);
    const double h = silverman_bandwidth(x);
    CHECK(h > 0.2);
    CHECK(h < 0.5);
    const auto f = kernel_density(x, grid, h);
    double area = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) area += 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
    CHECK(area == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(f[200] == doctest::Approx(0.3989).epsilon(0.15));
  }

  TEST_CASE("principal component of a dominant direction") {
    Rng rng = make_rng(2);
    std::normal_distribution<double> z(0, 1);
    Eigen::MatrixXd x(400, 3);
    for (Eigen::Index i = 0; i < 400; ++i) {
      const double f = z(rng);
      x(i, 0) = f + 0.1 * z(rng);
      x(i, 1) = f + 0.1 * z(rng);
      x(i, 2) = z(rng);
    }
    const auto v = first_principal_component(x);
    CHECK(std::fabs(v[0]) == doctest::Approx(std::sqrt(0.5)).epsilon(0.05));
    CHECK(std::fabs(v[2]) < 0.1);
  }

  TEST_CASE("relevance excludes zero under a strong signal") {
    DgpSpec s;
    s.n = 2000;
    s.signal = 1.5;
    const SimulatedDataset sim = generate(s);
    EstimateConfig cfg;
    cfg.bootstrap = 100;
    const CrossFit cf = CrossFit::fit(sim.data, ate_estimand(sim.data, cfg), cfg);
    const RelevanceResult r = relevance_test(cf, cfg);
    CHECK(!r.weak);
    CHECK(r.entries.size() == 2);
    for (const auto& e : r.entries) CHECK(e.ci_low > 0);
  }

  TEST_CASE("specification test reports a p-value") {
    DgpSpec s;
    s.n = 1500;
    s.theta_shift = 0.3;
    const SimulatedDataset sim = generate(s);
    EstimateConfig cfg;
    cfg.bootstrap = 60;
    const SpecTestResult r = specification_test(sim.data, cfg, RepresentationChoice::Learned, RepresentationChoice::PredY);
    CHECK(r.p_value >= 0.0);
    CHECK(r.p_value <= 1.0);
    CHECK(r.diff == doctest::Approx(r.theta_a - r.theta_b));
    CHECK(r.rep_a == "learned");
  }

  TEST_CASE("stability flags a shifted observational sample") {
    DgpSpec s;
    s.n = 4000;
    s.missing_pattern = MissingPattern::RandomHalf;
    const SimulatedDataset sim = generate(s);
    StabilityOptions opt;
    opt.band_reps = 50;
    const StabilityResult clean = stability_export(sim.data, opt);
    CHECK(!clean.gaps.empty());
    for (const auto& g : clean.gaps) CHECK(!g.flagged);

    s.missing_pattern = MissingPattern::None;
    s.obs_shift = 2.0;
    const SimulatedDataset shifted = generate(s);
    const StabilityResult bad = stability_export(shifted.data, opt, shifted.y_true, shifted.d_true);
    bool flagged = false;
    for (const auto& g : bad.gaps) flagged |= g.flagged;
    CHECK(flagged);
  }

  TEST_CASE("no labeled overlap yields a notice rather than an error") {
    DgpSpec s;
    s.n = 600;
    s.missing_pattern = MissingPattern::None;
    const SimulatedDataset sim = generate(s);
    const StabilityResult r = stability_export(sim.data);
    CHECK(!r.notices.empty());
    CHECK(r.notices.front().find("InsufficientCell") != std::string::npos);
    const auto dir = testutil::scratch("stability");
    write_stability_csv(r, (dir / "s.csv").string(), "note");
    CHECK(testutil::slurp(dir / "s.csv").rfind("# note\ncell,grid_point,density\n", 0) == 0);
  }
}
