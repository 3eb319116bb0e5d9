#include <doctest.h>

#include <memory>
#include <numeric>

#include "helpers.hpp"
#include "rsv/dgp.hpp"
#include "rsv/error.hpp"
#include "rsv/represent.hpp"

using namespace rsv;

TEST_SUITE("represent") {
  TEST_CASE("conditional variations from a fixed prediction") {
    MarginalCounts c;
    c.layout = CellLayout::Standard;
    c.k_outcomes = 2;
    c.n = 10;
    c.p_exp = {0.25, 0.25};
    c.p_obs = {0.4, 0.1};
    Prediction p;
    p.exp_cells = {0.3, 0.7};
    p.obs_cells = {0.6, 0.4};
    p.p_exp = 0.5;
    p.p_obs = 0.8;
    const MomentSystem sys = incomplete_system(2, 0);
    const CondVariation v = cond_variation(sys, p, c);
    // ce = (0.7*0.5)/0.25 - (0.3*0.5)/0.25; co = (0.4*0.8)/0.1 - (0.6*0.8)/0.4
    CHECK(v.ce == doctest::Approx(0.8));
    CHECK(v.co(0) == doctest::Approx(2.0));
    Eigen::VectorXd theta(1);
    theta << 0.5;
    // Exclusive events: sum_event Pr(event|R) (a - b theta)^2 / p^2.
    const double want = 0.35 * 16 + 0.15 * 16 + 0.32 * 25 + 0.48 * (0.5 * 0.5) / (0.4 * 0.4);
    CHECK(sigma2_plugin(sys, p, c, theta) == doctest::Approx(want));
  }

  TEST_CASE("theta_init solves no-intercept least squares") {
    Eigen::MatrixXd co(5, 2);
    co << 1, 0, 0, 1, 1, 1, 2, -1, 0.5, 3;
    Eigen::VectorXd t(2);
    t << 0.3, -1.2;
    const Eigen::VectorXd ce = co * t;
    CHECK((theta_init(ce, co) - t).norm() < 1e-10);
    Eigen::MatrixXd flat = Eigen::MatrixXd::Zero(5, 1);
    CHECK_THROWS_WITH_AS(theta_init(Eigen::VectorXd::Ones(5), flat), doctest::Contains("SingularDesign"), Error);
  }

  TEST_CASE("learned representation tracks the outcome signal") {
    DgpSpec s;
    s.n = 3000;
    s.seed = 8;
    s.signal = 1.5;
    const SimulatedDataset sim = generate(s);
    std::vector<std::size_t> rows(sim.data.size());
    std::iota(rows.begin(), rows.end(), 0);
    const MomentSystem sys = incomplete_system(2, 0);
    auto ps = std::make_shared<const PredictorSet>(fit_predictors(sim.data, rows, sys.layout, {}));
    const Representation rep = learn_representation(sim.data, rows, ps, sys);
    CHECK(rep.theta().size() == 1);
    const Eigen::MatrixXd h = rep.evaluate(sim.data, rows);
    double h1 = 0, h0 = 0, n1 = 0, n0 = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      (sim.y_true[i] ? h1 : h0) += h(static_cast<Eigen::Index>(i), 0);
      (sim.y_true[i] ? n1 : n0) += 1;
    }
    CHECK(h1 / n1 > h0 / n0);
    CHECK(rep.evaluate(sim.data.units[0])(0) == h(0, 0));
  }

  TEST_CASE("a flat RSV is a degenerate representation") {
    Dataset ds;
    ds.rsv_dim = 1;
    for (int i = 0; i < 200; ++i)
      ds.units.push_back(i % 2 ? testutil::exp_unit(i % 4 == 1, {1.0}) : testutil::obs_unit(i % 4 == 0, {1.0}));
    std::vector<std::size_t> rows(ds.size());
    std::iota(rows.begin(), rows.end(), 0);
    const MomentSystem sys = incomplete_system(2, 0);
    auto ps = std::make_shared<const PredictorSet>(fit_predictors(ds, rows, sys.layout, {}));
    CHECK_THROWS_WITH_AS(learn_representation(ds, rows, ps, sys), doctest::Contains("SingularDesign"), Error);
  }

  TEST_CASE("first-feature representation is binary only") {
    const FinitePopulation pop = random_population(3, 4, 1);
    const SimulatedDataset sim = sample_population(pop, 100, 1);
    std::vector<std::size_t> rows(sim.data.size());
    std::iota(rows.begin(), rows.end(), 0);
    CHECK_THROWS_AS(naive_representation(NaiveKind::FirstFeature, sim.data, rows, incomplete_system(3, 2)), Error);
  }
}
