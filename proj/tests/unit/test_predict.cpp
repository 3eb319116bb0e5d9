#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "rsv/dgp.hpp"
#include "rsv/error.hpp"
#include "rsv/predict.hpp"
#include "rsv/rng.hpp"

using namespace rsv;

namespace {

TrainingSet two_class_data(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> z(0, 1);
  TrainingSet t;
  t.x.resize(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    t.x(static_cast<Eigen::Index>(i), 0) = z(rng) + 1.5 * y;
    t.x(static_cast<Eigen::Index>(i), 1) = z(rng);
    t.label.push_back(y);
    t.weight.push_back(1.0);
  }
  return t;
}

std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> r(ds.units.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

}  // namespace

TEST_SUITE("predict") {
  TEST_CASE("clipping projects onto the clipped simplex") {
    std::vector<double> p = {0.999, 0.001, 0.0};
    clip_probabilities(p, {1, 1, 0}, 0.01);
    CHECK(p[0] == doctest::Approx(0.99));
    CHECK(p[1] == doctest::Approx(0.01));
    CHECK(p[2] == 0.0);
    std::vector<double> q = {0.2, 0.3, 0.5};
    clip_probabilities(q, {1, 1, 1}, 0.01);
    CHECK(q[0] == doctest::Approx(0.2));
    CHECK(q[1] == doctest::Approx(0.3));
    CHECK(q[2] == doctest::Approx(0.5));
    Rng rng = make_rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 100; ++t) {
      std::vector<double> v(4);
      for (double& x : v) x = u(rng) * u(rng) * u(rng);
      const double s = std::accumulate(v.begin(), v.end(), 0.0);
      for (double& x : v) x /= s;
      clip_probabilities(v, {1, 1, 1, 1}, 0.05);
      CHECK(std::accumulate(v.begin(), v.end(), 0.0) == doctest::Approx(1.0));
      for (double x : v) CHECK(x >= 0.05 - 1e-12);
    }
  }

  TEST_CASE("classifiers rank the shifted class and round-trip through json") {
    const TrainingSet t = two_class_data(600, 1);
    for (PredictorKind kind : {PredictorKind::Logistic, PredictorKind::Knn, PredictorKind::Stumps}) {
      PredictorOptions opt;
      opt.kind = kind;
      opt.n_trees = 30;
      auto clf = fit_classifier(t, {1, 1}, opt, 7);
      auto back = classifier_from_json(clf->to_json());
      double lo[2], hi[2], lo2[2];
      const double a[2] = {-2.0, 0.0}, b[2] = {3.0, 0.0};
      clf->predict(a, lo);
      clf->predict(b, hi);
      back->predict(a, lo2);
      CAPTURE(predictor_name(kind));
      CHECK(hi[1] > lo[1]);
      CHECK(lo[0] + lo[1] == doctest::Approx(1.0));
      CHECK(lo2[0] == lo[0]);
      CHECK(lo2[1] == lo[1]);
    }
  }

  TEST_CASE("same seed gives the same forest") {
    const TrainingSet t = two_class_data(300, 2);
    PredictorOptions opt;
    opt.kind = PredictorKind::Stumps;
    opt.n_trees = 20;
    CHECK(fit_classifier(t, {1, 1}, opt, 5)->to_json() == fit_classifier(t, {1, 1}, opt, 5)->to_json());
    CHECK(fit_classifier(t, {1, 1}, opt, 5)->to_json() != fit_classifier(t, {1, 1}, opt, 6)->to_json());
  }

  TEST_CASE("class weights raise the weighted class probability") {
    const TrainingSet t = two_class_data(600, 4);
    PredictorOptions opt;
    const double x[2] = {0.75, 0.0};
    double p[2], pw[2];
    fit_classifier(t, {1, 1}, opt, 0)->predict(x, p);
    TrainingSet w = t;
    for (std::size_t i = 0; i < w.weight.size(); ++i) w.weight[i] = w.label[i] == 1 ? 3.0 : 1.0;
    fit_classifier(w, {1, 1}, opt, 0)->predict(x, pw);
    CHECK(pw[1] > p[1] + 0.1);
  }

  TEST_CASE("predictor set covers every event and serializes") {
    DgpSpec s;
    s.n = 800;
    s.seed = 3;
    const SimulatedDataset sim = generate(s);
    const auto rows = all_rows(sim.data);
    const PredictorSet ps = fit_predictors(sim.data, rows, CellLayout::Standard, {});
    const Prediction p = ps.predict(sim.data.units[0]);
    REQUIRE(p.exp_cells.size() == 2);
    REQUIRE(p.obs_cells.size() == 2);
    CHECK(p.exp_cells[0] + p.exp_cells[1] == doctest::Approx(1.0));
    CHECK(p.obs_cells[0] + p.obs_cells[1] == doctest::Approx(1.0));
    CHECK(p.event(Side::Obs, 1) == doctest::Approx(p.obs_cells[1] * p.p_obs));
    const PredictorSet back = PredictorSet::from_json(ps.to_json());
    const Prediction q = back.predict(sim.data.units[0]);
    CHECK(q.obs_cells == p.obs_cells);
    CHECK(q.p_exp == p.p_exp);
    std::vector<double> wrong(3, 0.0);
    CHECK_THROWS_WITH_AS(ps.predict(std::span<const double>(wrong)), doctest::Contains("DimMismatch"), Error);
  }

  TEST_CASE("parse names") {
    CHECK(parse_predictor("knn") == PredictorKind::Knn);
    CHECK(std::string(predictor_name(PredictorKind::Stumps)) == "stumps");
    CHECK_THROWS_AS(parse_predictor("svm"), Error);
  }
}
