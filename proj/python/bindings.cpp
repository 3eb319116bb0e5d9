#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rsv/baseline.hpp"
#include "rsv/dgp.hpp"
#include "rsv/diagnostics.hpp"
#include "rsv/error.hpp"
#include "rsv/estimate.hpp"
#include "rsv/quasi.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

// Keys mirror the "config" block written into estimate.json.
rsv::EstimateConfig config_from_json(const std::string& text) {
  const json j = text.empty() ? json::object() : json::parse(text);
  rsv::EstimateConfig c;
  const std::vector<std::string> known = {"n_folds",   "seed",          "predictor",        "representation",
                                          "reference", "alpha",         "bootstrap",        "cluster_bootstrap",
                                          "whole_pipeline_bootstrap",   "irrelevance_factor", "degenerate_share",
                                          "stratify",  "weak_instrument_floor"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      rsv::fail(rsv::ErrorCode::InvalidArgument, "unknown config key '" + k + "'");
  take(j, "n_folds", c.n_folds);
  take(j, "seed", c.seed);
  take(j, "reference", c.reference);
  take(j, "alpha", c.alpha);
  take(j, "bootstrap", c.bootstrap);
  take(j, "cluster_bootstrap", c.cluster_bootstrap);
  take(j, "whole_pipeline_bootstrap", c.whole_pipeline_bootstrap);
  take(j, "irrelevance_factor", c.irrelevance_factor);
  take(j, "degenerate_share", c.degenerate_share);
  take(j, "stratify", c.stratify);
  take(j, "weak_instrument_floor", c.weak_instrument_floor);
  if (j.contains("representation")) c.representation_choice = rsv::parse_representation(j.at("representation"));
  c.predictor.seed = c.seed;
  if (j.contains("predictor")) {
    const json& p = j.at("predictor");
    if (p.is_string()) {
      c.predictor.kind = rsv::parse_predictor(p.get<std::string>());
    } else {
      if (p.contains("kind")) c.predictor.kind = rsv::parse_predictor(p.at("kind"));
      take(p, "class_weights", c.predictor.class_weights);
      take(p, "clip", c.predictor.clip);
      take(p, "seed", c.predictor.seed);
      take(p, "ridge_factor", c.predictor.ridge_factor);
      take(p, "knn_k", c.predictor.knn_k);
      take(p, "n_trees", c.predictor.n_trees);
    }
  }
  return c;
}

rsv::DgpSpec spec_from_json(const std::string& text) {
  const json j = text.empty() ? json::object() : json::parse(text);
  rsv::DgpSpec s;
  if (j.contains("dgp")) s.kind = rsv::parse_dgp(j.at("dgp"));
  if (j.contains("missing_pattern")) s.missing_pattern = rsv::parse_missing_pattern(j.at("missing_pattern"));
  take(j, "n", s.n);
  take(j, "tau", s.theta_shift);
  take(j, "p0", s.p0);
  take(j, "a", s.a);
  take(j, "b", s.b);
  take(j, "rsv_dim", s.rsv_dim);
  take(j, "seed", s.seed);
  take(j, "signal", s.signal);
  take(j, "signal_dims", s.signal_dims);
  take(j, "obs_shift", s.obs_shift);
  take(j, "complier_share", s.complier_share);
  take(j, "always_share", s.always_share);
  take(j, "late", s.late);
  take(j, "drift", s.drift);
  take(j, "att", s.att);
  take(j, "q0", s.q0);
  take(j, "q1", s.q1);
  return s;
}

rsv::SampleTag parse_tag(const std::string& s) {
  if (s == "e") return rsv::SampleTag::Exp;
  if (s == "o") return rsv::SampleTag::Obs;
  if (s == "eo") return rsv::SampleTag::Both;
  rsv::fail(rsv::ErrorCode::SchemaViolation, "sample tag must be e, o or eo");
}

rsv::Dataset from_columns(const std::vector<std::string>& sample, const std::vector<std::optional<int>>& treatment,
                          const std::vector<std::optional<int>>& outcome, const std::vector<std::vector<double>>& rsv,
                          int k_outcomes, const std::string& mode, const std::vector<std::optional<std::string>>& covariate,
                          const std::vector<std::optional<std::string>>& cluster) {
  const std::size_t n = sample.size();
  if (treatment.size() != n || outcome.size() != n || rsv.size() != n)
    rsv::fail(rsv::ErrorCode::DimMismatch, "columns must have equal length");
  if ((!covariate.empty() && covariate.size() != n) || (!cluster.empty() && cluster.size() != n))
    rsv::fail(rsv::ErrorCode::DimMismatch, "columns must have equal length");
  rsv::Dataset ds;
  ds.mode = rsv::parse_mode(mode);
  ds.rsv_dim = n ? rsv[0].size() : 0;
  int kmax = 1;
  for (std::size_t i = 0; i < n; ++i) {
    rsv::UnitRecord u;
    u.sample = parse_tag(sample[i]);
    u.treatment = treatment[i];
    u.outcome = outcome[i];
    u.rsv = rsv[i];
    if (!covariate.empty()) u.covariate = covariate[i];
    if (!cluster.empty()) u.cluster = cluster[i];
    if (u.outcome) kmax = std::max(kmax, *u.outcome);
    ds.units.push_back(std::move(u));
  }
  ds.k_outcomes = k_outcomes > 0 ? k_outcomes : kmax + 1;
  const auto v = rsv::validate(ds);
  if (!v.empty()) rsv::fail(rsv::ErrorCode::SchemaViolation, v.front().rule + ": " + v.front().message);
  return ds;
}

}  // namespace

PYBIND11_MODULE(_rsvcausal, m) {
  m.doc() = "Treatment effects from experiments with remotely sensed outcome proxies";
  py::register_exception<rsv::Error>(m, "RsvError");

  py::class_<rsv::Dataset>(m, "Dataset")
      .def_property_readonly("size", &rsv::Dataset::size)
      .def_property_readonly("k_outcomes", [](const rsv::Dataset& d) { return d.k_outcomes; })
      .def_property_readonly("rsv_dim", [](const rsv::Dataset& d) { return d.rsv_dim; })
      .def_property_readonly("mode", [](const rsv::Dataset& d) { return std::string(rsv::mode_name(d.mode)); })
      .def("to_csv", [](const rsv::Dataset& d, const std::string& path) { rsv::write_csv(d, path); })
      .def("__len__", &rsv::Dataset::size);

  m.def(
      "load_csv",
      [](const std::string& path, const std::string& mode, int k_outcomes, bool strict) {
        rsv::CsvSchema s;
        s.mode = rsv::parse_mode(mode);
        s.strict = strict;
        return rsv::load_csv(path, s, k_outcomes);
      },
      py::arg("path"), py::arg("mode") = "incomplete", py::arg("k_outcomes") = 0, py::arg("strict") = true);

  m.def("from_columns", &from_columns, py::arg("sample"), py::arg("treatment"), py::arg("outcome"), py::arg("rsv"),
        py::arg("k_outcomes") = 0, py::arg("mode") = "incomplete",
        py::arg("covariate") = std::vector<std::optional<std::string>>{},
        py::arg("cluster") = std::vector<std::optional<std::string>>{});

  m.def(
      "generate",
      [](const std::string& spec) {
        rsv::SimulatedDataset sim = rsv::generate(spec_from_json(spec));
        const json info{{"truth", sim.truth}, {"meta", sim.meta}, {"y_true", sim.y_true}, {"d_true", sim.d_true}};
        return py::make_tuple(std::move(sim.data), info.dump());
      },
      py::arg("spec_json") = "");

  m.def(
      "estimate",
      [](const rsv::Dataset& ds, const std::string& cfg) {
        const rsv::EstimateConfig c = config_from_json(cfg);
        py::gil_scoped_release release;
        switch (ds.mode) {
          case rsv::Mode::Iv: return rsv::to_json(rsv::iv_late(ds, c)).dump();
          case rsv::Mode::Did: return rsv::to_json(rsv::did_att(ds, c)).dump();
          default: return rsv::to_json(rsv::estimate_ate(ds, c)).dump();
        }
      },
      py::arg("dataset"), py::arg("config_json") = "");

  m.def(
      "relevance",
      [](const rsv::Dataset& ds, const std::string& cfg) {
        const rsv::EstimateConfig c = config_from_json(cfg);
        py::gil_scoped_release release;
        const rsv::Estimand est = ds.mode == rsv::Mode::Iv    ? rsv::iv_estimand(ds, c)
                                  : ds.mode == rsv::Mode::Did ? rsv::did_estimand(ds, c)
                                                              : rsv::ate_estimand(ds, c);
        const rsv::CrossFit cf = rsv::CrossFit::fit(ds, est, c);
        return rsv::to_json(rsv::relevance_test(cf, c)).dump();
      },
      py::arg("dataset"), py::arg("config_json") = "");

  m.def(
      "specification",
      [](const rsv::Dataset& ds, const std::string& cfg, const std::string& a, const std::string& b) {
        const rsv::EstimateConfig c = config_from_json(cfg);
        py::gil_scoped_release release;
        return rsv::to_json(rsv::specification_test(ds, c, rsv::parse_representation(a), rsv::parse_representation(b)))
            .dump();
      },
      py::arg("dataset"), py::arg("config_json") = "", py::arg("rep_a") = "learned", py::arg("rep_b") = "pred_y");

  m.def(
      "stability",
      [](const rsv::Dataset& ds, std::uint64_t seed) {
        rsv::StabilityOptions o;
        o.seed = seed;
        return rsv::to_json(rsv::stability_export(ds, o)).dump();
      },
      py::arg("dataset"), py::arg("seed") = 0);

  m.def(
      "adversarial_oracle",
      [](double a, double b) { return rsv::to_json(rsv::population_oracle(rsv::adversarial_population(a, b))).dump(); },
      py::arg("a"), py::arg("b"));
}
