#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "rsv/baseline.hpp"
#include "rsv/diagnostics.hpp"
#include "rsv/error.hpp"
#include "rsv/multivalued.hpp"
#include "rsv/quasi.hpp"
#include "rsv/report.hpp"
#include "rsv/rng.hpp"
#include "rsv/stats.hpp"

namespace rsv::cli {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ===== Monte Carlo methods =====

struct MethodOutput {
  double estimate = kNaN;
  double se = kNaN;
};

std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> r(ds.units.size());
  std::iota(r.begin(), r.end(), 0);
  return r;
}

// Difference in means of per-unit values over experimental units by arm.
MethodOutput arm_difference(const Dataset& ds, const std::vector<double>& value, const std::vector<int>& arm) {
  std::vector<double> by[2];
  for (std::size_t i = 0; i < ds.units.size(); ++i)
    if (in_exp(ds.units[i].sample) && (arm[i] == 0 || arm[i] == 1)) by[arm[i]].push_back(value[i]);
  if (by[0].size() < 2 || by[1].size() < 2) fail(ErrorCode::ZeroCount, "an experimental arm has fewer than two units");
  MethodOutput m;
  m.estimate = mean(by[1]) - mean(by[0]);
  const double s1 = stddev(by[1]), s0 = stddev(by[0]);
  m.se = std::sqrt(s1 * s1 / static_cast<double>(by[1].size()) + s0 * s0 / static_cast<double>(by[0].size()));
  return m;
}

// Wald ratio of per-unit outcome values over the instrument arms.
double wald(const Dataset& ds, const std::vector<double>& value) {
  double y[2] = {0, 0}, d[2] = {0, 0}, n[2] = {0, 0};
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const auto& u = ds.units[i];
    if (!in_exp(u.sample) || !u.instrument || !u.treatment) continue;
    y[*u.instrument] += value[i];
    d[*u.instrument] += *u.treatment;
    n[*u.instrument] += 1;
  }
  if (n[0] == 0 || n[1] == 0) fail(ErrorCode::ZeroCount, "an instrument arm has no units");
  const double denom = d[1] / n[1] - d[0] / n[0];
  if (std::fabs(denom) < 1e-12) fail(ErrorCode::WeakInstrument, "no first stage");
  return (y[1] / n[1] - y[0] / n[0]) / denom;
}

// Difference in differences of per-record values over experimental units.
double did(const Dataset& ds, const std::vector<double>& value) {
  double s[2][2] = {{0, 0}, {0, 0}}, n[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const auto& u = ds.units[i];
    if (!in_exp(u.sample) || !u.treatment || !u.period) continue;
    s[*u.period - 1][*u.treatment] += value[i];
    n[*u.period - 1][*u.treatment] += 1;
  }
  for (auto& row : n)
    for (double c : row)
      if (c == 0) fail(ErrorCode::ZeroCount, "a period/arm cell has no experimental units");
  auto m = [&](int t, int d) { return s[t][d] / n[t][d]; };
  return (m(1, 1) - m(0, 1)) - (m(1, 0) - m(0, 0));
}

std::vector<double> label_values(const SimulatedDataset& sim) {
  std::vector<double> v(sim.y_true.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sim.data.outcome_value(sim.y_true[i]);
  return v;
}

// Expected outcome under pred_Y fitted on the given rows.
std::vector<double> predicted_values(const Dataset& ds, std::span<const std::size_t> rows, const PredictorOptions& opt,
                                     std::vector<double> out) {
  PredictorSet ps = fit_predictors(ds, rows, CellLayout::Standard, opt);
  auto f = expected_outcome(ps, ds);
  for (std::size_t i : rows) out[i] = f(ds.units[i]);
  return out;
}

MethodOutput run_method(const std::string& method, const SimulatedDataset& sim, DgpKind kind, const EstimateConfig& est) {
  const Dataset& ds = sim.data;
  MethodOutput m;
  PredictorOptions popt = est.predictor;
  popt.seed = est.seed ^ 0xc0ffeeULL;
  if (method == "ours") {
    if (kind == DgpKind::Iv) {
      const IvResult r = iv_late(ds, est);
      m.estimate = r.late;
      m.se = r.se;
    } else if (kind == DgpKind::Did) {
      const DidResult r = did_att(ds, est);
      m.estimate = r.att;
      m.se = r.se;
    } else {
      const EstimateResult r = estimate_ate(ds, est);
      m.estimate = r.theta_hat;
      m.se = r.se;
    }
    if (!(m.se > 0)) m.se = kNaN;
    return m;
  }
  if (method == "benchmark") {
    const auto y = label_values(sim);
    if (kind == DgpKind::Iv) m.estimate = wald(ds, y);
    else if (kind == DgpKind::Did) m.estimate = did(ds, y);
    else m = arm_difference(ds, y, sim.d_true);
    return m;
  }
  if (method == "common") {
    if (kind == DgpKind::Adversarial) {
      auto f = frequency_predictor(ds);
      std::vector<double> v(ds.units.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(ds.units[i]);
      return arm_difference(ds, v, sim.d_true);
    }
    std::vector<double> v(ds.units.size(), 0.0);
    if (kind == DgpKind::Did) {
      for (int t = 1; t <= 2; ++t) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < ds.units.size(); ++i)
          if (ds.units[i].period == t) rows.push_back(i);
        v = predicted_values(ds, rows, popt, std::move(v));
      }
      m.estimate = did(ds, v);
      return m;
    }
    v = predicted_values(ds, all_rows(ds), popt, std::move(v));
    if (kind == DgpKind::Iv) {
      m.estimate = wald(ds, v);
      return m;
    }
    std::vector<int> arm(ds.units.size(), -1);
    for (std::size_t i = 0; i < arm.size(); ++i)
      if (ds.units[i].treatment) arm[i] = *ds.units[i].treatment;
    return arm_difference(ds, v, arm);
  }
  fail(ErrorCode::InvalidArgument, "unknown method '" + method + "'");
}

}  // namespace

int default_threads() {
  if (const char* env = std::getenv("RSV_THREADS")) {
    const int t = std::atoi(env);
    if (t >= 1) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<McRow> run_monte_carlo(const McConfig& cfg) {
  for (const auto& m : cfg.methods)
    if (m != "ours" && m != "common" && m != "benchmark") fail(ErrorCode::InvalidSpec, "unknown method '" + m + "'");
  if (cfg.reps < 1) fail(ErrorCode::InvalidSpec, "reps must be positive");
  const std::vector<double> taus = cfg.base.kind == DgpKind::Calibrated ? cfg.tau_grid : std::vector<double>{0.0};
  // Validate every grid point up front so bad specs fail before any work.
  for (double tau : taus)
    for (std::size_t n : cfg.n_grid) {
      DgpSpec s = cfg.base;
      s.theta_shift = tau;
      s.n = n;
      validate_spec(s);
    }
  struct Task {
    std::size_t ti, ni;
    int rep;
  };
  std::vector<Task> tasks;
  for (std::size_t ti = 0; ti < taus.size(); ++ti)
    for (std::size_t ni = 0; ni < cfg.n_grid.size(); ++ni)
      for (int r = 0; r < cfg.reps; ++r) tasks.push_back({ti, ni, r});
  const std::size_t M = cfg.methods.size();
  std::vector<McRow> slots(tasks.size() * M);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < tasks.size(); k = next++) {
      const Task& t = tasks[k];
      Rng rng = make_rng(cfg.base.seed, {0x51aULL, t.ti, t.ni, static_cast<std::uint64_t>(t.rep)});
      DgpSpec spec = cfg.base;
      spec.theta_shift = taus[t.ti];
      spec.n = cfg.n_grid[t.ni];
      spec.seed = rng();
      EstimateConfig est = cfg.est;
      est.seed = rng();
      const SimulatedDataset sim = generate(spec);
      for (std::size_t m = 0; m < M; ++m) {
        McRow& row = slots[k * M + m];
        row.method = cfg.methods[m];
        row.tau = taus[t.ti];
        row.n = spec.n;
        row.rep = t.rep;
        row.truth = sim.truth;
        try {
          const MethodOutput out = run_method(row.method, sim, spec.kind, est);
          row.estimate = out.estimate;
          row.se = out.se;
          const double z = two_sided_z(est.alpha);
          row.ci_low = std::isfinite(out.se) ? out.estimate - z * out.se : kNaN;
          row.ci_high = std::isfinite(out.se) ? out.estimate + z * out.se : kNaN;
        } catch (const Error& e) {
          row.estimate = row.se = row.ci_low = row.ci_high = kNaN;
          row.error = e.name();
        }
      }
    }
  };
  const int threads = std::max(1, std::min<int>(cfg.threads, static_cast<int>(tasks.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  // Order by (method, tau, n, rep).
  std::vector<McRow> rows;
  rows.reserve(slots.size());
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t k = 0; k < tasks.size(); ++k) rows.push_back(std::move(slots[k * M + m]));
  return rows;
}

std::vector<McSummary> summarize(const std::vector<McRow>& rows) {
  std::vector<McSummary> out;
  std::size_t i = 0;
  while (i < rows.size()) {
    std::size_t j = i;
    while (j < rows.size() && rows[j].method == rows[i].method && rows[j].tau == rows[i].tau && rows[j].n == rows[i].n) ++j;
    McSummary s;
    s.method = rows[i].method;
    s.tau = rows[i].tau;
    s.n = rows[i].n;
    std::vector<double> est, err;
    int covered = 0, with_ci = 0;
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = rows[k];
      if (!r.error.empty() || !std::isfinite(r.estimate)) {
        ++s.failures;
        continue;
      }
      est.push_back(r.estimate);
      err.push_back(r.estimate - r.truth);
      if (std::isfinite(r.ci_low)) {
        ++with_ci;
        covered += (r.ci_low <= r.truth && r.truth <= r.ci_high);
      }
    }
    s.reps = static_cast<int>(est.size());
    if (!est.empty()) {
      s.mean_estimate = mean(est);
      s.bias = mean(err);
      s.sd = est.size() > 1 ? stddev(est) : 0.0;
      double sq = 0.0;
      for (double e : err) sq += e * e;
      s.rmse = std::sqrt(sq / static_cast<double>(err.size()));
    } else {
      s.mean_estimate = s.bias = s.sd = s.rmse = kNaN;
    }
    s.coverage = with_ci > 0 ? static_cast<double>(covered) / with_ci : kNaN;
    out.push_back(s);
    i = j;
  }
  return out;
}

// ===== command line =====

namespace {

struct EstimationFlags {
  int folds = 2;
  std::string predictor = "logistic";
  std::string class_weights;
  double clip = 0.01;
  int bootstrap = 500;
  double alpha = 0.10;
  std::uint64_t seed = 0;
  std::string representation = "learned";
  int reference = -1;
  bool no_stratify = false;
  bool whole_pipeline = false;
  bool no_cluster_bootstrap = false;
  double weak_floor = 0.05;
};

void add_estimation_flags(CLI::App* app, EstimationFlags& f) {
  app->add_option("--folds", f.folds, "Cross-fitting folds (2-10)")->capture_default_str();
  app->add_option("--predictor", f.predictor, "logistic | knn | stumps")->capture_default_str();
  app->add_option("--class-weights", f.class_weights, "Outcome class weights, e.g. 1:3");
  app->add_option("--clip", f.clip, "Probability clipping bound")->capture_default_str();
  app->add_option("--bootstrap", f.bootstrap, "Bootstrap replications (0: analytic when available)")->capture_default_str();
  app->add_option("--alpha", f.alpha, "Significance level of the intervals")->capture_default_str();
  app->add_option("--seed", f.seed, "Master seed")->capture_default_str();
  app->add_option("--representation", f.representation, "learned | pred_y | first_feature")->capture_default_str();
  app->add_option("--reference", f.reference, "Reference outcome category (-1: default)")->capture_default_str();
  app->add_flag("--no-stratify", f.no_stratify, "Ignore the covariate column");
  app->add_flag("--whole-pipeline-bootstrap", f.whole_pipeline, "Refit predictors in every bootstrap replication");
  app->add_flag("--no-cluster-bootstrap", f.no_cluster_bootstrap, "Resample units instead of clusters");
  app->add_option("--weak-instrument-floor", f.weak_floor, "Minimum |beta(1) - beta(0)|")->capture_default_str();
}

std::vector<double> parse_class_weights(const std::string& s) {
  std::vector<double> w;
  if (s.empty()) return w;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ':')) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(part, &pos);
      if (pos != part.size() || !(v > 0)) throw std::invalid_argument(part);
      w.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "class weights must be positive numbers separated by ':'");
    }
  }
  return w;
}

EstimateConfig make_config(const EstimationFlags& f) {
  EstimateConfig c;
  c.n_folds = f.folds;
  c.seed = f.seed;
  c.predictor.kind = parse_predictor(f.predictor);
  c.predictor.class_weights = parse_class_weights(f.class_weights);
  c.predictor.clip = f.clip;
  c.predictor.seed = f.seed;
  c.representation_choice = parse_representation(f.representation);
  if (c.representation_choice == RepresentationChoice::Custom)
    fail(ErrorCode::InvalidArgument, "custom representations are available through the library only");
  c.reference = f.reference;
  c.alpha = f.alpha;
  c.bootstrap = f.bootstrap;
  c.stratify = !f.no_stratify;
  c.whole_pipeline_bootstrap = f.whole_pipeline;
  c.cluster_bootstrap = !f.no_cluster_bootstrap;
  c.weak_instrument_floor = f.weak_floor;
  if (!(c.alpha > 0 && c.alpha < 1)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  if (!(c.predictor.clip > 0 && c.predictor.clip < 0.5)) fail(ErrorCode::InvalidArgument, "clip must lie in (0,0.5)");
  if (c.bootstrap < 0) fail(ErrorCode::InvalidArgument, "bootstrap must be nonnegative");
  return c;
}

json flags_json(const EstimationFlags& f) {
  return json{{"folds", f.folds},
              {"predictor", f.predictor},
              {"class_weights", f.class_weights},
              {"clip", f.clip},
              {"bootstrap", f.bootstrap},
              {"alpha", f.alpha},
              {"seed", f.seed},
              {"representation", f.representation},
              {"reference", f.reference},
              {"stratify", !f.no_stratify},
              {"whole_pipeline_bootstrap", f.whole_pipeline},
              {"cluster_bootstrap", !f.no_cluster_bootstrap},
              {"weak_instrument_floor", f.weak_floor}};
}

struct DataFlags {
  std::string data;
  std::string mode = "incomplete";
  int k_outcomes = 0;
  double bin_epsilon = 0.0;
  std::string bin_range;
  std::string cluster_col = "cluster";
  std::string covariate_col = "x";
  bool lenient = false;
};

void add_data_flags(CLI::App* app, DataFlags& f) {
  app->add_option("--data", f.data, "Input CSV")->required();
  app->add_option("--mode", f.mode, "incomplete | complete | iv | did")->capture_default_str();
  app->add_option("--k-outcomes", f.k_outcomes, "Outcome categories (0: infer)")->capture_default_str();
  app->add_option("--bin-epsilon", f.bin_epsilon, "Bin radius for real-valued outcomes");
  app->add_option("--bin-range", f.bin_range, "Outcome support lo:hi for binning (default: data range)");
  app->add_option("--cluster-col", f.cluster_col, "Cluster column")->capture_default_str();
  app->add_option("--covariate-col", f.covariate_col, "Discrete covariate column")->capture_default_str();
  app->add_flag("--lenient", f.lenient, "Report schema violations without failing");
}

json data_flags_json(const DataFlags& f) {
  return json{{"data", f.data},
              {"mode", f.mode},
              {"k_outcomes", f.k_outcomes},
              {"bin_epsilon", f.bin_epsilon},
              {"bin_range", f.bin_range},
              {"cluster_col", f.cluster_col},
              {"covariate_col", f.covariate_col},
              {"lenient", f.lenient}};
}

struct Loaded {
  Dataset ds;
  std::optional<BinningSpec> binning;
};

Loaded load_data(const DataFlags& f) {
  CsvSchema schema;
  schema.mode = parse_mode(f.mode);
  schema.cluster = f.cluster_col;
  schema.covariate = f.covariate_col;
  schema.strict = !f.lenient;
  Loaded L;
  if (f.bin_epsilon > 0) {
    RealOutcomeData raw = load_csv_real_outcome(f.data, schema);
    double lo, hi;
    if (!f.bin_range.empty()) {
      const auto c = f.bin_range.find(':');
      if (c == std::string::npos) fail(ErrorCode::InvalidArgument, "--bin-range expects lo:hi");
      try {
        lo = std::stod(f.bin_range.substr(0, c));
        hi = std::stod(f.bin_range.substr(c + 1));
      } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, "--bin-range expects lo:hi");
      }
    } else {
      lo = std::numeric_limits<double>::infinity();
      hi = -lo;
      for (const auto& y : raw.outcome)
        if (y) {
          lo = std::min(lo, *y);
          hi = std::max(hi, *y);
        }
      if (!(hi > lo)) fail(ErrorCode::EmptySample, "binning needs at least two distinct outcomes");
    }
    L.binning = make_binning(lo, hi, f.bin_epsilon);
    L.ds = discretize(raw, *L.binning);
  } else if (f.bin_epsilon < 0) {
    fail(ErrorCode::InvalidArgument, "--bin-epsilon must be positive");
  } else {
    L.ds = load_csv(f.data, schema, f.k_outcomes);
  }
  return L;
}

Estimand estimand_for(const Dataset& ds, const EstimateConfig& cfg) {
  switch (ds.mode) {
    case Mode::Iv: return iv_estimand(ds, cfg);
    case Mode::Did: return did_estimand(ds, cfg);
    default: return ate_estimand(ds, cfg);
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::InvalidArgument, "cannot create directory " + dir);
}

std::string join(const std::string& dir, const std::string& file) { return (std::filesystem::path(dir) / file).string(); }

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      std::size_t pos = 0;
      if constexpr (std::is_same_v<T, double>) out.push_back(std::stod(part, &pos));
      else {
        const long long v = std::stoll(part, &pos);
        if (v <= 0) throw std::invalid_argument(part);
        out.push_back(static_cast<T>(v));
      }
      if (pos != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidSpec, std::string("bad value '") + part + "' in " + what);
    }
  }
  if (out.empty()) fail(ErrorCode::InvalidSpec, std::string(what) + " is empty");
  return out;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

struct DgpFlags {
  std::string dgp = "calibrated";
  std::string missing = "delete_treated";
  double tau = 0.0;
  double p0 = 0.25;
  double a = 0.6;
  double b = 0.2;
  std::size_t rsv_dim = 8;
  double signal = 1.0;
  double obs_shift = 0.0;
  double complier_share = 0.6;
  double always_share = 0.2;
  double late = 0.3;
  double drift = 0.1;
  double att = 0.2;
};

void add_dgp_flags(CLI::App* app, DgpFlags& f, bool with_tau) {
  app->add_option("--dgp", f.dgp, "calibrated | adversarial | iv | did")->capture_default_str();
  app->add_option("--missing-pattern", f.missing, "delete_treated | random_half | none")->capture_default_str();
  if (with_tau) app->add_option("--tau", f.tau, "Effect shift: theta = -0.07 + tau")->capture_default_str();
  app->add_option("--p0", f.p0, "Pr(Y=1 | D=0)")->capture_default_str();
  app->add_option("--a", f.a, "Adversarial Pr{Y(0)=1}")->capture_default_str();
  app->add_option("--b", f.b, "Adversarial Pr{Y(1)=1}")->capture_default_str();
  app->add_option("--rsv-dim", f.rsv_dim, "RSV dimension")->capture_default_str();
  app->add_option("--signal", f.signal, "Mean shift of R given Y=1")->capture_default_str();
  app->add_option("--obs-shift", f.obs_shift, "Shift of observational-only RSVs")->capture_default_str();
  app->add_option("--complier-share", f.complier_share, "IV complier share")->capture_default_str();
  app->add_option("--always-share", f.always_share, "IV always-taker share")->capture_default_str();
  app->add_option("--late", f.late, "IV complier effect")->capture_default_str();
  app->add_option("--drift", f.drift, "DiD common drift")->capture_default_str();
  app->add_option("--att", f.att, "DiD effect on the treated")->capture_default_str();
}

DgpSpec make_spec(const DgpFlags& f) {
  DgpSpec s;
  s.kind = parse_dgp(f.dgp);
  s.missing_pattern = parse_missing_pattern(f.missing);
  s.theta_shift = f.tau;
  s.p0 = f.p0;
  s.a = f.a;
  s.b = f.b;
  s.rsv_dim = f.rsv_dim;
  s.signal = f.signal;
  s.obs_shift = f.obs_shift;
  s.complier_share = f.complier_share;
  s.always_share = f.always_share;
  s.late = f.late;
  s.drift = f.drift;
  s.att = f.att;
  return s;
}

// ----- subcommands -----

int cmd_estimate(const DataFlags& df, const EstimationFlags& ef, const std::string& out_dir, std::ostream& out,
                 std::ostream& err) {
  const json run_config{{"command", "estimate"}, {"data", data_flags_json(df)}, {"estimation", flags_json(ef)},
                        {"out", out_dir}};
  const EstimateConfig cfg = make_config(ef);
  Loaded L = load_data(df);
  json result;
  EstimateResult summary;
  switch (L.ds.mode) {
    case Mode::Iv: {
      IvResult r = iv_late(L.ds, cfg);
      result = to_json(r);
      summary = r.result;
      break;
    }
    case Mode::Did: {
      DidResult r = did_att(L.ds, cfg);
      result = to_json(r);
      summary = r.result;
      break;
    }
    default:
      summary = estimate_ate(L.ds, cfg);
      if (L.binning) summary.bias_bound = bias_bound(*L.binning);
      result = to_json(summary);
  }
  if (L.binning) result["binning"] = {{"epsilon", L.binning->epsilon}, {"centers", L.binning->centers},
                                      {"lo", L.binning->lo}, {"hi", L.binning->hi}};
  result["run_config"] = run_config;
  ensure_dir(out_dir);
  write_json(join(out_dir, "estimate.json"), result);
  CsvTable table = estimate_table(summary);
  table.add_comment("run_config: " + run_config.dump());
  write_text(join(out_dir, "estimate.csv"), table.str());
  for (const auto& w : summary.warnings) err << "warning: " << w << '\n';
  out << summary.estimand << " theta_hat=" << format_double(summary.theta_hat) << " se=" << format_double(summary.se)
      << " ci=[" << format_double(summary.ci_low) << ", " << format_double(summary.ci_high) << "]\n";
  return 0;
}

int cmd_simulate(const DgpFlags& gf, const EstimationFlags& ef, const std::string& tau_grid, const std::string& n_grid,
                 int reps, const std::string& methods, std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  const json run_config{{"command", "simulate"},
                        {"dgp", gf.dgp},
                        {"missing_pattern", gf.missing},
                        {"tau_grid", tau_grid},
                        {"n_grid", n_grid},
                        {"reps", reps},
                        {"methods", methods},
                        {"seed", seed},
                        {"p0", gf.p0},
                        {"a", gf.a},
                        {"b", gf.b},
                        {"rsv_dim", gf.rsv_dim},
                        {"signal", gf.signal},
                        {"obs_shift", gf.obs_shift},
                        {"complier_share", gf.complier_share},
                        {"always_share", gf.always_share},
                        {"late", gf.late},
                        {"drift", gf.drift},
                        {"att", gf.att},
                        {"estimation", flags_json(ef)},
                        {"out", out_dir}};
  McConfig mc;
  mc.base = make_spec(gf);
  mc.base.seed = seed;
  mc.tau_grid = parse_list<double>(tau_grid, "--tau-grid");
  mc.n_grid = parse_list<std::size_t>(n_grid, "--n-grid");
  mc.reps = reps;
  mc.methods = split_names(methods);
  if (mc.methods.empty()) fail(ErrorCode::InvalidSpec, "--methods is empty");
  try {
    mc.est = make_config(ef);
  } catch (const Error& e) {
    fail(ErrorCode::InvalidSpec, e.message());
  }
  mc.threads = default_threads();
  const auto rows = run_monte_carlo(mc);
  const auto summary = summarize(rows);

  CsvTable res({"method", "tau", "n", "rep", "truth", "estimate", "se", "ci_low", "ci_high", "error"});
  res.add_comment("run_config: " + run_config.dump());
  res.add_comment(std::string("rsv_model: ") +
                  (mc.base.kind == DgpKind::Calibrated ? "synthetic gaussian mean shift" : "finite support"));
  for (const auto& r : rows)
    res.add_row({r.method, format_double(r.tau), std::to_string(r.n), std::to_string(r.rep), format_double(r.truth),
                 format_double(r.estimate), format_double(r.se), format_double(r.ci_low), format_double(r.ci_high),
                 r.error});
  CsvTable sum({"method", "tau", "n", "reps", "failures", "mean_estimate", "bias", "sd", "rmse", "coverage"});
  sum.add_comment("run_config: " + run_config.dump());
  for (const auto& s : summary)
    sum.add_row({s.method, format_double(s.tau), std::to_string(s.n), std::to_string(s.reps), std::to_string(s.failures),
                 format_double(s.mean_estimate), format_double(s.bias), format_double(s.sd), format_double(s.rmse),
                 format_double(s.coverage)});
  ensure_dir(out_dir);
  write_text(join(out_dir, "mc_results.csv"), res.str());
  write_text(join(out_dir, "mc_summary.csv"), sum.str());
  out << "wrote " << rows.size() << " replication rows and " << summary.size() << " summary rows to " << out_dir << '\n';
  return 0;
}

int cmd_diagnose(const DataFlags& df, const EstimationFlags& ef, const std::string& check, const std::string& rep_a,
                 const std::string& rep_b, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const json run_config{{"command", "diagnose"}, {"check", check},       {"rep_a", rep_a},
                        {"rep_b", rep_b},         {"data", data_flags_json(df)}, {"estimation", flags_json(ef)},
                        {"out", out_dir}};
  const bool all = check == "all";
  if (!all && check != "relevance" && check != "specification" && check != "stability")
    fail(ErrorCode::InvalidArgument, "unknown check '" + check + "'");
  const EstimateConfig cfg = make_config(ef);
  Loaded L = load_data(df);
  json report{{"run_config", run_config}};
  ensure_dir(out_dir);
  if (all || check == "relevance") {
    const CrossFit cf = CrossFit::fit(L.ds, estimand_for(L.ds, cfg), cfg);
    const RelevanceResult r = relevance_test(cf, cfg);
    report["relevance"] = to_json(r);
    for (const auto& e : r.entries)
      if (e.fold == 0)
        out << "relevance " << e.target << "[" << e.component << "] stat=" << format_double(e.stat) << " ci=["
            << format_double(e.ci_low) << ", " << format_double(e.ci_high) << "]" << (e.weak ? " WEAK" : "") << '\n';
  }
  if (all || check == "specification") {
    EstimateConfig ca = cfg, cb = cfg;
    ca.representation_choice = parse_representation(rep_a);
    cb.representation_choice = parse_representation(rep_b);
    const SpecTestResult s = specification_test(L.ds, estimand_for(L.ds, cfg), ca, cb);
    report["specification"] = to_json(s);
    out << "specification " << s.rep_a << " vs " << s.rep_b << " diff=" << format_double(s.diff)
        << " p_value=" << format_double(s.p_value) << '\n';
  }
  StabilityResult st;
  if (all || check == "stability") {
    StabilityOptions so;
    so.seed = cfg.seed;
    st = stability_export(L.ds, so);
    report["stability"] = to_json(st);
    for (const auto& n : st.notices) err << "warning: " << n << '\n';
    for (const auto& g : st.gaps)
      out << "stability " << g.exp_cell << " vs " << g.obs_cell << " max_gap=" << format_double(g.max_gap)
          << " noise_band=" << format_double(g.noise_band) << (g.flagged ? " FLAGGED" : "") << '\n';
  }
  write_json(join(out_dir, "diagnostics.json"), report);
  write_stability_csv(st, join(out_dir, "stability.csv"), "run_config: " + run_config.dump());
  return 0;
}

int cmd_generate(const DgpFlags& gf, std::size_t n, std::uint64_t seed, const std::string& out_path,
                 const std::string& truth_path, std::ostream& out) {
  DgpSpec s = make_spec(gf);
  s.n = n;
  s.seed = seed;
  const SimulatedDataset sim = generate(s);
  write_csv(sim.data, out_path);
  if (!truth_path.empty()) {
    json t{{"truth", sim.truth}, {"meta", sim.meta}, {"y_true", sim.y_true}, {"d_true", sim.d_true}};
    if (s.kind == DgpKind::Adversarial) t["oracle"] = to_json(population_oracle(adversarial_population(s.a, s.b)));
    write_json(truth_path, t);
  }
  out << "wrote " << sim.data.units.size() << " records to " << out_path << " (truth " << format_double(sim.truth)
      << ")\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Causal effects from experiments with remotely sensed outcome proxies"};
  app.name("rsv");
  app.require_subcommand(1);

  DataFlags est_data, diag_data;
  EstimationFlags est_flags, sim_flags, diag_flags;
  sim_flags.bootstrap = 200;
  std::string est_out = ".", sim_out = ".", diag_out = ".";

  auto* est = app.add_subcommand("estimate", "Estimate the ATE (or LATE / ATT) from a CSV");
  add_data_flags(est, est_data);
  add_estimation_flags(est, est_flags);
  est->add_option("--out", est_out, "Output directory")->capture_default_str();

  DgpFlags sim_dgp;
  std::string tau_grid = "0,0.1,0.2,0.3,0.4,0.5", n_grid = "1000,2000,3000", methods = "ours,common,benchmark";
  int reps = 500;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study on a synthetic design");
  add_dgp_flags(sim, sim_dgp, false);
  add_estimation_flags(sim, sim_flags);
  sim->add_option("--tau-grid", tau_grid, "Comma-separated effect shifts")->capture_default_str();
  sim->add_option("--n-grid", n_grid, "Comma-separated sample sizes")->capture_default_str();
  sim->add_option("--reps", reps, "Replications per grid point")->capture_default_str();
  sim->add_option("--methods", methods, "ours, common, benchmark")->capture_default_str();
  sim->add_option("--out", sim_out, "Output directory")->capture_default_str();

  std::string check = "all", rep_a = "learned", rep_b = "pred_y";
  auto* diag = app.add_subcommand("diagnose", "Relevance, specification and stability diagnostics");
  add_data_flags(diag, diag_data);
  add_estimation_flags(diag, diag_flags);
  diag->add_option("--check", check, "relevance | specification | stability | all")->capture_default_str();
  diag->add_option("--rep-a", rep_a, "First representation of the specification test")->capture_default_str();
  diag->add_option("--rep-b", rep_b, "Second representation of the specification test")->capture_default_str();
  diag->add_option("--out", diag_out, "Output directory")->capture_default_str();

  DgpFlags gen_dgp;
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_truth;
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as CSV");
  add_dgp_flags(gen, gen_dgp, true);
  gen->add_option("--n", gen_n, "Units")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_option("--truth", gen_truth, "Optional JSON with the truth and full labels");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << error_name(ErrorCode::InvalidArgument) << ": " << e.what() << '\n';
    return 2;
  }

  try {
    if (est->parsed()) return cmd_estimate(est_data, est_flags, est_out, out, err);
    if (sim->parsed())
      return cmd_simulate(sim_dgp, sim_flags, tau_grid, n_grid, reps, methods, sim_flags.seed, sim_out, out);
    if (diag->parsed()) return cmd_diagnose(diag_data, diag_flags, check, rep_a, rep_b, diag_out, out, err);
    if (gen->parsed()) return cmd_generate(gen_dgp, gen_n, gen_seed, gen_out, gen_truth, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return error_class(e.code()) == ErrorClass::Identification ? 3 : 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace rsv::cli
