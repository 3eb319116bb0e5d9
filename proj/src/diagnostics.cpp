#include "rsv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "rsv/error.hpp"
#include "rsv/rng.hpp"
#include "rsv/stats.hpp"

namespace rsv {

using nlohmann::json;

// ===== relevance =====

namespace {

// stats[target][component] on one test fold, size weighted over its strata.
std::vector<std::vector<double>> relevance_stats(const CrossFit& cf, const std::vector<std::vector<int>>& picks,
                                                 int fold) {
  const auto& est = cf.estimand();
  std::vector<std::vector<double>> acc(est.targets.size());
  std::vector<double> tot(est.targets.size(), 0.0);
  for (std::size_t t = 0; t < est.targets.size(); ++t) acc[t].assign(static_cast<std::size_t>(est.targets[t].system.dim()), 0.0);
  for (std::size_t p = 0; p < cf.parts().size(); ++p) {
    const auto& part = cf.parts()[p];
    if (part.fold != fold || picks[p].empty()) continue;
    const RatioStats st = cf.part_stats_raw(part, picks[p]);
    const double w = static_cast<double>(picks[p].size());
    const auto t = static_cast<std::size_t>(part.target);
    for (std::size_t j = 0; j < acc[t].size(); ++j) acc[t][j] += w * st.gram(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
    tot[t] += w;
  }
  for (std::size_t t = 0; t < acc.size(); ++t)
    for (auto& v : acc[t]) v = tot[t] > 0 ? v / tot[t] : std::numeric_limits<double>::quiet_NaN();
  return acc;
}

}  // namespace

RelevanceResult relevance_test(const CrossFit& cf, const EstimateConfig& cfg) {
  RelevanceResult res;
  const int reps = cfg.bootstrap > 0 ? cfg.bootstrap : 200;
  const int n_folds = cfg.n_folds;
  const auto identity = cf.identity_picks();
  std::vector<std::vector<std::vector<double>>> point;
  for (int f = 0; f < n_folds; ++f) point.push_back(relevance_stats(cf, identity, f));
  // draws[fold][rep][target][component]
  std::vector<std::vector<std::vector<std::vector<double>>>> draws(static_cast<std::size_t>(n_folds));
  for (int b = 0; b < reps; ++b) {
    const auto picks = cf.resample_picks(static_cast<std::uint64_t>(b), nullptr);
    bool ok = true;
    std::vector<std::vector<std::vector<double>>> rep;
    for (int f = 0; f < n_folds && ok; ++f) {
      try {
        rep.push_back(relevance_stats(cf, picks, f));
      } catch (const Error&) {
        ok = false;
      }
    }
    if (!ok) {
      ++res.failures;
      continue;
    }
    for (int f = 0; f < n_folds; ++f) draws[static_cast<std::size_t>(f)].push_back(std::move(rep[static_cast<std::size_t>(f)]));
  }
  res.reps = reps;
  if (draws.front().size() < 2) fail(ErrorCode::DegenerateBootstrap, "relevance bootstrap failed");
  const double z = two_sided_z(cfg.alpha);
  const auto& est = cf.estimand();
  for (int f = 0; f < n_folds; ++f) {
    const auto fs = static_cast<std::size_t>(f);
    for (std::size_t t = 0; t < point[fs].size(); ++t) {
      for (std::size_t j = 0; j < point[fs][t].size(); ++j) {
        if (!std::isfinite(point[fs][t][j])) continue;
        std::vector<double> x;
        for (const auto& d : draws[fs])
          if (std::isfinite(d[t][j])) x.push_back(d[t][j]);
        RelevanceEntry e;
        e.fold = f;
        e.target = est.targets[t].system.label;
        e.component = static_cast<int>(j);
        e.stat = point[fs][t][j];
        e.se = x.size() > 1 ? stddev(x) : 0.0;
        e.ci_low = e.stat - z * e.se;
        e.ci_high = e.stat + z * e.se;
        e.weak = e.ci_low <= 0.0 && e.ci_high >= 0.0;
        if (f == 0) res.weak = res.weak || e.weak;
        res.entries.push_back(std::move(e));
      }
    }
  }
  return res;
}

// ===== specification =====

SpecTestResult specification_test(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg_a,
                                  const EstimateConfig& cfg_b) {
  if (cfg_a.seed != cfg_b.seed || cfg_a.n_folds != cfg_b.n_folds)
    fail(ErrorCode::InvalidArgument, "specification test needs the same folds (seed and fold count)");
  const CrossFit a = CrossFit::fit(ds, est, cfg_a);
  const CrossFit b = CrossFit::fit(ds, est, cfg_b);
  SpecTestResult r;
  r.rep_a = representation_name(cfg_a.representation_choice);
  r.rep_b = representation_name(cfg_b.representation_choice);
  r.theta_a = a.point().scalar;
  r.theta_b = b.point().scalar;
  r.diff = r.theta_a - r.theta_b;
  const int reps = cfg_a.bootstrap > 0 ? cfg_a.bootstrap : 200;
  std::vector<double> diffs;
  for (int k = 0; k < reps; ++k) {
    std::vector<std::size_t> rows_a, rows_b;
    const auto pa = a.resample_picks(static_cast<std::uint64_t>(k), &rows_a);
    const auto pb = b.resample_picks(static_cast<std::uint64_t>(k), &rows_b);
    try {
      diffs.push_back(a.assemble(pa, rows_a).scalar - b.assemble(pb, rows_b).scalar);
    } catch (const Error&) {
      ++r.failures;
    }
  }
  r.reps = reps;
  if (diffs.size() < 2) fail(ErrorCode::DegenerateBootstrap, "specification bootstrap failed");
  r.diff_se = stddev(diffs);
  if (r.diff_se > 0.0) r.p_value = 2.0 * (1.0 - normal_cdf(std::fabs(r.diff) / r.diff_se));
  else r.p_value = r.diff == 0.0 ? 1.0 : 0.0;
  r.reject = r.p_value < cfg_a.alpha;
  return r;
}

SpecTestResult specification_test(const Dataset& ds, const EstimateConfig& cfg, RepresentationChoice a,
                                  RepresentationChoice b) {
  EstimateConfig ca = cfg, cb = cfg;
  ca.representation_choice = a;
  cb.representation_choice = b;
  return specification_test(ds, ate_estimand(ds, cfg), ca, cb);
}

// ===== stability =====

std::vector<double> first_principal_component(const Eigen::MatrixXd& x, double tol, int max_iter) {
  const auto p = x.cols();
  if (p == 0 || x.rows() < 2) fail(ErrorCode::InvalidArgument, "principal component needs data");
  Eigen::MatrixXd z = x.rowwise() - x.colwise().mean();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double sd = std::sqrt(z.col(j).squaredNorm() / static_cast<double>(x.rows() - 1));
    if (sd > 0) z.col(j) /= sd;
  }
  const Eigen::MatrixXd cov = z.transpose() * z / static_cast<double>(x.rows() - 1);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(p) / std::sqrt(static_cast<double>(p));
  // Nudge off a possible symmetric saddle so the iteration can leave it.
  for (Eigen::Index j = 0; j < p; ++j) v(j) += 1e-3 * static_cast<double>(j + 1) / static_cast<double>(p);
  v.normalize();
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd w = cov * v;
    const double nrm = w.norm();
    if (!(nrm > 0)) break;
    w /= nrm;
    const double change = std::min((w - v).norm(), (w + v).norm());
    v = w;
    if (change < tol) break;
  }
  Eigen::Index arg;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
  return std::vector<double>(v.data(), v.data() + p);
}

double silverman_bandwidth(std::span<const double> x) {
  if (x.size() < 2) return 1.0;
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  auto q = [&](double prob) {
    const double pos = prob * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double sd = stddev(x);
  const double iqr = q(0.75) - q(0.25);
  double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0)) spread = 1.0;
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

std::vector<double> kernel_density(std::span<const double> x, std::span<const double> grid, double bandwidth) {
  std::vector<double> f(grid.size(), 0.0);
  const double c = 1.0 / (static_cast<double>(x.size()) * bandwidth * std::sqrt(2.0 * M_PI));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double v : x) {
      const double u = (grid[g] - v) / bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    f[g] = c * s;
  }
  // Renormalize to unit trapezoid mass on the grid.
  double mass = 0.0;
  for (std::size_t g = 1; g < grid.size(); ++g) mass += 0.5 * (f[g] + f[g - 1]) * (grid[g] - grid[g - 1]);
  if (mass > 0)
    for (auto& v : f) v /= mass;
  return f;
}

namespace {

struct CellKey {
  char s;  // 'e' or 'o'
  int d;   // -1 when not recorded
  int y;
  bool operator<(const CellKey& o) const { return std::tie(s, d, y) < std::tie(o.s, o.d, o.y); }
};

std::string cell_name(const CellKey& k) {
  return std::string("s=") + k.s + ",d=" + (k.d < 0 ? std::string("*") : std::to_string(k.d)) + ",y=" + std::to_string(k.y);
}

double max_gap(std::span<const double> a, std::span<const double> b, std::span<const double> grid) {
  const double ha = silverman_bandwidth(a), hb = silverman_bandwidth(b);
  const auto fa = kernel_density(a, grid, ha), fb = kernel_density(b, grid, hb);
  double g = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) g = std::max(g, std::fabs(fa[i] - fb[i]));
  return g;
}

double ks_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

StabilityResult stability_export(const Dataset& ds, const StabilityOptions& opt, std::span<const int> y_true,
                                 std::span<const int> d_true) {
  StabilityResult res;
  const std::size_t N = ds.units.size();
  if (!y_true.empty() && y_true.size() != N) fail(ErrorCode::DimMismatch, "y_true must cover every unit");
  if (!d_true.empty() && d_true.size() != N) fail(ErrorCode::DimMismatch, "d_true must cover every unit");
  if (N < 2 || ds.rsv_dim == 0) fail(ErrorCode::InvalidArgument, "stability export needs RSV data");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(ds.rsv_dim));
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < ds.rsv_dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.units[i].rsv[j];
  res.loading = first_principal_component(x);
  const Eigen::VectorXd mean = x.colwise().mean().transpose();
  Eigen::VectorXd sd(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double s = std::sqrt((x.col(j).array() - mean(j)).square().sum() / static_cast<double>(N - 1));
    sd(j) = s > 0 ? s : 1.0;
  }
  std::vector<double> score(N);
  for (std::size_t i = 0; i < N; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      s += res.loading[static_cast<std::size_t>(j)] * (x(static_cast<Eigen::Index>(i), j) - mean(j)) / sd(j);
    score[i] = s;
  }
  const double sm = rsv::mean(score), ss = stddev(score);
  for (auto& v : score) v = ss > 0 ? (v - sm) / ss : v - sm;

  std::map<CellKey, std::vector<double>> cells;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& u = ds.units[i];
    const int y = u.outcome ? *u.outcome : (y_true.empty() ? -1 : y_true[i]);
    if (y < 0) continue;
    const int d = u.treatment ? *u.treatment : (d_true.empty() ? -1 : d_true[i]);
    if (in_exp(u.sample) && d >= 0) cells[CellKey{'e', d, y}].push_back(score[i]);
    if (in_obs(u.sample)) cells[CellKey{'o', u.treatment ? *u.treatment : -1, y}].push_back(score[i]);
  }

  std::map<CellKey, std::vector<double>> kept;
  for (auto& [k, v] : cells) {
    if (v.size() < opt.min_cell)
      res.notices.push_back(std::string(error_name(ErrorCode::InsufficientCell)) + ": cell " + cell_name(k) + " has " +
                            std::to_string(v.size()) + " units (minimum " + std::to_string(opt.min_cell) + "); skipped");
    else kept.emplace(k, std::move(v));
  }
  if (kept.empty()) {
    res.notices.push_back(std::string(error_name(ErrorCode::InsufficientCell)) + ": no cell has labeled outcomes");
    return res;
  }

  double lo = 1e300, hi = -1e300, hmax = 0.0;
  for (const auto& [k, v] : kept) {
    lo = std::min(lo, *std::min_element(v.begin(), v.end()));
    hi = std::max(hi, *std::max_element(v.begin(), v.end()));
    hmax = std::max(hmax, silverman_bandwidth(v));
  }
  lo -= 3 * hmax;
  hi += 3 * hmax;
  const int G = std::max(opt.grid_points, 2);
  res.grid.resize(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) res.grid[static_cast<std::size_t>(g)] = lo + (hi - lo) * g / (G - 1);

  for (const auto& [k, v] : kept) {
    DensityCurve c;
    c.cell = cell_name(k);
    c.n = v.size();
    c.bandwidth = silverman_bandwidth(v);
    c.density = kernel_density(v, res.grid, c.bandwidth);
    res.curves.push_back(std::move(c));
  }

  // Experimental cell (d, y) against the observational cell with the same y
  // and the same d (or unrecorded d).
  Rng rng = make_rng(opt.seed, {0x57abULL});
  for (const auto& [ke, ve] : kept) {
    if (ke.s != 'e') continue;
    for (const auto& [ko, vo] : kept) {
      if (ko.s != 'o' || ko.y != ke.y || (ko.d >= 0 && ko.d != ke.d)) continue;
      CellGap gap;
      gap.exp_cell = cell_name(ke);
      gap.obs_cell = cell_name(ko);
      gap.max_gap = max_gap(ve, vo, res.grid);
      gap.ks = ks_distance(ve, vo);
      std::vector<double> pooled(ve);
      pooled.insert(pooled.end(), vo.begin(), vo.end());
      std::uniform_int_distribution<std::size_t> pick(0, pooled.size() - 1);
      double band = 0.0;
      for (int b = 0; b < opt.band_reps; ++b) {
        std::vector<double> a(ve.size()), c(vo.size());
        for (auto& v : a) v = pooled[pick(rng)];
        for (auto& v : c) v = pooled[pick(rng)];
        band += max_gap(a, c, res.grid);
      }
      gap.noise_band = opt.band_reps > 0 ? band / opt.band_reps : 0.0;
      gap.ratio = gap.noise_band > 0 ? gap.max_gap / gap.noise_band : 0.0;
      gap.flagged = gap.ratio > opt.gap_threshold;
      res.gaps.push_back(std::move(gap));
    }
  }
  if (res.gaps.empty())
    res.notices.push_back(std::string(error_name(ErrorCode::InsufficientCell)) +
                          ": no experimental/observational cell pair to compare");
  return res;
}

void write_stability_csv(const StabilityResult& r, const std::string& path, const std::string& comment) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write " + path);
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "cell,grid_point,density\n";
  char a[32], b[32];
  for (const auto& c : r.curves)
    for (std::size_t g = 0; g < r.grid.size(); ++g) {
      std::snprintf(a, sizeof(a), "%.17g", r.grid[g]);
      std::snprintf(b, sizeof(b), "%.17g", c.density[g]);
      out << '"' << c.cell << "\"," << a << ',' << b << '\n';
    }
}

json to_json(const RelevanceResult& r) {
  json e = json::array();
  for (const auto& x : r.entries)
    e.push_back(json{{"fold", x.fold}, {"target", x.target}, {"component", x.component}, {"stat", x.stat}, {"se", x.se},
                     {"ci_low", x.ci_low}, {"ci_high", x.ci_high}, {"weak", x.weak}});
  return json{{"entries", e}, {"weak", r.weak}, {"reps", r.reps}, {"failures", r.failures}};
}

json to_json(const SpecTestResult& r) {
  return json{{"rep_a", r.rep_a},   {"rep_b", r.rep_b},     {"theta_a", r.theta_a}, {"theta_b", r.theta_b},
              {"diff", r.diff},     {"diff_se", r.diff_se}, {"p_value", r.p_value}, {"reject", r.reject},
              {"reps", r.reps},     {"failures", r.failures}};
}

json to_json(const StabilityResult& r) {
  json gaps = json::array();
  for (const auto& g : r.gaps)
    gaps.push_back(json{{"exp_cell", g.exp_cell}, {"obs_cell", g.obs_cell}, {"max_gap", g.max_gap},
                        {"noise_band", g.noise_band}, {"ratio", g.ratio}, {"ks", g.ks}, {"flagged", g.flagged}});
  json cells = json::array();
  for (const auto& c : r.curves) cells.push_back(json{{"cell", c.cell}, {"n", c.n}, {"bandwidth", c.bandwidth}});
  return json{{"loading", r.loading}, {"cells", cells}, {"gaps", gaps}, {"notices", r.notices}};
}

}  // namespace rsv
