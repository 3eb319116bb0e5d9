#include "rsv/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>

#include "rsv/error.hpp"
#include "rsv/rng.hpp"
#include "rsv/stats.hpp"

namespace rsv {

using nlohmann::json;

const char* representation_name(RepresentationChoice c) {
  switch (c) {
    case RepresentationChoice::Learned: return "learned";
    case RepresentationChoice::PredY: return "pred_y";
    case RepresentationChoice::FirstFeature: return "first_feature";
    case RepresentationChoice::Custom: return "custom";
  }
  return "?";
}

RepresentationChoice parse_representation(const std::string& s) {
  if (s == "learned") return RepresentationChoice::Learned;
  if (s == "pred_y") return RepresentationChoice::PredY;
  if (s == "first_feature") return RepresentationChoice::FirstFeature;
  if (s == "custom") return RepresentationChoice::Custom;
  fail(ErrorCode::InvalidArgument, "unknown representation '" + s + "'");
}

json to_json(const EstimateConfig& c) {
  return json{{"n_folds", c.n_folds},
              {"seed", c.seed},
              {"predictor", to_json(c.predictor)},
              {"sigma_floor_factor", c.representation.sigma_floor_factor},
              {"ridge_condition", c.representation.ridge_condition},
              {"singular_condition", c.representation.singular_condition},
              {"representation", representation_name(c.representation_choice)},
              {"reference", c.reference},
              {"alpha", c.alpha},
              {"bootstrap", c.bootstrap},
              {"cluster_bootstrap", c.cluster_bootstrap},
              {"whole_pipeline_bootstrap", c.whole_pipeline_bootstrap},
              {"irrelevance_factor", c.irrelevance_factor},
              {"degenerate_share", c.degenerate_share},
              {"stratify", c.stratify},
              {"weak_instrument_floor", c.weak_instrument_floor}};
}

Eigen::MatrixXd canonical_representation(const Eigen::MatrixXd& h) {
  Eigen::MatrixXd out(h.rows(), h.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    Eigen::Index arg = 0;
    double m = 0.0;
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      if (std::fabs(h(i, j)) > m) {
        m = std::fabs(h(i, j));
        arg = i;
      }
    if (!(m > 0.0) || !std::isfinite(m)) {
      out.col(j) = h.col(j);
      continue;
    }
    const double scale = h(arg, j) > 0 ? m : -m;
    for (Eigen::Index i = 0; i < h.rows(); ++i) out(i, j) = static_cast<double>(static_cast<float>(h(i, j) / scale));
  }
  return out;
}

namespace {

// Per-cell event counts and representation sums over a multiset of units.
struct CellSums {
  std::vector<double> n_exp, n_obs;
  std::vector<Eigen::VectorXd> h_exp, h_obs;
  Eigen::VectorXd h_sum, h_sq;
  std::size_t n = 0;
};

CellSums accumulate(const MomentSystem& sys, std::span<const int> exp_cell, std::span<const int> obs_cell,
                    const Eigen::MatrixXd& h, std::span<const int> picks) {
  const int J = sys.dim();
  CellSums s;
  const auto ne = static_cast<std::size_t>(exp_cell_count(sys.layout));
  const auto no = static_cast<std::size_t>(obs_cell_count(sys.layout, sys.k_outcomes));
  s.n_exp.assign(ne, 0.0);
  s.n_obs.assign(no, 0.0);
  s.h_exp.assign(ne, Eigen::VectorXd::Zero(J));
  s.h_obs.assign(no, Eigen::VectorXd::Zero(J));
  s.h_sum = Eigen::VectorXd::Zero(J);
  s.h_sq = Eigen::VectorXd::Zero(J);
  s.n = picks.size();
  if (J == 1) {
    double hs = 0.0, hq = 0.0;
    for (int i : picks) {
      const double v = h(i, 0);
      hs += v;
      hq += v * v;
      const int ec = exp_cell[static_cast<std::size_t>(i)], oc = obs_cell[static_cast<std::size_t>(i)];
      if (ec >= 0) {
        s.n_exp[static_cast<std::size_t>(ec)] += 1.0;
        s.h_exp[static_cast<std::size_t>(ec)](0) += v;
      }
      if (oc >= 0 && static_cast<std::size_t>(oc) < no) {
        s.n_obs[static_cast<std::size_t>(oc)] += 1.0;
        s.h_obs[static_cast<std::size_t>(oc)](0) += v;
      }
    }
    s.h_sum(0) = hs;
    s.h_sq(0) = hq;
    return s;
  }
  for (int i : picks) {
    auto row = h.row(i).transpose();
    s.h_sum += row;
    s.h_sq += row.cwiseProduct(row);
    const int ec = exp_cell[static_cast<std::size_t>(i)], oc = obs_cell[static_cast<std::size_t>(i)];
    if (ec >= 0) {
      s.n_exp[static_cast<std::size_t>(ec)] += 1.0;
      s.h_exp[static_cast<std::size_t>(ec)] += row;
    }
    if (oc >= 0 && static_cast<std::size_t>(oc) < no) {
      s.n_obs[static_cast<std::size_t>(oc)] += 1.0;
      s.h_obs[static_cast<std::size_t>(oc)] += row;
    }
  }
  return s;
}

RatioStats moments_from_sums(const MomentSystem& sys, const std::vector<MomentEvent>& events, const CellSums& s) {
  const int J = sys.dim();
  RatioStats st;
  st.n = s.n;
  if (s.n == 0) fail(ErrorCode::ZeroCount, "empty evaluation fold");
  const double n = static_cast<double>(s.n);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(J, J);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(J);
  for (const auto& e : events) {
    const double cnt = e.side == Side::Exp ? s.n_exp[static_cast<std::size_t>(e.cell)] : s.n_obs[static_cast<std::size_t>(e.cell)];
    const double p = cnt / n;
    if (!(p > 0.0)) fail(ErrorCode::ZeroCount, "no units in event " + event_name(e.side, e.cell, sys.layout));
    const Eigen::VectorXd& hs = e.side == Side::Exp ? s.h_exp[static_cast<std::size_t>(e.cell)] : s.h_obs[static_cast<std::size_t>(e.cell)];
    v += (e.a / p) * hs;
    M += (hs / p) * e.b.transpose();
  }
  st.gram = M / n;
  st.cross = v / n;
  st.smallest = J == 1 ? std::fabs(st.gram(0, 0))
                       : Eigen::JacobiSVD<Eigen::MatrixXd>(st.gram).singularValues().minCoeff();
  return st;
}

double irrelevance_tolerance(const CellSums& s, const std::vector<MomentEvent>& events, double factor) {
  const double n = static_cast<double>(s.n);
  const int J = static_cast<int>(s.h_sum.size());
  Eigen::VectorXd d_mean = Eigen::VectorXd::Zero(J), d_sq = Eigen::VectorXd::Zero(J);
  for (const auto& e : events) {
    const double cnt = e.side == Side::Exp ? s.n_exp[static_cast<std::size_t>(e.cell)] : s.n_obs[static_cast<std::size_t>(e.cell)];
    const double p = cnt / n;
    d_mean += e.b * (cnt / p / n);
    d_sq += e.b.cwiseProduct(e.b) * (cnt / (p * p) / n);
  }
  const Eigen::VectorXd h_mean = s.h_sum / n;
  const double var_h = std::max(0.0, (s.h_sq / n - h_mean.cwiseProduct(h_mean)).sum());
  const double var_d = std::max(0.0, (d_sq - d_mean.cwiseProduct(d_mean)).sum());
  const double rms_h = std::sqrt(s.h_sq.sum() / n), rms_d = std::sqrt(d_sq.sum());
  return std::max(factor * std::sqrt(var_h) * std::sqrt(var_d) / std::sqrt(n), 1e-10 * rms_h * rms_d);
}

Eigen::VectorXd solve_ratio(const RatioStats& st) {
  if (st.gram.rows() == 1) {
    Eigen::VectorXd t(1);
    t(0) = st.cross(0) / st.gram(0, 0);
    return t;
  }
  return st.gram.partialPivLu().solve(st.cross);
}

RatioStats ratio_core(const MomentSystem& sys, const std::vector<MomentEvent>& events, std::span<const int> exp_cell,
                      std::span<const int> obs_cell, const Eigen::MatrixXd& h, std::span<const int> picks,
                      double factor) {
  CellSums s = accumulate(sys, exp_cell, obs_cell, h, picks);
  RatioStats st = moments_from_sums(sys, events, s);
  st.tolerance = irrelevance_tolerance(s, events, factor);
  return st;
}

void check_relevant(const RatioStats& st) {
  if (!(st.smallest > st.tolerance) || !std::isfinite(st.smallest)) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "E_n{H Delta^o} = %.6g is below the tolerance %.6g", st.smallest, st.tolerance);
    fail(ErrorCode::IrrelevantRSV, buf);
  }
}

std::vector<int> identity(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

Eigen::VectorXd ratio_estimate(const Dataset& ds, std::span<const std::size_t> rows, const MomentSystem& sys,
                               const Eigen::MatrixXd& h, RatioStats* stats, double irrelevance_factor) {
  if (h.rows() != static_cast<Eigen::Index>(rows.size()) || h.cols() != sys.dim())
    fail(ErrorCode::DimMismatch, "representation shape does not match the evaluation rows");
  std::vector<int> ec(rows.size()), oc(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ec[r] = exp_cell(ds.units[rows[r]], sys.layout);
    oc[r] = obs_cell(ds.units[rows[r]], sys.layout);
  }
  const auto picks = identity(rows.size());
  RatioStats st = ratio_core(sys, moment_events(sys), ec, oc, canonical_representation(h), picks, irrelevance_factor);
  if (stats) *stats = st;
  check_relevant(st);
  return solve_ratio(st);
}

AnalyticVariance analytic_variance(const Dataset& ds, std::span<const std::size_t> rows, const Eigen::VectorXd& h,
                                   double theta) {
  if (ds.k_outcomes != 2) fail(ErrorCode::Unsupported, "analytic variance covers binary outcomes only");
  if (h.size() != static_cast<Eigen::Index>(rows.size())) fail(ErrorCode::DimMismatch, "h length differs from rows");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd B(n, 8);
  for (Eigen::Index r = 0; r < n; ++r) {
    const UnitRecord& u = ds.units[rows[static_cast<std::size_t>(r)]];
    const int ec = exp_cell(u, CellLayout::Standard), oc = obs_cell(u, CellLayout::Standard);
    const double ind[4] = {ec == 1 ? 1.0 : 0.0, ec == 0 ? 1.0 : 0.0, oc == 1 ? 1.0 : 0.0, oc == 0 ? 1.0 : 0.0};
    for (int k = 0; k < 4; ++k) {
      B(r, k) = ind[k] * h(r);
      B(r, 4 + k) = ind[k];
    }
  }
  AnalyticVariance av;
  av.n = static_cast<std::size_t>(n);
  av.b_moments = B.colwise().mean().transpose();
  const Eigen::VectorXd& m = av.b_moments;
  for (int k = 4; k < 8; ++k)
    if (!(m(k) > 0.0)) fail(ErrorCode::ZeroCount, "empty event in analytic variance");
  Eigen::MatrixXd centered = B.rowwise() - m.transpose();
  av.sigma_mat = centered.transpose() * centered / static_cast<double>(n);
  av.v_vec.resize(8);
  av.v_vec << 1.0 / m(4), -1.0 / m(5), -theta / m(6), theta / m(7), -m(0) / (m(4) * m(4)), m(1) / (m(5) * m(5)),
      theta * m(2) / (m(6) * m(6)), -theta * m(3) / (m(7) * m(7));
  av.denominator = m(2) / m(6) - m(3) / m(7);
  const double V = av.v_vec.dot(av.sigma_mat * av.v_vec);
  av.variance = std::max(0.0, V) / (av.denominator * av.denominator);

  double known = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    double de = B(r, 4) / m(4) - B(r, 5) / m(5);
    double dd = B(r, 6) / m(6) - B(r, 7) / m(7);
    double res = (de - theta * dd) * h(r);
    known += res * res;
  }
  av.variance_known = known / static_cast<double>(n) / (av.denominator * av.denominator);
  return av;
}

// ===== cross-fitting =====

namespace {

std::string with_context(const Error& e, const std::string& ctx) { return ctx + ": " + e.message(); }

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  Rng r = make_rng(seed, ids);
  return r();
}

bool in_slice(const UnitRecord& u, const SliceDef& s) { return !s.period || (u.period && *u.period == *s.period); }

}  // namespace

CrossFit CrossFit::fit(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg) {
  CrossFit cf;
  cf.ds_ = &ds;
  cf.est_ = est;
  cf.cfg_ = cfg;
  cf.folds_ = split_folds(ds, cfg.n_folds, cfg.seed);

  const std::size_t N = ds.units.size();
  cf.stratum_of_row_.assign(N, 0);
  if (cfg.stratify && ds.has_covariate()) {
    std::set<std::string> xs;
    for (const auto& u : ds.units) xs.insert(u.covariate.value_or(""));
    cf.strata_.assign(xs.begin(), xs.end());
    for (std::size_t i = 0; i < N; ++i) {
      auto it = std::lower_bound(cf.strata_.begin(), cf.strata_.end(), ds.units[i].covariate.value_or(""));
      cf.stratum_of_row_[i] = static_cast<std::size_t>(it - cf.strata_.begin());
    }
  } else {
    cf.strata_ = {""};
  }

  // Resampling groups per fold.
  std::vector<std::vector<std::size_t>> groups;
  if (cfg.cluster_bootstrap) {
    groups = unit_groups(ds);
  } else {
    Dataset keyed;
    keyed.units.reserve(N);
    for (const auto& u : ds.units) {
      UnitRecord k;
      k.unit_key = u.unit_key;
      keyed.units.push_back(std::move(k));
    }
    groups = unit_groups(keyed);
  }
  cf.fold_groups_.assign(static_cast<std::size_t>(cfg.n_folds), {});
  for (auto& g : groups) cf.fold_groups_[static_cast<std::size_t>(cf.folds_[g.front()])].push_back(std::move(g));

  const std::size_t S = cf.strata_.size(), T = est.targets.size();
  cf.absent_.assign(S, std::vector<char>(T, 0));
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t t = 0; t < T; ++t) {
      const auto& tgt = est.targets[t];
      if (!tgt.optional) continue;
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < N; ++i)
        if (cf.stratum_of_row_[i] == s && in_slice(ds.units[i], est.slices[static_cast<std::size_t>(tgt.slice)])) rows.push_back(i);
      if (rows.empty()) {
        cf.absent_[s][t] = 1;
        continue;
      }
      MarginalCounts c = marginal_counts(ds, rows, tgt.system.layout);
      for (const auto& e : moment_events(tgt.system))
        if (!(c.prob(e.side, e.cell) > 0.0)) cf.absent_[s][t] = 1;
    }
  }

  for (int fold = 0; fold < cfg.n_folds; ++fold) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t k = 0; k < est.slices.size(); ++k) {
        const SliceDef& slice = est.slices[k];
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < N; ++i) {
          if (cf.stratum_of_row_[i] != s || !in_slice(ds.units[i], slice)) continue;
          (cf.folds_[i] == fold ? test : train).push_back(i);
        }
        std::vector<std::size_t> targets;
        for (std::size_t t = 0; t < T; ++t)
          if (est.targets[t].slice == static_cast<int>(k) && !cf.absent_[s][t]) targets.push_back(t);
        if (targets.empty()) continue;

        std::string ctx = "fold " + std::to_string(fold);
        if (S > 1) ctx += ", stratum '" + cf.strata_[s] + "'";
        if (!slice.name.empty()) ctx += ", " + slice.name;
        if (test.empty()) fail(ErrorCode::ZeroCount, ctx + ": empty test fold");

        std::shared_ptr<const PredictorSet> ps;
        PredictorOptions popt = cfg.predictor;
        popt.seed = derive_seed(cfg.predictor.seed ^ cfg.seed, {static_cast<std::uint64_t>(fold), s, k});
        try {
          if (cfg.representation_choice == RepresentationChoice::Learned ||
              cfg.representation_choice == RepresentationChoice::PredY)
            ps = std::make_shared<PredictorSet>(fit_predictors(ds, train, slice.layout, popt));
        } catch (const Error& e) {
          throw Error(e.code(), with_context(e, ctx));
        }

        for (std::size_t t : targets) {
          const auto& sys = est.targets[t].system;
          FoldPart part;
          part.fold = fold;
          part.stratum = s;
          part.target = static_cast<int>(t);
          part.rows = test;
          part.predictors = ps;
          for (std::size_t i : test) {
            part.exp_cell.push_back(exp_cell(ds.units[i], sys.layout));
            part.obs_cell.push_back(obs_cell(ds.units[i], sys.layout));
          }
          try {
            switch (cfg.representation_choice) {
              case RepresentationChoice::Learned: {
                auto rep = std::make_shared<Representation>(learn_representation(ds, train, ps, sys, cfg.representation));
                part.h_raw = rep->evaluate(ds, test);
                part.rep = std::move(rep);
                break;
              }
              case RepresentationChoice::PredY:
                part.h_raw = naive_representation(NaiveKind::PredY, ds, test, sys, ps.get());
                break;
              case RepresentationChoice::FirstFeature:
                part.h_raw = naive_representation(NaiveKind::FirstFeature, ds, test, sys);
                break;
              case RepresentationChoice::Custom:
                part.h_raw = naive_representation(NaiveKind::Custom, ds, test, sys, nullptr, cfg.custom_h);
                break;
            }
          } catch (const Error& e) {
            throw Error(e.code(), with_context(e, ctx + ", " + sys.label));
          }
          part.h = canonical_representation(part.h_raw);
          cf.parts_.push_back(std::move(part));
        }
      }
    }
  }

  cf.local_.reserve(cf.parts_.size());
  for (const auto& p : cf.parts_) {
    std::vector<int> loc(N, -1);
    for (std::size_t r = 0; r < p.rows.size(); ++r) loc[p.rows[r]] = static_cast<int>(r);
    cf.local_.push_back(std::move(loc));
  }
  return cf;
}

Eigen::VectorXd CrossFit::part_theta(const FoldPart& part, std::span<const int> picks, RatioStats* stats) const {
  const auto& sys = est_.targets[static_cast<std::size_t>(part.target)].system;
  RatioStats st = ratio_core(sys, moment_events(sys), part.exp_cell, part.obs_cell, part.h, picks, cfg_.irrelevance_factor);
  if (stats) *stats = st;
  check_relevant(st);
  return solve_ratio(st);
}

RatioStats CrossFit::part_stats_raw(const FoldPart& part, std::span<const int> picks) const {
  const auto& sys = est_.targets[static_cast<std::size_t>(part.target)].system;
  return ratio_core(sys, moment_events(sys), part.exp_cell, part.obs_cell, part.h_raw, picks, cfg_.irrelevance_factor);
}

std::vector<std::vector<int>> CrossFit::identity_picks() const {
  std::vector<std::vector<int>> picks;
  for (const auto& p : parts_) picks.push_back(identity(p.rows.size()));
  return picks;
}

std::vector<std::vector<int>> CrossFit::resample_picks(std::uint64_t b, std::vector<std::size_t>* all_rows) const {
  Rng rng = make_rng(cfg_.seed, {0xb0075ULL, b});
  std::vector<std::size_t> drawn;
  drawn.reserve(ds_->units.size());
  for (const auto& groups : fold_groups_) {
    if (groups.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
    for (std::size_t k = 0; k < groups.size(); ++k)
      for (std::size_t i : groups[pick(rng)]) drawn.push_back(i);
  }
  std::vector<std::vector<int>> picks(parts_.size());
  for (std::size_t p = 0; p < parts_.size(); ++p) {
    const auto& loc = local_[p];
    picks[p].reserve(parts_[p].rows.size());
    for (std::size_t i : drawn)
      if (loc[i] >= 0) picks[p].push_back(loc[i]);
  }
  if (all_rows) *all_rows = std::move(drawn);
  return picks;
}

namespace {

struct StratumResult {
  Assembled a;
  double weight = 0.0;
  std::size_t n = 0;
};

}  // namespace

Assembled CrossFit::assemble(const std::vector<std::vector<int>>& picks, std::span<const std::size_t> all_rows,
                             std::vector<Eigen::VectorXd>* part_thetas) const {
  const std::size_t S = strata_.size(), T = est_.targets.size();
  std::vector<std::vector<Eigen::VectorXd>> sum(S, std::vector<Eigen::VectorXd>(T));
  std::vector<std::vector<double>> weight(S, std::vector<double>(T, 0.0));
  if (part_thetas) part_thetas->assign(parts_.size(), Eigen::VectorXd());
  for (std::size_t p = 0; p < parts_.size(); ++p) {
    const auto& part = parts_[p];
    if (picks[p].empty()) continue;
    Eigen::VectorXd th = part_theta(part, picks[p]);
    if (part_thetas) (*part_thetas)[p] = th;
    const double w = static_cast<double>(picks[p].size());
    auto& acc = sum[part.stratum][static_cast<std::size_t>(part.target)];
    if (acc.size() == 0) acc = Eigen::VectorXd::Zero(th.size());
    acc += w * th;
    weight[part.stratum][static_cast<std::size_t>(part.target)] += w;
  }

  std::vector<std::vector<std::size_t>> rows_by(S);
  std::vector<double> exp_n(S, 0.0);
  for (std::size_t i : all_rows) {
    const std::size_t s = stratum_of_row_[i];
    rows_by[s].push_back(i);
    if (in_exp(ds_->units[i].sample) && !(ds_->units[i].period && *ds_->units[i].period == 2)) exp_n[s] += 1.0;
  }
  const double exp_total = std::accumulate(exp_n.begin(), exp_n.end(), 0.0);

  Assembled out;
  std::vector<StratumResult> per;
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<std::optional<Eigen::VectorXd>> theta(T);
    for (std::size_t t = 0; t < T; ++t) {
      if (weight[s][t] > 0) theta[t] = sum[s][t] / weight[s][t];
      else if (!absent_[s][t])
        fail(ErrorCode::ZeroCount, "no test units for " + est_.targets[t].system.label +
                                       (S > 1 ? " in stratum '" + strata_[s] + "'" : std::string()));
    }
    AssemblyInput in{*ds_, rows_by[s], theta};
    StratumResult r;
    r.a = est_.assemble(in);
    r.weight = S == 1 ? 1.0 : (exp_total > 0 ? exp_n[s] / exp_total : 0.0);
    r.n = rows_by[s].size();
    per.push_back(std::move(r));
  }
  if (S == 1) return per.front().a;

  out.scalar = 0.0;
  out.vec = Eigen::VectorXd::Zero(per.front().a.vec.size());
  for (const auto& r : per) {
    out.scalar += r.weight * r.a.scalar;
    out.vec += r.weight * r.a.vec;
  }
  for (std::size_t s = 0; s < S; ++s) {
    out.components.emplace_back("theta[x=" + strata_[s] + "]", per[s].a.scalar);
    out.components.emplace_back("weight[x=" + strata_[s] + "]", per[s].weight);
  }
  return out;
}

Assembled CrossFit::point() const {
  std::vector<std::size_t> all(ds_->units.size());
  std::iota(all.begin(), all.end(), 0);
  return assemble(identity_picks(), all);
}

Assembled CrossFit::replicate(std::uint64_t b) const {
  std::vector<std::size_t> rows;
  auto picks = resample_picks(b, &rows);
  return assemble(picks, rows);
}

BootstrapSummary bootstrap_ci(const CrossFit& cf, double theta_hat, const EstimateConfig& cfg) {
  BootstrapSummary bs;
  bs.reps = cfg.bootstrap;
  for (int b = 0; b < cfg.bootstrap; ++b) {
    try {
      bs.draws.push_back(cf.replicate(static_cast<std::uint64_t>(b)).scalar);
    } catch (const Error&) {
      ++bs.failures;
    }
  }
  bs.unreliable = bs.failures > cfg.degenerate_share * cfg.bootstrap;
  if (bs.draws.size() < 2)
    fail(ErrorCode::DegenerateBootstrap, std::to_string(bs.failures) + " of " + std::to_string(cfg.bootstrap) +
                                             " bootstrap replicates failed");
  bs.se = stddev(bs.draws);
  const double z = two_sided_z(cfg.alpha);
  bs.ci_low = theta_hat - z * bs.se;
  bs.ci_high = theta_hat + z * bs.se;
  return bs;
}

double reduce_ate(const Eigen::VectorXd& theta_vec, const std::vector<double>& values, int ref) {
  const auto cats = non_reference(static_cast<int>(values.size()), ref);
  if (static_cast<std::size_t>(theta_vec.size()) != cats.size())
    fail(ErrorCode::DimMismatch, "theta vector length differs from K-1");
  double s = 0.0;
  for (std::size_t j = 0; j < cats.size(); ++j)
    s += (values[static_cast<std::size_t>(cats[j])] - values[static_cast<std::size_t>(ref)]) * theta_vec(static_cast<Eigen::Index>(j));
  return s;
}

int resolve_reference(const Dataset& ds, const EstimateConfig& cfg) {
  int ref = cfg.reference >= 0 ? cfg.reference : default_reference(ds.k_outcomes);
  if (ref >= ds.k_outcomes) fail(ErrorCode::InvalidArgument, "reference category out of range");
  return ref;
}

namespace {

std::string category_label(const Dataset& ds, int k) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", ds.outcome_value(k));
  return buf;
}

}  // namespace

Estimand ate_estimand(const Dataset& ds, const EstimateConfig& cfg) {
  const int K = ds.k_outcomes;
  const int ref = resolve_reference(ds, cfg);
  const auto values = ds.value_map();
  const auto cats = non_reference(K, ref);
  std::vector<std::string> labels;
  for (int k = 0; k < K; ++k) labels.push_back(category_label(ds, k));
  Estimand est;
  if (ds.mode == Mode::Incomplete) {
    est.name = "ate_incomplete";
    est.slices = {SliceDef{"", CellLayout::Standard, std::nullopt}};
    est.targets = {TargetDef{0, incomplete_system(K, ref), false}};
    est.assemble = [values, ref, cats, labels](const AssemblyInput& in) {
      Assembled a;
      a.vec = *in.theta[0];
      a.scalar = reduce_ate(a.vec, values, ref);
      if (cats.size() > 1)
        for (std::size_t j = 0; j < cats.size(); ++j)
          a.components.emplace_back("theta[y=" + labels[static_cast<std::size_t>(cats[j])] + "]", a.vec(static_cast<Eigen::Index>(j)));
      return a;
    };
  } else if (ds.mode == Mode::Complete) {
    est.name = "ate_complete";
    est.slices = {SliceDef{"", CellLayout::Complete, std::nullopt}};
    est.targets = {TargetDef{0, complete_arm_system(K, ref, 0), false}, TargetDef{0, complete_arm_system(K, ref, 1), false}};
    est.assemble = [values, ref, cats, labels](const AssemblyInput& in) {
      Assembled a;
      a.vec = *in.theta[1] - *in.theta[0];
      a.scalar = reduce_ate(a.vec, values, ref);
      for (int d = 0; d < 2; ++d)
        for (std::size_t j = 0; j < cats.size(); ++j)
          a.components.emplace_back("mu(" + std::to_string(d) + ")[y=" + labels[static_cast<std::size_t>(cats[j])] + "]",
                                    (*in.theta[static_cast<std::size_t>(d)])(static_cast<Eigen::Index>(j)));
      return a;
    };
  } else {
    fail(ErrorCode::InvalidArgument, std::string("estimate_ate handles incomplete/complete modes, got ") + mode_name(ds.mode));
  }
  return est;
}

namespace {

Dataset resample_dataset(const Dataset& ds, Rng& rng) {
  auto groups = unit_groups(ds);
  Dataset out;
  out.k_outcomes = ds.k_outcomes;
  out.rsv_dim = ds.rsv_dim;
  out.mode = ds.mode;
  out.outcome_values = ds.outcome_values;
  std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[pick(rng)];
    for (std::size_t i : g) {
      UnitRecord u = ds.units[i];
      if (u.cluster) u.cluster = "b" + std::to_string(k) + ":" + *u.cluster;
      if (u.unit_key >= 0) u.unit_key = static_cast<long>(k);
      out.units.push_back(std::move(u));
    }
  }
  return out;
}

json n_by_tag(const Dataset& ds) {
  std::size_t e = 0, o = 0, b = 0;
  for (const auto& u : ds.units) {
    if (u.sample == SampleTag::Exp) ++e;
    else if (u.sample == SampleTag::Obs) ++o;
    else ++b;
  }
  return json{{"e", e}, {"o", o}, {"eo", b}};
}

}  // namespace

EstimateResult run_estimand(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg) {
  EstimateResult res;
  res.estimand = est.name;
  CrossFit cf = CrossFit::fit(ds, est, cfg);
  std::vector<std::size_t> all(ds.units.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<Eigen::VectorXd> part_thetas;
  Assembled a = cf.assemble(cf.identity_picks(), all, &part_thetas);
  res.theta_hat = a.scalar;
  res.theta_vec = a.vec;
  res.components = a.components;

  // Per-stratum breakdown.
  if (cf.strata().size() > 1) {
    for (std::size_t s = 0; s < cf.strata().size(); ++s) {
      StratumEstimate se;
      se.x = cf.strata()[s];
      for (const auto& [name, v] : a.components) {
        if (name == "theta[x=" + se.x + "]") se.theta = v;
        if (name == "weight[x=" + se.x + "]") se.weight = v;
      }
      for (std::size_t i = 0; i < ds.units.size(); ++i)
        if (ds.units[i].covariate.value_or("") == se.x) ++se.n;
      res.per_stratum.push_back(std::move(se));
    }
  }

  // Fold-by-fold estimates.
  for (int f = 0; f < cfg.n_folds; ++f) {
    auto picks = cf.identity_picks();
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < cf.parts().size(); ++p)
      if (cf.parts()[p].fold != f) picks[p].clear();
    for (std::size_t i = 0; i < ds.units.size(); ++i)
      if (cf.folds()[i] == f) rows.push_back(i);
    try {
      res.fold_theta.push_back(cf.assemble(picks, rows).scalar);
    } catch (const Error&) {
      res.fold_theta.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }

  // Analytic variance: binary incomplete, one stratum, learned or fixed scalar H.
  const bool analytic_ok = est.name == "ate_incomplete" && ds.k_outcomes == 2 && cf.strata().size() == 1 &&
                           est.targets[0].system.outcome.size() == 1 && est.targets[0].system.outcome[0][0].cell == 1;
  if (analytic_ok) {
    double var = 0.0, var_known = 0.0, n_total = 0.0;
    for (const auto& p : cf.parts()) n_total += static_cast<double>(p.rows.size());
    for (std::size_t p = 0; p < cf.parts().size(); ++p) {
      const auto& part = cf.parts()[p];
      AnalyticVariance av = analytic_variance(ds, part.rows, part.h.col(0), part_thetas[p](0));
      const double w = static_cast<double>(part.rows.size()) / n_total;
      var += w * w * av.variance / static_cast<double>(av.n);
      var_known += w * w * av.variance_known / static_cast<double>(av.n);
    }
    res.se_analytic = std::sqrt(var);
    res.se_analytic_known = std::sqrt(var_known);
  }

  const double z = two_sided_z(cfg.alpha);
  if (cfg.bootstrap > 0) {
    if (cfg.whole_pipeline_bootstrap) {
      std::vector<double> draws;
      int failures = 0;
      for (int b = 0; b < cfg.bootstrap; ++b) {
        Rng rng = make_rng(cfg.seed, {0x3401eULL, static_cast<std::uint64_t>(b)});
        Dataset boot = resample_dataset(ds, rng);
        EstimateConfig inner = cfg;
        inner.bootstrap = 0;
        inner.seed = rng();
        try {
          draws.push_back(CrossFit::fit(boot, est.name.rfind("ate_", 0) == 0 ? ate_estimand(boot, inner) : est, inner).point().scalar);
        } catch (const Error&) {
          ++failures;
        }
      }
      if (draws.size() < 2) fail(ErrorCode::DegenerateBootstrap, "whole-pipeline bootstrap failed");
      res.se = stddev(draws);
      res.bootstrap_reps = cfg.bootstrap;
      res.bootstrap_failures = failures;
      res.bootstrap_unreliable = failures > cfg.degenerate_share * cfg.bootstrap;
      res.se_method = "bootstrap_whole_pipeline";
    } else {
      BootstrapSummary bs = bootstrap_ci(cf, res.theta_hat, cfg);
      res.se = bs.se;
      res.bootstrap_reps = bs.reps;
      res.bootstrap_failures = bs.failures;
      res.bootstrap_unreliable = bs.unreliable;
      res.se_method = "bootstrap";
    }
    if (res.bootstrap_unreliable)
      res.warnings.push_back(std::string(error_name(ErrorCode::DegenerateBootstrap)) + ": " +
                             std::to_string(res.bootstrap_failures) + " of " + std::to_string(res.bootstrap_reps) +
                             " replicates failed; confidence interval unreliable");
  } else if (res.se_analytic) {
    res.se = *res.se_analytic;
    res.se_method = "analytic";
  } else {
    res.se = 0.0;
    res.se_method = "none";
  }
  res.ci_low = res.theta_hat - z * res.se;
  res.ci_high = res.theta_hat + z * res.se;

  const int ref = ds.k_outcomes >= 2 ? resolve_reference(ds, cfg) : 0;
  res.meta = json{{"seed", cfg.seed},
                  {"folds", cfg.n_folds},
                  {"predictor", predictor_name(cfg.predictor.kind)},
                  {"predictor_options", to_json(cfg.predictor)},
                  {"predictor_defaults", {{"logistic_lambda", "ridge_factor * n"},
                                          {"knn_k", "ceil(sqrt(n))"},
                                          {"stump_trees", cfg.predictor.n_trees},
                                          {"stump_depth", 2}}},
                  {"representation", representation_name(cfg.representation_choice)},
                  {"n_by_tag", n_by_tag(ds)},
                  {"n", ds.units.size()},
                  {"mode", mode_name(ds.mode)},
                  {"k_outcomes", ds.k_outcomes},
                  {"reference", ref},
                  {"value_map", ds.value_map()},
                  {"strata", cf.strata()},
                  {"config", to_json(cfg)}};
  return res;
}

EstimateResult estimate_ate(const Dataset& ds, const EstimateConfig& cfg) {
  return run_estimand(ds, ate_estimand(ds, cfg), cfg);
}

json to_json(const EstimateResult& r) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json comps = json::object();
  for (const auto& [k, v] : r.components) comps[k] = v;
  json strata = json::array();
  for (const auto& s : r.per_stratum)
    strata.push_back(json{{"x", s.x}, {"theta", s.theta}, {"n", s.n}, {"weight", s.weight}});
  json j{{"estimand", r.estimand},
         {"theta_hat", r.theta_hat},
         {"theta_vec", vec(r.theta_vec)},
         {"se", r.se},
         {"ci_low", r.ci_low},
         {"ci_high", r.ci_high},
         {"se_method", r.se_method},
         {"se_analytic", r.se_analytic ? json(*r.se_analytic) : json(nullptr)},
         {"se_analytic_known_counts", r.se_analytic_known ? json(*r.se_analytic_known) : json(nullptr)},
         {"per_stratum", strata},
         {"components", comps},
         {"fold_theta", r.fold_theta},
         {"bootstrap", {{"reps", r.bootstrap_reps}, {"failures", r.bootstrap_failures}, {"unreliable", r.bootstrap_unreliable}}},
         {"bias_bound", r.bias_bound ? json(*r.bias_bound) : json(nullptr)},
         {"warnings", r.warnings},
         {"meta", r.meta}};
  return j;
}

}  // namespace rsv
