#include "rsv/moments.hpp"

#include <algorithm>

#include "rsv/error.hpp"

namespace rsv {

int exp_cell_count(CellLayout layout) { return layout == CellLayout::Instrument ? 4 : 2; }

int obs_cell_count(CellLayout layout, int k_outcomes) {
  return layout == CellLayout::Complete ? 2 * k_outcomes : k_outcomes;
}

int exp_cell(const UnitRecord& u, CellLayout layout) {
  if (!in_exp(u.sample) || !u.treatment) return -1;
  if (layout == CellLayout::Instrument) {
    if (!u.instrument) return -1;
    return 2 * *u.treatment + *u.instrument;
  }
  return *u.treatment;
}

int obs_cell(const UnitRecord& u, CellLayout layout) {
  if (!in_obs(u.sample) || !u.outcome) return -1;
  if (layout == CellLayout::Complete) {
    if (!u.treatment) return -1;
    return 2 * *u.outcome + *u.treatment;
  }
  return *u.outcome;
}

std::string event_name(Side side, int cell, CellLayout layout) {
  if (side == Side::Exp) {
    if (layout == CellLayout::Instrument)
      return "{D=" + std::to_string(cell / 2) + ",Z=" + std::to_string(cell % 2) + ",e}";
    return "{D=" + std::to_string(cell) + ",e}";
  }
  if (layout == CellLayout::Complete)
    return "{Y=" + std::to_string(cell / 2) + ",D=" + std::to_string(cell % 2) + ",o}";
  return "{Y=" + std::to_string(cell) + ",o}";
}

double MarginalCounts::prob(Side side, int cell) const {
  const auto& v = side == Side::Exp ? p_exp : p_obs;
  return v.at(static_cast<std::size_t>(cell));
}
double MarginalCounts::p_d1e() const { return p_exp.at(layout == CellLayout::Instrument ? 2 : 1) + (layout == CellLayout::Instrument ? p_exp.at(3) : 0.0); }
double MarginalCounts::p_d0e() const { return p_exp.at(0) + (layout == CellLayout::Instrument ? p_exp.at(1) : 0.0); }
double MarginalCounts::p_yo(int k) const {
  if (layout == CellLayout::Complete) return p_ydo(k, 0) + p_ydo(k, 1);
  return p_obs.at(static_cast<std::size_t>(k));
}
double MarginalCounts::p_ydo(int k, int d) const {
  if (layout != CellLayout::Complete) fail(ErrorCode::InvalidArgument, "p_ydo requires complete-case counts");
  return p_obs.at(static_cast<std::size_t>(2 * k + d));
}

MarginalCounts marginal_counts(const Dataset& ds, std::span<const std::size_t> rows, CellLayout layout) {
  if (rows.empty()) fail(ErrorCode::EmptySample, "empty fold");
  MarginalCounts c;
  c.layout = layout;
  c.k_outcomes = ds.k_outcomes;
  c.n = rows.size();
  c.p_exp.assign(static_cast<std::size_t>(exp_cell_count(layout)), 0.0);
  c.p_obs.assign(static_cast<std::size_t>(obs_cell_count(layout, ds.k_outcomes)), 0.0);
  for (std::size_t i : rows) {
    const UnitRecord& u = ds.units[i];
    int ec = exp_cell(u, layout);
    int oc = obs_cell(u, layout);
    if (ec >= 0) c.p_exp[static_cast<std::size_t>(ec)] += 1.0;
    if (oc >= 0 && oc < static_cast<int>(c.p_obs.size())) c.p_obs[static_cast<std::size_t>(oc)] += 1.0;
  }
  double n = static_cast<double>(rows.size());
  for (double& p : c.p_exp) p /= n;
  for (double& p : c.p_obs) p /= n;
  return c;
}

std::map<std::string, MarginalCounts> stratified_counts(const Dataset& ds, std::span<const std::size_t> rows,
                                                        CellLayout layout) {
  std::map<std::string, std::vector<std::size_t>> by;
  for (std::size_t i : rows) by[ds.units[i].covariate.value_or("")].push_back(i);
  std::map<std::string, MarginalCounts> out;
  for (auto& [x, r] : by) out.emplace(x, marginal_counts(ds, r, layout));
  return out;
}

int default_reference(int k_outcomes) { return k_outcomes == 2 ? 0 : k_outcomes - 1; }

std::vector<int> non_reference(int k_outcomes, int ref) {
  std::vector<int> cats;
  for (int k = 0; k < k_outcomes; ++k)
    if (k != ref) cats.push_back(k);
  return cats;
}

namespace {

void check_ref(int k_outcomes, int ref) {
  if (k_outcomes < 2) fail(ErrorCode::InvalidArgument, "k_outcomes must be at least 2");
  if (ref < 0 || ref >= k_outcomes) fail(ErrorCode::InvalidArgument, "reference category out of range");
}

// Delta^o_j = 1{cell(y_j)}/p - 1{cell(ref)}/p for each non-reference y_j.
std::vector<std::vector<MomentTerm>> outcome_terms(int k_outcomes, int ref, auto cell_of) {
  std::vector<std::vector<MomentTerm>> out;
  for (int y : non_reference(k_outcomes, ref))
    out.push_back({MomentTerm{Side::Obs, cell_of(y), 1.0}, MomentTerm{Side::Obs, cell_of(ref), -1.0}});
  return out;
}

}  // namespace

MomentSystem incomplete_system(int k_outcomes, int ref) {
  check_ref(k_outcomes, ref);
  MomentSystem s;
  s.layout = CellLayout::Standard;
  s.k_outcomes = k_outcomes;
  s.treatment = {MomentTerm{Side::Exp, 1, 1.0}, MomentTerm{Side::Exp, 0, -1.0}};
  s.outcome = outcome_terms(k_outcomes, ref, [](int y) { return y; });
  s.label = "ate";
  return s;
}

MomentSystem complete_arm_system(int k_outcomes, int ref, int d) {
  check_ref(k_outcomes, ref);
  MomentSystem s;
  s.layout = CellLayout::Complete;
  s.k_outcomes = k_outcomes;
  s.treatment = {MomentTerm{Side::Exp, d, 1.0}, MomentTerm{Side::Obs, 2 * ref + d, -1.0}};
  s.outcome = outcome_terms(k_outcomes, ref, [d](int y) { return 2 * y + d; });
  s.label = "mu(" + std::to_string(d) + ")";
  return s;
}

MomentSystem arm_system(int k_outcomes, int ref, int d) {
  check_ref(k_outcomes, ref);
  MomentSystem s;
  s.layout = CellLayout::Standard;
  s.k_outcomes = k_outcomes;
  s.treatment = {MomentTerm{Side::Exp, d, 1.0}, MomentTerm{Side::Obs, ref, -1.0}};
  s.outcome = outcome_terms(k_outcomes, ref, [](int y) { return y; });
  s.label = "mu(" + std::to_string(d) + ")";
  return s;
}

MomentSystem instrument_cell_system(int k_outcomes, int ref, int d, int z) {
  check_ref(k_outcomes, ref);
  MomentSystem s;
  s.layout = CellLayout::Instrument;
  s.k_outcomes = k_outcomes;
  s.treatment = {MomentTerm{Side::Exp, 2 * d + z, 1.0}, MomentTerm{Side::Obs, ref, -1.0}};
  s.outcome = outcome_terms(k_outcomes, ref, [](int y) { return y; });
  s.label = "alpha(" + std::to_string(d) + "," + std::to_string(z) + ")";
  return s;
}

std::vector<MomentEvent> moment_events(const MomentSystem& sys) {
  std::vector<MomentEvent> ev;
  const int J = sys.dim();
  auto slot = [&](Side side, int cell) -> MomentEvent& {
    for (auto& e : ev)
      if (e.side == side && e.cell == cell) return e;
    ev.push_back(MomentEvent{side, cell, 0.0, Eigen::VectorXd::Zero(J)});
    return ev.back();
  };
  for (const auto& t : sys.treatment) slot(t.side, t.cell).a += t.coef;
  for (int j = 0; j < J; ++j)
    for (const auto& t : sys.outcome[static_cast<std::size_t>(j)]) slot(t.side, t.cell).b(j) += t.coef;
  return ev;
}

void require_counts(const MomentSystem& sys, const MarginalCounts& counts, const std::string& context) {
  for (const auto& e : moment_events(sys)) {
    if (!(counts.prob(e.side, e.cell) > 0.0)) {
      std::string msg = "no units in event " + event_name(e.side, e.cell, sys.layout);
      if (!context.empty()) msg += " (" + context + ")";
      fail(ErrorCode::ZeroCount, msg);
    }
  }
}

VariationValues variation(const MomentSystem& sys, const UnitRecord& u, const MarginalCounts& counts) {
  require_counts(sys, counts);
  const int ec = exp_cell(u, sys.layout);
  const int oc = obs_cell(u, sys.layout);
  auto fires = [&](const MomentTerm& t) { return t.side == Side::Exp ? t.cell == ec : t.cell == oc; };
  VariationValues v;
  v.delta_o = Eigen::VectorXd::Zero(sys.dim());
  for (const auto& t : sys.treatment)
    if (fires(t)) v.delta_e += t.coef / counts.prob(t.side, t.cell);
  for (int j = 0; j < sys.dim(); ++j)
    for (const auto& t : sys.outcome[static_cast<std::size_t>(j)])
      if (fires(t)) v.delta_o(j) += t.coef / counts.prob(t.side, t.cell);
  return v;
}

VariationValues variation(const UnitRecord& u, const MarginalCounts& counts, int ref) {
  if (ref < 0) ref = default_reference(counts.k_outcomes);
  return variation(incomplete_system(counts.k_outcomes, ref), u, counts);
}

VariationValues variation_complete(const UnitRecord& u, int d, const MarginalCounts& counts, int ref) {
  if (ref < 0) ref = default_reference(counts.k_outcomes);
  return variation(complete_arm_system(counts.k_outcomes, ref, d), u, counts);
}

double sigma2_expansion(const MomentSystem& sys, const UnitRecord& u, const MarginalCounts& counts,
                        const Eigen::VectorXd& theta) {
  const int ec = exp_cell(u, sys.layout);
  const int oc = obs_cell(u, sys.layout);
  double s = 0.0;
  for (const auto& e : moment_events(sys)) {
    bool fired = e.side == Side::Exp ? e.cell == ec : e.cell == oc;
    if (!fired) continue;
    double p = counts.prob(e.side, e.cell);
    if (!(p > 0.0)) fail(ErrorCode::ZeroCount, "no units in event " + event_name(e.side, e.cell, sys.layout));
    double r = e.a - e.b.dot(theta);
    s += r * r / (p * p);
  }
  return s;
}

double sigma2_expansion(const UnitRecord& u, const MarginalCounts& counts, double theta) {
  Eigen::VectorXd t(1);
  t << theta;
  return sigma2_expansion(incomplete_system(2, 0), u, counts, t);
}

}  // namespace rsv
