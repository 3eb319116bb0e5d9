#include "rsv/quasi.hpp"

#include <cmath>

#include "rsv/error.hpp"

namespace rsv {

using nlohmann::json;

namespace {

std::string key(int a, int b) { return std::to_string(a) + "," + std::to_string(b); }

void require_binary(const Dataset& ds, Mode mode) {
  if (ds.mode != mode) fail(ErrorCode::InvalidArgument, std::string("dataset is in ") + mode_name(ds.mode) + " mode");
  if (ds.k_outcomes != 2) fail(ErrorCode::Unsupported, "quasi-experimental estimands need binary outcomes");
}

}  // namespace

Estimand iv_estimand(const Dataset& ds, const EstimateConfig& cfg) {
  require_binary(ds, Mode::Iv);
  const int ref = resolve_reference(ds, cfg);
  const double v1 = ds.outcome_value(1 - ref), v0 = ds.outcome_value(ref);
  Estimand est;
  est.name = "late";
  est.slices = {SliceDef{"", CellLayout::Instrument, std::nullopt}};
  for (int d = 0; d < 2; ++d)
    for (int z = 0; z < 2; ++z) est.targets.push_back(TargetDef{0, instrument_cell_system(2, ref, d, z), true});
  const double floor = cfg.weak_instrument_floor;
  est.assemble = [floor, v1, v0](const AssemblyInput& in) {
    double nd[2] = {0, 0}, nz[2] = {0, 0};
    for (std::size_t i : in.rows) {
      const auto& u = in.ds.units[i];
      if (!in_exp(u.sample) || !u.instrument || !u.treatment) continue;
      nz[*u.instrument] += 1;
      nd[*u.instrument] += *u.treatment;
    }
    if (nz[0] == 0 || nz[1] == 0) fail(ErrorCode::ZeroCount, "an instrument arm has no experimental units");
    const double beta[2] = {nd[0] / nz[0], nd[1] / nz[1]};
    Assembled a;
    double alpha_z[2];
    for (int z = 0; z < 2; ++z) {
      alpha_z[z] = 0.0;
      for (int d = 0; d < 2; ++d) {
        const double w = d == 1 ? beta[z] : 1.0 - beta[z];
        const auto& th = in.theta[static_cast<std::size_t>(2 * d + z)];
        if (th) {
          // Ratio output is Pr(Y = non-reference); map to the outcome scale.
          const double mean = v0 + (v1 - v0) * (*th)(0);
          a.components.emplace_back("alpha(" + key(d, z) + ")", mean);
          alpha_z[z] += w * mean;
        } else if (w > 0) {
          fail(ErrorCode::ZeroCount, "no estimate for alpha(" + key(d, z) + ")");
        }
      }
    }
    for (int z = 0; z < 2; ++z) {
      a.components.emplace_back("alpha_z(" + std::to_string(z) + ")", alpha_z[z]);
      a.components.emplace_back("beta_z(" + std::to_string(z) + ")", beta[z]);
    }
    const double denom = beta[1] - beta[0];
    if (!(std::fabs(denom) >= floor))
      fail(ErrorCode::WeakInstrument, "|beta(1) - beta(0)| = " + std::to_string(std::fabs(denom)) +
                                          " is below the floor " + std::to_string(floor));
    a.scalar = (alpha_z[1] - alpha_z[0]) / denom;
    a.vec = Eigen::VectorXd::Constant(1, a.scalar);
    return a;
  };
  return est;
}

Estimand did_estimand(const Dataset& ds, const EstimateConfig& cfg) {
  require_binary(ds, Mode::Did);
  const int ref = resolve_reference(ds, cfg);
  const double v1 = ds.outcome_value(1 - ref), v0 = ds.outcome_value(ref);
  Estimand est;
  est.name = "att";
  est.slices = {SliceDef{"period 1", CellLayout::Standard, 1}, SliceDef{"period 2", CellLayout::Standard, 2}};
  for (int t = 0; t < 2; ++t)
    for (int d = 0; d < 2; ++d) est.targets.push_back(TargetDef{t, arm_system(2, ref, d), false});
  est.assemble = [v1, v0](const AssemblyInput& in) {
    Assembled a;
    double alpha[2][2];
    for (int t = 0; t < 2; ++t)
      for (int d = 0; d < 2; ++d) {
        alpha[t][d] = v0 + (v1 - v0) * (*in.theta[static_cast<std::size_t>(2 * t + d)])(0);
        a.components.emplace_back("alpha(" + key(t + 1, d) + ")", alpha[t][d]);
      }
    a.scalar = (alpha[1][1] - alpha[0][1]) - (alpha[1][0] - alpha[0][0]);
    a.vec = Eigen::VectorXd::Constant(1, a.scalar);
    return a;
  };
  return est;
}

namespace {

bool component(const EstimateResult& r, const std::string& name, double& out) {
  for (const auto& [k, v] : r.components)
    if (k == name) {
      out = v;
      return true;
    }
  return false;
}

}  // namespace

IvResult iv_late(const Dataset& ds, const EstimateConfig& cfg) {
  IvResult r;
  r.result = run_estimand(ds, iv_estimand(ds, cfg), cfg);
  r.late = r.result.theta_hat;
  r.se = r.result.se;
  r.ci_low = r.result.ci_low;
  r.ci_high = r.result.ci_high;
  double v;
  for (int d = 0; d < 2; ++d)
    for (int z = 0; z < 2; ++z)
      if (component(r.result, "alpha(" + key(d, z) + ")", v)) r.alpha[key(d, z)] = v;
  for (int z = 0; z < 2; ++z) {
    if (component(r.result, "alpha_z(" + std::to_string(z) + ")", v)) r.alpha_z[z] = v;
    if (component(r.result, "beta_z(" + std::to_string(z) + ")", v)) r.beta_z[z] = v;
  }
  return r;
}

DidResult did_att(const Dataset& ds, const EstimateConfig& cfg) {
  DidResult r;
  r.result = run_estimand(ds, did_estimand(ds, cfg), cfg);
  r.att = r.result.theta_hat;
  r.se = r.result.se;
  r.ci_low = r.result.ci_low;
  r.ci_high = r.result.ci_high;
  double v;
  for (int t = 1; t <= 2; ++t)
    for (int d = 0; d < 2; ++d)
      if (component(r.result, "alpha(" + key(t, d) + ")", v)) r.alpha_t[key(t, d)] = v;
  return r;
}

json to_json(const IvResult& r) {
  json j = to_json(r.result);
  json bz = json::object(), az = json::object();
  for (const auto& [z, v] : r.beta_z) bz[std::to_string(z)] = v;
  for (const auto& [z, v] : r.alpha_z) az[std::to_string(z)] = v;
  j["late"] = r.late;
  j["alpha"] = r.alpha;
  j["alpha_z"] = az;
  j["beta_z"] = bz;
  return j;
}

json to_json(const DidResult& r) {
  json j = to_json(r.result);
  j["att"] = r.att;
  j["alpha_t"] = r.alpha_t;
  return j;
}

}  // namespace rsv
