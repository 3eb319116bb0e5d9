#include "rsv/baseline.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "rsv/error.hpp"

namespace rsv {

OutcomePredictor expected_outcome(const PredictorSet& ps, const Dataset& ds) {
  const std::vector<double> values = ds.value_map();
  if (ps.layout != CellLayout::Standard) fail(ErrorCode::Unsupported, "surrogate estimate needs a standard-layout pred_Y");
  return [&ps, values](const UnitRecord& u) {
    const Prediction p = ps.predict(u);
    double e = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) e += values[k] * p.obs_cells[k];
    return e;
  };
}

OutcomePredictor frequency_predictor(const Dataset& ds) {
  std::map<std::vector<double>, std::pair<double, double>> cells;
  double total = 0.0, count = 0.0;
  for (const auto& u : ds.units) {
    if (!in_obs(u.sample) || !u.outcome) continue;
    const double y = ds.outcome_value(*u.outcome);
    auto& c = cells[u.rsv];
    c.first += y;
    c.second += 1.0;
    total += y;
    count += 1.0;
  }
  if (count == 0.0) fail(ErrorCode::EmptyTraining, "no labeled observational units");
  const double fallback = total / count;
  return [cells = std::move(cells), fallback](const UnitRecord& u) {
    auto it = cells.find(u.rsv);
    return it == cells.end() ? fallback : it->second.first / it->second.second;
  };
}

double surrogate_estimate(const Dataset& ds, const OutcomePredictor& pred) {
  double sum[2] = {0.0, 0.0}, n[2] = {0.0, 0.0};
  for (const auto& u : ds.units) {
    if (!in_exp(u.sample) || !u.treatment) continue;
    const int d = *u.treatment;
    if (d != 0 && d != 1) continue;
    sum[d] += pred(u);
    n[d] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) fail(ErrorCode::ZeroCount, "an experimental arm has no units");
  return sum[1] / n[1] - sum[0] / n[0];
}

double surrogate_estimate(const Dataset& ds, const PredictorSet& ps) { return surrogate_estimate(ds, expected_outcome(ps, ds)); }

double benchmark_estimate(const Dataset& ds, std::span<const int> y_true, std::span<const int> d_true) {
  if (y_true.size() != ds.units.size() || d_true.size() != ds.units.size())
    fail(ErrorCode::DimMismatch, "label vectors must cover every unit");
  double sum[2] = {0.0, 0.0}, n[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    if (!in_exp(ds.units[i].sample)) continue;
    const int d = d_true[i];
    if (d != 0 && d != 1) continue;
    sum[d] += ds.outcome_value(y_true[i]);
    n[d] += 1.0;
  }
  if (n[0] == 0.0 || n[1] == 0.0) fail(ErrorCode::ZeroCount, "an experimental arm has no units");
  return sum[1] / n[1] - sum[0] / n[0];
}

BaselineResult binary_bias_decomposition(const Dataset& ds, std::span<const int> y_true, std::size_t feature) {
  if (y_true.size() != ds.units.size()) fail(ErrorCode::DimMismatch, "label vector must cover every unit");
  if (feature >= ds.rsv_dim) fail(ErrorCode::DimMismatch, "feature index out of range");
  // Observational slope of Y on R.
  double sr = 0, sy = 0, sry = 0, srr = 0, no = 0;
  // Experimental conditional means of R given Y, and of Y and R given D.
  double r_by_y[2] = {0, 0}, n_by_y[2] = {0, 0}, y_by_d[2] = {0, 0}, r_by_d[2] = {0, 0}, n_by_d[2] = {0, 0};
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const auto& u = ds.units[i];
    const double r = u.rsv[feature];
    const int y = y_true[i];
    if (in_obs(u.sample)) {
      sr += r;
      sy += y;
      sry += r * y;
      srr += r * r;
      no += 1;
    }
    if (in_exp(u.sample) && u.treatment) {
      r_by_y[y] += r;
      n_by_y[y] += 1;
      const int d = *u.treatment;
      y_by_d[d] += y;
      r_by_d[d] += r;
      n_by_d[d] += 1;
    }
  }
  const double var_r = srr / no - (sr / no) * (sr / no);
  if (!(no > 0) || !(var_r > 0)) fail(ErrorCode::InvalidArgument, "RSV has zero variance in the observational sample");
  if (n_by_y[0] == 0 || n_by_y[1] == 0) fail(ErrorCode::InvalidArgument, "outcome has zero variance in the experimental sample");
  if (n_by_d[0] == 0 || n_by_d[1] == 0) fail(ErrorCode::ZeroCount, "an experimental arm has no units");
  BaselineResult res;
  res.beta_tilde = (sry / no - (sr / no) * (sy / no)) / var_r;
  res.beta = r_by_y[1] / n_by_y[1] - r_by_y[0] / n_by_y[0];
  res.theta = y_by_d[1] / n_by_d[1] - y_by_d[0] / n_by_d[0];
  res.predicted_theta_tilde = res.beta_tilde * res.beta * res.theta;
  res.theta_tilde = res.beta_tilde * (r_by_d[1] / n_by_d[1] - r_by_d[0] / n_by_d[0]);
  return res;
}

BiasWeights bias_weight_w(const FinitePopulation& pop) {
  if (pop.outcome_values != std::vector<double>{0.0, 1.0})
    fail(ErrorCode::Unsupported, "bias weights need binary outcomes with values {0,1}");
  const std::size_t M = pop.rsv_support.size();
  if (M > kMaxOracleSupport) fail(ErrorCode::SupportTooLarge, "RSV support too large");
  const double a = pop.y_given_d0[1], b = pop.y_given_d1[1];
  if (!(a > 0.0) || !(b > 0.0)) fail(ErrorCode::ZeroCount, "Pr{Y(d)=1} must be positive");
  BiasWeights out;
  out.w.assign(M, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t r = 0; r < M; ++r) {
    const double f1 = pop.y_given_d1[0] * pop.r_given_y[0][r] + b * pop.r_given_y[1][r];
    const double f0 = pop.y_given_d0[0] * pop.r_given_y[0][r] + a * pop.r_given_y[1][r];
    const double fy1 = pop.r_given_y[1][r];
    if (f0 > 0.0) out.w[r] = (a * f1) / (b * f0);
    else if (fy1 > 0.0) fail(ErrorCode::ZeroCount, "support point with f_R(r|D=0) = 0 has positive f_R(r|Y=1)");
    if (fy1 > 0.0) out.bias += (out.w[r] - 1.0) * fy1;
  }
  out.bias *= b;
  return out;
}

nlohmann::json comparison_row(double theta_hat, double theta_tilde, std::optional<double> true_theta) {
  nlohmann::json j{{"theta_hat", theta_hat}, {"theta_tilde", theta_tilde}};
  if (true_theta) {
    j["true_theta"] = *true_theta;
    j["bias_each"] = {{"ours", theta_hat - *true_theta}, {"common", theta_tilde - *true_theta}};
  } else {
    j["true_theta"] = nullptr;
    j["bias_each"] = nullptr;
  }
  return j;
}

}  // namespace rsv
