#include "rsv/multivalued.hpp"

#include <cmath>

#include "rsv/error.hpp"

namespace rsv {

BinningSpec make_binning(double lo, double hi, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (!(hi > lo)) fail(ErrorCode::InvalidArgument, "binning needs lo < hi");
  BinningSpec s;
  s.epsilon = epsilon;
  s.lo = lo;
  s.hi = hi;
  const auto k = static_cast<int>(std::ceil((hi - lo) / (2.0 * epsilon) - 1e-9));
  for (int i = 0; i < std::max(k, 1); ++i) s.centers.push_back(lo + (2.0 * i + 1.0) * epsilon);
  return s;
}

double default_epsilon(double lo, double hi, int max_bins) {
  if (!(hi > lo) || max_bins < 1) fail(ErrorCode::InvalidArgument, "binning needs lo < hi and max_bins >= 1");
  return (hi - lo) / (2.0 * max_bins);
}

int bin_index(const BinningSpec& spec, double y) {
  const double tol = 1e-12 * std::max(1.0, std::fabs(spec.hi) + std::fabs(spec.lo));
  if (!(y >= spec.lo - tol && y <= spec.hi + tol) || !std::isfinite(y))
    fail(ErrorCode::OutOfSupport, "outcome " + std::to_string(y) + " outside [" + std::to_string(spec.lo) + ", " +
                                      std::to_string(spec.hi) + "]");
  const int k = static_cast<int>(spec.centers.size());
  const int idx = static_cast<int>(std::ceil((y - spec.lo) / (2.0 * spec.epsilon) - 1e-9)) - 1;
  return std::clamp(idx, 0, k - 1);
}

Dataset discretize(const RealOutcomeData& raw, const BinningSpec& spec) {
  Dataset ds = raw.data;
  if (raw.outcome.size() != ds.units.size()) fail(ErrorCode::DimMismatch, "outcome column length differs from units");
  ds.k_outcomes = static_cast<int>(spec.centers.size());
  ds.outcome_values = spec.centers;
  for (std::size_t i = 0; i < ds.units.size(); ++i)
    ds.units[i].outcome = raw.outcome[i] ? std::optional<int>(bin_index(spec, *raw.outcome[i])) : std::nullopt;
  return ds;
}

double bias_bound(const BinningSpec& spec) {
  if (!(spec.epsilon > 0.0)) fail(ErrorCode::InvalidArgument, "epsilon must be positive");
  return 2.0 * spec.epsilon;
}

double integrate(const std::function<double(double)>& f, double a, double b, int intervals) {
  if (intervals < 2) intervals = 2;
  if (intervals % 2) ++intervals;
  const double h = (b - a) / intervals;
  double s = f(a) + f(b);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

namespace {

std::vector<double> bin_masses(const std::function<double(double)>& f, const BinningSpec& spec) {
  const std::size_t K = spec.centers.size();
  std::vector<double> p(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double a = std::max(spec.lo, spec.centers[k] - spec.epsilon);
    const double b = std::min(spec.hi, spec.centers[k] + spec.epsilon);
    p[k] = b > a ? integrate(f, a, b) : 0.0;
  }
  double s = 0.0;
  for (double v : p) s += v;
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

DiscretizationCheck discretization_error(const ContinuousPopulation& pop, const BinningSpec& spec) {
  DiscretizationCheck c;
  auto mean = [&](const std::function<double(double)>& f) {
    return integrate([&](double y) { return y * f(y); }, pop.lo, pop.hi, 20000) / integrate(f, pop.lo, pop.hi, 20000);
  };
  c.theta = mean(pop.f1) - mean(pop.f0);
  const auto p0 = bin_masses(pop.f0, spec), p1 = bin_masses(pop.f1, spec);
  for (std::size_t k = 0; k < spec.centers.size(); ++k) c.theta_eps += spec.centers[k] * (p1[k] - p0[k]);
  c.error = std::fabs(c.theta_eps - c.theta);
  c.bound = bias_bound(spec);
  return c;
}

FinitePopulation binned_population(const ContinuousPopulation& pop, const BinningSpec& spec, int support) {
  const auto K = static_cast<int>(spec.centers.size());
  const int M = support > 0 ? support : K + 2;
  if (M < K) fail(ErrorCode::InvalidArgument, "support must have at least K points");
  FinitePopulation fp;
  fp.outcome_values = spec.centers;
  fp.y_given_d0 = bin_masses(pop.f0, spec);
  fp.y_given_d1 = bin_masses(pop.f1, spec);
  for (int k = 0; k < K; ++k)
    fp.y_obs.push_back(0.5 * (fp.y_given_d0[static_cast<std::size_t>(k)] + fp.y_given_d1[static_cast<std::size_t>(k)]));
  for (int r = 0; r < M; ++r) fp.rsv_support.push_back({static_cast<double>(r)});
  for (int k = 0; k < K; ++k) {
    const double centre = K == 1 ? 0.0 : static_cast<double>(k) * (M - 1) / (K - 1);
    std::vector<double> row(static_cast<std::size_t>(M));
    double s = 0.0;
    for (int r = 0; r < M; ++r) {
      row[static_cast<std::size_t>(r)] = std::exp(-0.5 * (r - centre) * (r - centre));
      s += row[static_cast<std::size_t>(r)];
    }
    for (auto& v : row) v /= s;
    fp.r_given_y.push_back(std::move(row));
  }
  return fp;
}

}  // namespace rsv
