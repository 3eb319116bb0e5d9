#include "rsv/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numeric>

#include "rsv/error.hpp"

namespace rsv {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::InvalidArgument, "quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double two_sided_z(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  return normal_quantile(1.0 - alpha / 2.0);
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  double m = mean(x), ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double median(std::vector<double> x) {
  if (x.empty()) return 0.0;
  std::size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid), x.end());
  double hi = x[mid];
  if (x.size() % 2) return hi;
  double lo = *std::max_element(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

}  // namespace rsv
