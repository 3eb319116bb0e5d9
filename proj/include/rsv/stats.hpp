#pragma once

#include <span>
#include <vector>

namespace rsv {

double normal_quantile(double p);
double normal_cdf(double x);
// z_{1-alpha/2}
double two_sided_z(double alpha);

double mean(std::span<const double> x);
// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> x);
double median(std::vector<double> x);

}  // namespace rsv
