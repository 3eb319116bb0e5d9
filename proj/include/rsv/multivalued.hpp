#pragma once

#include <functional>
#include <vector>

#include "rsv/data.hpp"
#include "rsv/dgp.hpp"

namespace rsv {

// Bins of radius epsilon centred at lo + eps, lo + 3 eps, ...; covers [lo, hi].
struct BinningSpec {
  double epsilon = 0.0;
  std::vector<double> centers;
  double lo = 0.0;
  double hi = 0.0;
};

BinningSpec make_binning(double lo, double hi, double epsilon);
// Largest-resolution epsilon that keeps at most max_bins categories.
double default_epsilon(double lo, double hi, int max_bins = 20);
// Nearest centre; ties at a bin boundary go to the lower centre. Throws
// OutOfSupport outside [lo, hi].
int bin_index(const BinningSpec& spec, double y);
// Maps real outcomes onto bin indices; the value map is the bin centres.
Dataset discretize(const RealOutcomeData& raw, const BinningSpec& spec);
// Worst-case discretization bias of the scalar ATE: 2 epsilon.
double bias_bound(const BinningSpec& spec);

// Continuous potential-outcome densities on [lo, hi].
struct ContinuousPopulation {
  std::function<double(double)> f0;
  std::function<double(double)> f1;
  double lo = 0.0;
  double hi = 1.0;
};

// Composite Simpson rule with `intervals` (even) subintervals.
double integrate(const std::function<double(double)>& f, double a, double b, int intervals = 2000);

struct DiscretizationCheck {
  double theta = 0.0;      // E Y(1) - E Y(0) by integration
  double theta_eps = 0.0;  // sum_k c_k {Pr(Y(1) in bin k) - Pr(Y(0) in bin k)}
  double error = 0.0;      // |theta_eps - theta|
  double bound = 0.0;      // 2 epsilon
};

DiscretizationCheck discretization_error(const ContinuousPopulation& pop, const BinningSpec& spec);

// Finite-support population over the bins: R takes one of `support` values
// with a discretized Gaussian profile around each bin's position. Observational
// outcomes follow the average of the two potential-outcome laws.
FinitePopulation binned_population(const ContinuousPopulation& pop, const BinningSpec& spec, int support = 0);

}  // namespace rsv
