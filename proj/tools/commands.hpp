#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "rsv/dgp.hpp"
#include "rsv/estimate.hpp"

namespace rsv::cli {

// Full command-line dispatch; returns the process exit code
// (0 ok, 2 data error, 3 identification error).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// ----- Monte Carlo harness shared by `rsv simulate` and the acceptance suite -----

struct McConfig {
  DgpSpec base;
  std::vector<double> tau_grid{0.0};
  std::vector<std::size_t> n_grid{1000};
  int reps = 10;
  std::vector<std::string> methods{"ours", "common", "benchmark"};
  EstimateConfig est;
  int threads = 1;
};

struct McRow {
  std::string method;
  double tau = 0.0;
  std::size_t n = 0;
  int rep = 0;
  double truth = 0.0;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string error;  // error name when the replication failed
};

struct McSummary {
  std::string method;
  double tau = 0.0;
  std::size_t n = 0;
  int reps = 0;
  int failures = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;  // NaN when the method reports no interval
};

// Rows ordered by (method, tau, n, rep) whatever the thread count.
std::vector<McRow> run_monte_carlo(const McConfig& cfg);
std::vector<McSummary> summarize(const std::vector<McRow>& rows);

// Worker count from RSV_THREADS, else the hardware concurrency.
int default_threads();

}  // namespace rsv::cli
