#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsv/data.hpp"
#include "rsv/estimate.hpp"

namespace rsv {

// ----- relevance -----

struct RelevanceEntry {
  int fold = 0;
  std::string target;
  int component = 0;
  double stat = 0.0;  // E_n{H Delta^o} on the fold with the raw representation
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool weak = false;  // interval covers 0
};

struct RelevanceResult {
  std::vector<RelevanceEntry> entries;
  bool weak = false;  // verdict of the primary test fold (fold 0)
  int reps = 0;
  int failures = 0;
};

// One test per test fold: E_n{H Delta^o} with the representation learned on
// the other folds, bootstrapped with the representation frozen (clusters kept
// whole). Statistics of different folds share training data and are not
// independent, so the verdict uses the primary fold alone.
RelevanceResult relevance_test(const CrossFit& cf, const EstimateConfig& cfg);

// ----- specification -----

struct SpecTestResult {
  std::string rep_a;
  std::string rep_b;
  double theta_a = 0.0;
  double theta_b = 0.0;
  double diff = 0.0;
  double diff_se = 0.0;
  double p_value = 1.0;
  bool reject = false;
  int reps = 0;
  int failures = 0;
};

// Both estimates on the same folds; paired bootstrap of the difference and a
// two-sided normal p-value. cfg_a and cfg_b differ only in the representation.
SpecTestResult specification_test(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg_a,
                                  const EstimateConfig& cfg_b);
SpecTestResult specification_test(const Dataset& ds, const EstimateConfig& cfg, RepresentationChoice a,
                                  RepresentationChoice b);

// ----- stability -----

struct StabilityOptions {
  int grid_points = 256;
  std::size_t min_cell = 20;
  int band_reps = 200;
  double gap_threshold = 3.0;  // flag when gap exceeds this multiple of the noise band
  std::uint64_t seed = 0;
};

struct DensityCurve {
  std::string cell;  // "s=e,d=1,y=0"; d="*" when treatment is not recorded
  std::size_t n = 0;
  double bandwidth = 0.0;
  std::vector<double> density;  // on StabilityResult::grid
};

struct CellGap {
  std::string exp_cell;
  std::string obs_cell;
  double max_gap = 0.0;     // max_grid |f_e - f_o|
  double noise_band = 0.0;  // mean max gap of pooled resamples of the same sizes
  double ratio = 0.0;
  double ks = 0.0;          // two-sample Kolmogorov-Smirnov distance
  bool flagged = false;
};

struct StabilityResult {
  std::vector<double> loading;  // first principal component of the standardized RSV
  std::vector<double> grid;
  std::vector<DensityCurve> curves;
  std::vector<CellGap> gaps;
  std::vector<std::string> notices;
};

// Labels (y_true / d_true) are optional; without them only recorded outcomes
// and treatments are used.
StabilityResult stability_export(const Dataset& ds, const StabilityOptions& opt = {}, std::span<const int> y_true = {},
                                 std::span<const int> d_true = {});

// First principal component of the standardized columns by power iteration.
std::vector<double> first_principal_component(const Eigen::MatrixXd& x, double tol = 1e-9, int max_iter = 1000);
double silverman_bandwidth(std::span<const double> x);
std::vector<double> kernel_density(std::span<const double> x, std::span<const double> grid, double bandwidth);

void write_stability_csv(const StabilityResult& r, const std::string& path, const std::string& comment = "");

nlohmann::json to_json(const RelevanceResult& r);
nlohmann::json to_json(const SpecTestResult& r);
nlohmann::json to_json(const StabilityResult& r);  // gaps and notices only

}  // namespace rsv
