#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsv/data.hpp"
#include "rsv/moments.hpp"
#include "rsv/predict.hpp"
#include "rsv/represent.hpp"

namespace rsv {

enum class RepresentationChoice { Learned, PredY, FirstFeature, Custom };
const char* representation_name(RepresentationChoice c);
RepresentationChoice parse_representation(const std::string& s);

struct EstimateConfig {
  int n_folds = 2;
  std::uint64_t seed = 0;
  PredictorOptions predictor;
  RepresentationOptions representation;
  RepresentationChoice representation_choice = RepresentationChoice::Learned;
  std::vector<double> custom_h;  // one value per unit (times K-1) for Custom
  int reference = -1;            // outcome reference category; -1 picks the default
  double alpha = 0.10;
  int bootstrap = 500;  // replications; 0 falls back to the analytic variance when available
  bool cluster_bootstrap = true;
  bool whole_pipeline_bootstrap = false;
  double irrelevance_factor = 1e-3;
  double degenerate_share = 0.10;
  bool stratify = true;  // estimate within covariate strata when covariates exist
  double weak_instrument_floor = 0.05;
};

nlohmann::json to_json(const EstimateConfig& c);

// ----- ratio estimator -----

struct RatioStats {
  std::size_t n = 0;
  Eigen::MatrixXd gram;       // E_n{H Delta^o'}
  Eigen::VectorXd cross;      // E_n{H Delta^e}
  double tolerance = 0.0;     // irrelevance threshold applied to gram
  double smallest = 0.0;      // smallest singular value of gram
};

// theta = [sum H Delta^o']^{-1} [sum H Delta^e] with counts taken from `rows`.
// h has one row per entry of rows. Throws IrrelevantRSV / ZeroCount.
Eigen::VectorXd ratio_estimate(const Dataset& ds, std::span<const std::size_t> rows, const MomentSystem& sys,
                               const Eigen::MatrixXd& h, RatioStats* stats = nullptr, double irrelevance_factor = 1e-3);

// Unit max-norm per column, then rounded to single precision, so the ratio
// depends only on the direction of each column of h.
Eigen::MatrixXd canonical_representation(const Eigen::MatrixXd& h);

// ----- analytic variance -----

struct AnalyticVariance {
  Eigen::VectorXd v_vec;      // 8
  Eigen::MatrixXd sigma_mat;  // 8 x 8
  Eigen::VectorXd b_moments;  // 8
  double denominator = 0.0;   // E_n{Delta^o H}
  double variance = 0.0;      // unknown counts, per unit (divide by n for se^2)
  double variance_known = 0.0;
  std::size_t n = 0;
};

AnalyticVariance analytic_variance(const Dataset& ds, std::span<const std::size_t> rows, const Eigen::VectorXd& h,
                                   double theta);

// ----- generic cross-fitting pipeline -----

struct SliceDef {
  std::string name;
  CellLayout layout = CellLayout::Standard;
  std::optional<int> period;  // restrict to one period
};

struct TargetDef {
  int slice = 0;
  MomentSystem system;
  bool optional = false;  // skipped (no estimate) if its events never occur in the stratum
};

struct Assembled {
  double scalar = 0.0;
  Eigen::VectorXd vec;
  std::vector<std::pair<std::string, double>> components;
};

struct AssemblyInput {
  const Dataset& ds;
  std::span<const std::size_t> rows;  // units of the stratum (resampled in bootstrap)
  const std::vector<std::optional<Eigen::VectorXd>>& theta;  // per target
};

struct Estimand {
  std::string name;
  std::vector<SliceDef> slices;
  std::vector<TargetDef> targets;
  std::function<Assembled(const AssemblyInput&)> assemble;
};

struct FoldPart {
  int fold = 0;
  std::size_t stratum = 0;
  int target = 0;
  std::vector<std::size_t> rows;     // dataset rows in this test fold/stratum/slice
  std::vector<int> exp_cell, obs_cell;
  Eigen::MatrixXd h_raw;             // representation on rows
  Eigen::MatrixXd h;                 // canonical form used by the ratio
  std::shared_ptr<const Representation> rep;
  std::shared_ptr<const PredictorSet> predictors;
};

class CrossFit {
 public:
  static CrossFit fit(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg);

  // Point estimate on the test folds as drawn.
  Assembled point() const;
  // Test folds resampled (clusters kept whole) with stream `b`; throws on failure.
  Assembled replicate(std::uint64_t b) const;
  // Per-part ratio on a multiset of local indices.
  Eigen::VectorXd part_theta(const FoldPart& part, std::span<const int> picks, RatioStats* stats = nullptr) const;
  // Same accumulation with the raw representation (relevance statistic).
  RatioStats part_stats_raw(const FoldPart& part, std::span<const int> picks) const;

  const std::vector<FoldPart>& parts() const { return parts_; }
  const std::vector<int>& folds() const { return folds_; }
  const std::vector<std::string>& strata() const { return strata_; }
  const Dataset& data() const { return *ds_; }
  const Estimand& estimand() const { return est_; }
  // Local indices of every test unit of each part (the point-estimate picks).
  std::vector<std::vector<int>> identity_picks() const;
  // Resampled local picks per part for stream b.
  std::vector<std::vector<int>> resample_picks(std::uint64_t b, std::vector<std::size_t>* all_rows) const;
  Assembled assemble(const std::vector<std::vector<int>>& picks, std::span<const std::size_t> all_rows,
                     std::vector<Eigen::VectorXd>* part_thetas = nullptr) const;

 private:
  const Dataset* ds_ = nullptr;
  Estimand est_;
  EstimateConfig cfg_;
  std::vector<int> folds_;
  std::vector<std::string> strata_;
  std::vector<std::size_t> stratum_of_row_;
  std::vector<FoldPart> parts_;
  std::vector<std::vector<int>> local_;                    // per part: dataset row -> local index or -1
  std::vector<std::vector<std::vector<std::size_t>>> fold_groups_;  // per fold: resampling groups
  std::vector<std::vector<char>> absent_;                  // per stratum, per target
};

struct StratumEstimate {
  std::string x;
  double theta = 0.0;
  Eigen::VectorXd theta_vec;
  std::size_t n = 0;
  double weight = 0.0;
};

struct EstimateResult {
  std::string estimand;
  double theta_hat = 0.0;
  Eigen::VectorXd theta_vec;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string se_method = "none";
  std::optional<double> se_analytic;
  std::optional<double> se_analytic_known;
  std::vector<StratumEstimate> per_stratum;
  std::vector<std::pair<std::string, double>> components;
  std::vector<double> fold_theta;  // scalar estimate from each fold alone
  int bootstrap_reps = 0;
  int bootstrap_failures = 0;
  bool bootstrap_unreliable = false;
  std::optional<double> bias_bound;
  std::vector<std::string> warnings;
  nlohmann::json meta;
};

nlohmann::json to_json(const EstimateResult& r);

EstimateResult run_estimand(const Dataset& ds, const Estimand& est, const EstimateConfig& cfg);

// Scalar reduction sum_j (y_j - y_ref) theta_j.
double reduce_ate(const Eigen::VectorXd& theta_vec, const std::vector<double>& values, int ref);
int resolve_reference(const Dataset& ds, const EstimateConfig& cfg);

Estimand ate_estimand(const Dataset& ds, const EstimateConfig& cfg);
EstimateResult estimate_ate(const Dataset& ds, const EstimateConfig& cfg);

struct BootstrapSummary {
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int reps = 0;
  int failures = 0;
  bool unreliable = false;
  std::vector<double> draws;
};

// Bootstrap with the representation frozen (test folds resampled).
BootstrapSummary bootstrap_ci(const CrossFit& cf, double theta_hat, const EstimateConfig& cfg);

}  // namespace rsv
