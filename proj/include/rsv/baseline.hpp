#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"
#include "rsv/data.hpp"
#include "rsv/dgp.hpp"
#include "rsv/predict.hpp"

namespace rsv {

// E(Y | R, o) evaluated at a unit's RSV.
using OutcomePredictor = std::function<double(const UnitRecord&)>;

// Expected outcome sum_k y_k Pr(Y=k | o, R) from the fitted pred_Y.
OutcomePredictor expected_outcome(const PredictorSet& ps, const Dataset& ds);
// Cell frequencies of Y among observational units sharing the exact RSV value
// (finite-support RSVs); unseen values predict the observational mean.
OutcomePredictor frequency_predictor(const Dataset& ds);

// Common practice: mean predicted outcome over treated experimental units
// minus over untreated ones. Throws ZeroCount when an arm is empty.
double surrogate_estimate(const Dataset& ds, const OutcomePredictor& pred);
double surrogate_estimate(const Dataset& ds, const PredictorSet& ps);

// Full-label difference in means over experimental units (oracle benchmark).
double benchmark_estimate(const Dataset& ds, std::span<const int> y_true, std::span<const int> d_true);

struct BaselineResult {
  double theta_tilde = 0.0;
  double beta_tilde = 0.0;  // slope of E(Y | R, o) on R
  double beta = 0.0;        // E(R | Y=1) - E(R | Y=0) in the experimental sample
  double theta = 0.0;       // labeled difference in means
  double predicted_theta_tilde = 0.0;  // beta_tilde * beta * theta
};

// Binary R (feature `feature`), binary Y, labels known for every unit.
BaselineResult binary_bias_decomposition(const Dataset& ds, std::span<const int> y_true, std::size_t feature = 0);

struct BiasWeights {
  std::vector<double> w;  // per support point; NaN where f_R(r | D=0) = 0
  double bias = 0.0;      // mu(1) sum_r {w(r) - 1} f_R(r | Y=1, e)
};

// Binary outcomes {0,1}; observational units untreated (y_obs = y_given_d0).
BiasWeights bias_weight_w(const FinitePopulation& pop);

nlohmann::json comparison_row(double theta_hat, double theta_tilde, std::optional<double> true_theta);

}  // namespace rsv
