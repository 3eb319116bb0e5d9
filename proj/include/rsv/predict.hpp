#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsv/data.hpp"
#include "rsv/moments.hpp"

namespace rsv {

enum class PredictorKind { Logistic, Knn, Stumps };

const char* predictor_name(PredictorKind k);
PredictorKind parse_predictor(const std::string& s);

struct PredictorOptions {
  PredictorKind kind = PredictorKind::Logistic;
  std::vector<double> class_weights;  // per outcome class; empty means all 1
  double clip = 0.01;
  std::uint64_t seed = 0;
  double ridge_factor = 1e-3;  // logistic penalty lambda = ridge_factor * n
  int knn_k = 0;               // 0 means ceil(sqrt(n))
  int n_trees = 100;
};

nlohmann::json to_json(const PredictorOptions& o);

// Multiclass probability model on raw RSV vectors. Classes outside the label
// space get probability 0.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual void predict(std::span<const double> x, std::span<double> out) const = 0;
  virtual nlohmann::json to_json() const = 0;
  int n_classes() const { return n_classes_; }

 protected:
  int n_classes_ = 0;
};

struct TrainingSet {
  Eigen::MatrixXd x;          // rows are units
  std::vector<int> label;     // class index per row
  std::vector<double> weight;  // per row
};

std::shared_ptr<const Classifier> fit_classifier(const TrainingSet& data, const std::vector<char>& active,
                                                 const PredictorOptions& opt, std::uint64_t seed);
std::shared_ptr<const Classifier> classifier_from_json(const nlohmann::json& j);

// Clip the active entries into [clip, 1-clip] while keeping their sum at 1
// (Euclidean projection onto the clipped simplex). Inactive entries are 0.
void clip_probabilities(std::span<double> p, const std::vector<char>& active, double clip);

struct Prediction {
  std::vector<double> exp_cells;  // Pr(cell | e in S, R)
  std::vector<double> obs_cells;  // Pr(cell | o in S, R)
  double p_exp = 0.0;             // Pr(e in S | R)
  double p_obs = 0.0;             // Pr(o in S | R)

  // Pr(event, sample | R)
  double event(Side side, int cell) const;
};

class PredictorSet {
 public:
  CellLayout layout = CellLayout::Standard;
  int k_outcomes = 2;
  std::size_t rsv_dim = 0;
  PredictorOptions options;
  std::shared_ptr<const Classifier> pred_y;  // observational cells given R, fit on o units
  std::shared_ptr<const Classifier> pred_d;  // experimental cells given R, fit on e units
  std::shared_ptr<const Classifier> pred_s;  // sample tag (e, o, eo) given R, fit on all units
  std::vector<char> active_y, active_d, active_s;

  Prediction predict(std::span<const double> rsv) const;
  Prediction predict(const UnitRecord& u) const { return predict(u.rsv); }

  nlohmann::json to_json() const;
  static PredictorSet from_json(const nlohmann::json& j);
};

// Label spaces come from the whole dataset so every fold predicts over the
// same classes; models are fit on `rows` only.
PredictorSet fit_predictors(const Dataset& ds, std::span<const std::size_t> rows, CellLayout layout,
                            const PredictorOptions& opt);

struct PredictAll {
  std::vector<double> prob_y;
  double prob_d = 0.0;  // Pr(D=1 | e, R)
  double prob_s = 0.0;  // Pr(e in S | R)
};
PredictAll predict_all(const PredictorSet& ps, const UnitRecord& u);

}  // namespace rsv
