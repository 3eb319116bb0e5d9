#pragma once

#include <Eigen/Dense>
#include <memory>
#include <span>
#include <vector>

#include "rsv/data.hpp"
#include "rsv/moments.hpp"
#include "rsv/predict.hpp"

namespace rsv {

struct RepresentationOptions {
  double sigma_floor_factor = 1e-8;  // floor = factor * median(sigma2)
  double ridge_condition = 1e8;      // above this condition number a ridge is added
  double singular_condition = 1e12;  // above this the design is refused
};

// Training-fold values that produced the representation.
struct RepresentationFit {
  Eigen::MatrixXd h;  // rows x J
  Eigen::VectorXd theta_init;
  Eigen::VectorXd ce;
  Eigen::MatrixXd co;  // rows x J
  Eigen::VectorXd sigma2;
  double sigma_floor = 0.0;
  bool ridged = false;
};

struct CondVariation {
  double ce = 0.0;
  Eigen::VectorXd co;
};

// Plug-in E(Delta^e | R) and E(Delta^o | R).
CondVariation cond_variation(const MomentSystem& sys, const Prediction& pred, const MarginalCounts& counts);
CondVariation cond_variation(const PredictorSet& ps, const MarginalCounts& counts, const UnitRecord& u, int ref = -1);

// Plug-in E{(Delta^e - Delta^o' theta)^2 | R} from the exclusive-event expansion.
double sigma2_plugin(const MomentSystem& sys, const Prediction& pred, const MarginalCounts& counts,
                     const Eigen::VectorXd& theta);

// No-intercept least squares of ce on co.
Eigen::VectorXd theta_init(const Eigen::VectorXd& ce, const Eigen::MatrixXd& co, const RepresentationOptions& opt = {},
                           bool* ridged = nullptr);

// H(R) = E(Delta^o|R) / sigma^2(theta_init, R), learned on a training fold and
// evaluable anywhere.
class Representation {
 public:
  Representation(std::shared_ptr<const PredictorSet> ps, MomentSystem sys, MarginalCounts counts,
                 Eigen::VectorXd theta, double sigma_floor);

  Eigen::VectorXd evaluate(const UnitRecord& u) const;
  Eigen::MatrixXd evaluate(const Dataset& ds, std::span<const std::size_t> rows) const;

  const MomentSystem& system() const { return sys_; }
  const Eigen::VectorXd& theta() const { return theta_; }
  double sigma_floor() const { return floor_; }
  const PredictorSet& predictors() const { return *ps_; }

  RepresentationFit fit;  // training-fold diagnostics

 private:
  std::shared_ptr<const PredictorSet> ps_;
  MomentSystem sys_;
  MarginalCounts counts_;
  std::vector<MomentEvent> events_;
  Eigen::VectorXd theta_;
  double floor_;
};

Representation learn_representation(const Dataset& ds, std::span<const std::size_t> train_rows,
                                     std::shared_ptr<const PredictorSet> ps, const MomentSystem& sys,
                                     const RepresentationOptions& opt = {});

enum class NaiveKind { PredY, FirstFeature, Custom };

// PredY: Pr(Y = y_j | o, R) for each non-reference category; FirstFeature: r_1
// (binary only); Custom: `custom` holds one value per dataset unit.
Eigen::MatrixXd naive_representation(NaiveKind kind, const Dataset& ds, std::span<const std::size_t> rows,
                                     const MomentSystem& sys, const PredictorSet* ps = nullptr,
                                     std::span<const double> custom = {});

}  // namespace rsv
