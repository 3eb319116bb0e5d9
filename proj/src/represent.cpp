#include "rsv/represent.hpp"

#include <cmath>

#include "rsv/error.hpp"
#include "rsv/stats.hpp"

namespace rsv {

namespace {

CondVariation cond_from_events(const std::vector<MomentEvent>& events, int J, const Prediction& pred,
                               const MarginalCounts& counts) {
  CondVariation cv;
  cv.co = Eigen::VectorXd::Zero(J);
  for (const auto& e : events) {
    double p = counts.prob(e.side, e.cell);
    if (!(p > 0.0)) fail(ErrorCode::ZeroCount, "no units in event " + event_name(e.side, e.cell, counts.layout));
    double w = pred.event(e.side, e.cell) / p;
    cv.ce += e.a * w;
    cv.co += e.b * w;
  }
  return cv;
}

double sigma2_from_events(const std::vector<MomentEvent>& events, const Prediction& pred, const MarginalCounts& counts,
                          const Eigen::VectorXd& theta) {
  double s = 0.0;
  for (const auto& e : events) {
    double p = counts.prob(e.side, e.cell);
    double r = e.a - e.b.dot(theta);
    s += pred.event(e.side, e.cell) * r * r / (p * p);
  }
  return s;
}

}  // namespace

CondVariation cond_variation(const MomentSystem& sys, const Prediction& pred, const MarginalCounts& counts) {
  return cond_from_events(moment_events(sys), sys.dim(), pred, counts);
}

CondVariation cond_variation(const PredictorSet& ps, const MarginalCounts& counts, const UnitRecord& u, int ref) {
  if (ref < 0) ref = default_reference(counts.k_outcomes);
  return cond_variation(incomplete_system(counts.k_outcomes, ref), ps.predict(u), counts);
}

double sigma2_plugin(const MomentSystem& sys, const Prediction& pred, const MarginalCounts& counts,
                     const Eigen::VectorXd& theta) {
  require_counts(sys, counts);
  return sigma2_from_events(moment_events(sys), pred, counts, theta);
}

Eigen::VectorXd theta_init(const Eigen::VectorXd& ce, const Eigen::MatrixXd& co, const RepresentationOptions& opt,
                           bool* ridged) {
  if (ridged) *ridged = false;
  Eigen::MatrixXd gram = co.transpose() * co;
  Eigen::VectorXd rhs = co.transpose() * ce;
  const double trace = gram.trace();
  if (!(trace > 0.0) || !std::isfinite(trace))
    fail(ErrorCode::SingularDesign, "conditional outcome variation is identically zero");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  const double cond = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  if (cond > opt.singular_condition)
    fail(ErrorCode::SingularDesign, "initial-estimate design has condition number " + std::to_string(cond));
  if (cond > opt.ridge_condition) {
    gram.diagonal().array() += 1e-10 * trace;
    if (ridged) *ridged = true;
  }
  return gram.ldlt().solve(rhs);
}

Representation::Representation(std::shared_ptr<const PredictorSet> ps, MomentSystem sys, MarginalCounts counts,
                               Eigen::VectorXd theta, double sigma_floor)
    : ps_(std::move(ps)), sys_(std::move(sys)), counts_(std::move(counts)), events_(moment_events(sys_)),
      theta_(std::move(theta)), floor_(sigma_floor) {}

Eigen::VectorXd Representation::evaluate(const UnitRecord& u) const {
  Prediction pred = ps_->predict(u);
  CondVariation cv = cond_from_events(events_, sys_.dim(), pred, counts_);
  double s2 = std::max(sigma2_from_events(events_, pred, counts_, theta_), floor_);
  return cv.co / s2;
}

Eigen::MatrixXd Representation::evaluate(const Dataset& ds, std::span<const std::size_t> rows) const {
  Eigen::MatrixXd h(static_cast<Eigen::Index>(rows.size()), sys_.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) h.row(static_cast<Eigen::Index>(r)) = evaluate(ds.units[rows[r]]).transpose();
  return h;
}

Representation learn_representation(const Dataset& ds, std::span<const std::size_t> train_rows,
                                    std::shared_ptr<const PredictorSet> ps, const MomentSystem& sys,
                                    const RepresentationOptions& opt) {
  MarginalCounts counts = marginal_counts(ds, train_rows, sys.layout);
  require_counts(sys, counts, "training fold");
  const auto events = moment_events(sys);
  const auto n = static_cast<Eigen::Index>(train_rows.size());
  const int J = sys.dim();

  RepresentationFit fit;
  fit.ce.resize(n);
  fit.co.resize(n, J);
  std::vector<Prediction> preds;
  preds.reserve(train_rows.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    preds.push_back(ps->predict(ds.units[train_rows[static_cast<std::size_t>(r)]]));
    CondVariation cv = cond_from_events(events, J, preds.back(), counts);
    fit.ce(r) = cv.ce;
    fit.co.row(r) = cv.co.transpose();
  }
  fit.theta_init = theta_init(fit.ce, fit.co, opt, &fit.ridged);

  fit.sigma2.resize(n);
  for (Eigen::Index r = 0; r < n; ++r)
    fit.sigma2(r) = sigma2_from_events(events, preds[static_cast<std::size_t>(r)], counts, fit.theta_init);
  fit.sigma_floor = opt.sigma_floor_factor * median(std::vector<double>(fit.sigma2.data(), fit.sigma2.data() + n));
  if (!(fit.sigma_floor > 0.0)) fit.sigma_floor = std::numeric_limits<double>::min();
  fit.sigma2 = fit.sigma2.cwiseMax(fit.sigma_floor);
  fit.h = fit.co.array().colwise() / fit.sigma2.array();

  Representation rep(std::move(ps), sys, std::move(counts), fit.theta_init, fit.sigma_floor);
  rep.fit = std::move(fit);
  return rep;
}

Eigen::MatrixXd naive_representation(NaiveKind kind, const Dataset& ds, std::span<const std::size_t> rows,
                                     const MomentSystem& sys, const PredictorSet* ps, std::span<const double> custom) {
  const int J = sys.dim();
  Eigen::MatrixXd h(static_cast<Eigen::Index>(rows.size()), J);
  switch (kind) {
    case NaiveKind::PredY: {
      if (!ps) fail(ErrorCode::InvalidArgument, "PRED_Y representation needs fitted predictors");
      // Which outcome category each Delta^o component refers to.
      std::vector<int> cats(static_cast<std::size_t>(J), -1);
      for (int j = 0; j < J; ++j)
        for (const auto& t : sys.outcome[static_cast<std::size_t>(j)])
          if (t.coef > 0) cats[static_cast<std::size_t>(j)] = sys.layout == CellLayout::Complete ? t.cell / 2 : t.cell;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        Prediction p = ps->predict(ds.units[rows[r]]);
        for (int j = 0; j < J; ++j) {
          int y = cats[static_cast<std::size_t>(j)];
          double v = ps->layout == CellLayout::Complete
                         ? p.obs_cells[static_cast<std::size_t>(2 * y)] + p.obs_cells[static_cast<std::size_t>(2 * y + 1)]
                         : p.obs_cells[static_cast<std::size_t>(y)];
          h(static_cast<Eigen::Index>(r), j) = v;
        }
      }
      break;
    }
    case NaiveKind::FirstFeature:
      if (J != 1) fail(ErrorCode::Unsupported, "FIRST_FEATURE representation is scalar; use it with binary outcomes");
      for (std::size_t r = 0; r < rows.size(); ++r) h(static_cast<Eigen::Index>(r), 0) = ds.units[rows[r]].rsv.at(0);
      break;
    case NaiveKind::Custom:
      if (custom.size() != ds.units.size() * static_cast<std::size_t>(J))
        fail(ErrorCode::DimMismatch, "custom representation needs one value per unit and component");
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (int j = 0; j < J; ++j)
          h(static_cast<Eigen::Index>(r), j) = custom[rows[r] * static_cast<std::size_t>(J) + static_cast<std::size_t>(j)];
      break;
  }
  return h;
}

}  // namespace rsv
