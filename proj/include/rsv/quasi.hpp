#pragma once

#include <map>
#include <string>

#include "rsv/data.hpp"
#include "rsv/estimate.hpp"

namespace rsv {

struct IvResult {
  std::map<std::string, double> alpha;  // "d,z" -> Pr(Y=1 | D=d, Z=z, e)
  std::map<int, double> alpha_z;        // z -> E(Y | Z=z, e)
  std::map<int, double> beta_z;         // z -> E(D | Z=z, e)
  double late = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  EstimateResult result;
};

struct DidResult {
  std::map<std::string, double> alpha_t;  // "t,d" -> Pr(Y_t=1 | D=d, e)
  double att = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  EstimateResult result;
};

// alpha(d,z) by the ratio estimator per instrument cell; cells that never
// occur (e.g. perfect compliance) are skipped. Throws WeakInstrument when
// |beta(1) - beta(0)| is below cfg.weak_instrument_floor.
Estimand iv_estimand(const Dataset& ds, const EstimateConfig& cfg);
IvResult iv_late(const Dataset& ds, const EstimateConfig& cfg);

// alpha_t(d) per period with the period's RSV and outcomes; ATT is the
// difference of the within-arm changes.
Estimand did_estimand(const Dataset& ds, const EstimateConfig& cfg);
DidResult did_att(const Dataset& ds, const EstimateConfig& cfg);

nlohmann::json to_json(const IvResult& r);
nlohmann::json to_json(const DidResult& r);

}  // namespace rsv
