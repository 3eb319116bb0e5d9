#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rsv/data.hpp"

namespace rsv {

enum class Side { Exp, Obs };

// How units map to the events the moments are built from.
//   Standard:   experimental cell = D,        observational cell = Y
//   Instrument: experimental cell = 2D + Z,   observational cell = Y
//   Complete:   experimental cell = D,        observational cell = 2Y + D
enum class CellLayout { Standard, Instrument, Complete };

int exp_cell_count(CellLayout layout);
int obs_cell_count(CellLayout layout, int k_outcomes);
// -1 when the unit is not in that sample (or lacks the fields).
int exp_cell(const UnitRecord& u, CellLayout layout);
int obs_cell(const UnitRecord& u, CellLayout layout);
std::string event_name(Side side, int cell, CellLayout layout);

struct MarginalCounts {
  CellLayout layout = CellLayout::Standard;
  int k_outcomes = 2;
  std::size_t n = 0;
  std::vector<double> p_exp;  // by experimental cell
  std::vector<double> p_obs;  // by observational cell

  double prob(Side side, int cell) const;
  double p_d1e() const;
  double p_d0e() const;
  double p_yo(int k) const;
  double p_ydo(int k, int d) const;
};

// Probabilities are event counts over the number of selected rows. Zero
// entries are kept; whichever moment system consumes them checks its own
// required events.
MarginalCounts marginal_counts(const Dataset& ds, std::span<const std::size_t> rows, CellLayout layout);
std::map<std::string, MarginalCounts> stratified_counts(const Dataset& ds, std::span<const std::size_t> rows,
                                                        CellLayout layout);

// Delta^e and each component of Delta^o are signed sums of 1{event}/p(event).
struct MomentTerm {
  Side side;
  int cell;
  double coef;
};

struct MomentSystem {
  CellLayout layout = CellLayout::Standard;
  int k_outcomes = 2;
  std::vector<MomentTerm> treatment;
  std::vector<std::vector<MomentTerm>> outcome;
  std::string label;

  int dim() const { return static_cast<int>(outcome.size()); }
};

// Reference category: 0 for binary outcomes (so index 1 is Y=1), K-1 otherwise.
int default_reference(int k_outcomes);
// Outcome categories other than the reference, in order; component j of
// Delta^o refers to category non_reference(K, ref)[j].
std::vector<int> non_reference(int k_outcomes, int ref);

MomentSystem incomplete_system(int k_outcomes, int ref);
// Per-arm moments that allow direct effects of D on R (complete cases).
MomentSystem complete_arm_system(int k_outcomes, int ref, int d);
// Level moments for mu(d): 1{D=d,e}/p - 1{Y=ref,o}/p against Delta^o.
MomentSystem arm_system(int k_outcomes, int ref, int d);
MomentSystem instrument_cell_system(int k_outcomes, int ref, int d, int z);

// Distinct events with their coefficient in Delta^e (a) and Delta^o (b).
struct MomentEvent {
  Side side;
  int cell;
  double a;
  Eigen::VectorXd b;
};
std::vector<MomentEvent> moment_events(const MomentSystem& sys);

// Throws ZeroCount naming the first required event with zero probability.
void require_counts(const MomentSystem& sys, const MarginalCounts& counts, const std::string& context = "");

struct VariationValues {
  double delta_e = 0.0;
  Eigen::VectorXd delta_o;
};

VariationValues variation(const MomentSystem& sys, const UnitRecord& u, const MarginalCounts& counts);
VariationValues variation(const UnitRecord& u, const MarginalCounts& counts, int ref = -1);
VariationValues variation_complete(const UnitRecord& u, int d, const MarginalCounts& counts, int ref = -1);

// Exclusive-event expansion of (Delta^e - Delta^o' theta)^2 evaluated on the
// unit's own indicators. For BOTH units the cross term is dropped.
double sigma2_expansion(const MomentSystem& sys, const UnitRecord& u, const MarginalCounts& counts,
                        const Eigen::VectorXd& theta);
double sigma2_expansion(const UnitRecord& u, const MarginalCounts& counts, double theta);

}  // namespace rsv
