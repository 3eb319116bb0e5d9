#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsv/data.hpp"

namespace rsv {

enum class DgpKind { Calibrated, Adversarial, Iv, Did, CustomFinite };
// DeleteTreated: treated units are experimental only, untreated units are in
// both samples with outcomes. RandomHalf: everyone is experimental and a
// random half keeps outcomes (both samples). None: disjoint samples, each unit
// experimental (no outcome) or observational (outcome, no treatment) with
// probability 1/2.
enum class MissingPattern { DeleteTreated, RandomHalf, None };

const char* dgp_name(DgpKind k);
DgpKind parse_dgp(const std::string& s);
const char* missing_pattern_name(MissingPattern m);
MissingPattern parse_missing_pattern(const std::string& s);

struct DgpSpec {
  DgpKind kind = DgpKind::Calibrated;
  std::size_t n = 1000;
  double theta_shift = 0.0;  // tau: calibrated effect is -0.07 + tau
  double p0 = 0.25;          // Pr(Y=1 | D=0)
  double a = 0.6;            // adversarial Pr{Y(0)=1}
  double b = 0.2;            // adversarial Pr{Y(1)=1}
  std::size_t rsv_dim = 8;
  std::uint64_t seed = 0;
  MissingPattern missing_pattern = MissingPattern::DeleteTreated;
  double signal = 1.0;         // Gaussian mean shift of R given Y=1
  std::size_t signal_dims = 0;  // 0 means ceil(rsv_dim / 4)
  double obs_shift = 0.0;       // shift of observational-only units' R (stability violation)
  // IV: compliance strata shares and complier effect.
  double complier_share = 0.6;
  double always_share = 0.2;
  double late = 0.3;
  // DiD: common drift of untreated outcomes and effect at t=2.
  double drift = 0.1;
  double att = 0.2;
  // Binary RSV features for IV/DiD: Pr(r_j = 1 | Y = y).
  double q0 = 0.3;
  double q1 = 0.7;
};

nlohmann::json to_json(const DgpSpec& s);
void validate_spec(const DgpSpec& s);  // throws InvalidSpec

struct SimulatedDataset {
  Dataset data;
  std::vector<int> y_true;  // outcome index of every record (including hidden ones)
  std::vector<int> d_true;  // treatment of every record (-1 for observational-only units)
  double truth = 0.0;       // ATE, LATE or ATT
  nlohmann::json meta;      // population quantities of the design
};

SimulatedDataset gen_calibrated(const DgpSpec& s);
SimulatedDataset gen_adversarial(const DgpSpec& s);
SimulatedDataset gen_iv(const DgpSpec& s);
SimulatedDataset gen_did(const DgpSpec& s);
SimulatedDataset generate(const DgpSpec& s);

// Finite-support population: experimental units (probability p_exp) draw
// D ~ Bernoulli(p_treat) and Y(D); observational units draw Y from y_obs.
// R | Y is shared by both samples.
struct FinitePopulation {
  std::vector<double> outcome_values;
  double p_exp = 0.5;
  double p_treat = 0.5;
  std::vector<double> y_given_d0;  // Pr{Y(0)=k | e}
  std::vector<double> y_given_d1;  // Pr{Y(1)=k | e}
  std::vector<double> y_obs;       // Pr(Y=k | o)
  std::vector<std::vector<double>> rsv_support;  // support points of R
  std::vector<std::vector<double>> r_given_y;    // K x M
};

inline constexpr std::size_t kMaxOracleSupport = 10000;

struct OracleResult {
  int reference = 0;
  Eigen::VectorXd theta_vec;        // Pr{Y(1)=y_j} - Pr{Y(0)=y_j}, non-reference j
  Eigen::VectorXd theta_ratio_vec;  // from E(Delta^e|R) and E(Delta^o|R)
  double theta = 0.0;               // scalar ATE, direct
  double theta_ratio = 0.0;         // scalar ATE, ratio formula
  double theta_tilde = 0.0;         // implicit target of common practice
  double bias = 0.0;                // theta_tilde - theta
  double max_residual = 0.0;        // max_r |E(Delta^e|r) - E(Delta^o|r)' theta|
  bool irrelevant = false;          // E(Delta^o|R) == 0
  std::vector<double> f_r;          // marginal of R
  std::vector<double> ce;           // E(Delta^e | R=r)
  std::vector<Eigen::VectorXd> co;  // E(Delta^o | R=r)
  std::vector<Eigen::VectorXd> h_star;
};

OracleResult population_oracle(const FinitePopulation& pop, int ref = -1);
nlohmann::json to_json(const OracleResult& r);

FinitePopulation adversarial_population(double a, double b);
// Random valid population with K outcomes and M support points (for tests).
FinitePopulation random_population(int k, int m, std::uint64_t seed);
SimulatedDataset sample_population(const FinitePopulation& pop, std::size_t n, std::uint64_t seed);

}  // namespace rsv
