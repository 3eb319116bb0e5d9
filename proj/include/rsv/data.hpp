#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace rsv {

enum class SampleTag { Exp, Obs, Both };
enum class Mode { Incomplete, Complete, Iv, Did };

inline bool in_exp(SampleTag t) { return t != SampleTag::Obs; }
inline bool in_obs(SampleTag t) { return t != SampleTag::Exp; }

const char* tag_code(SampleTag t);  // "e", "o", "eo"
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct UnitRecord {
  SampleTag sample = SampleTag::Exp;
  std::optional<int> treatment;
  std::optional<int> outcome;  // category index 0..K-1
  std::optional<std::string> covariate;
  std::vector<double> rsv;
  std::optional<std::string> cluster;
  std::optional<int> instrument;
  std::optional<int> period;  // 1 or 2
  long unit_key = -1;         // ties together the period records of one DiD unit

  bool operator==(const UnitRecord&) const = default;
};

struct Dataset {
  std::vector<UnitRecord> units;
  int k_outcomes = 2;
  std::size_t rsv_dim = 0;
  Mode mode = Mode::Incomplete;
  std::vector<double> outcome_values;  // value map; empty means 0..K-1

  std::size_t size() const { return units.size(); }
  double outcome_value(int k) const;
  std::vector<double> value_map() const;
  bool has_covariate() const;
  bool has_cluster() const;
};

struct CsvSchema {
  std::string sample = "sample";
  std::string treatment = "treatment";
  std::string outcome = "outcome";
  std::string covariate = "x";
  std::string cluster = "cluster";
  std::string instrument = "instrument";
  std::string period = "period";
  std::string rsv_prefix = "r_";
  bool strict = true;
  Mode mode = Mode::Incomplete;
};

inline constexpr std::size_t kDatasetLevel = std::numeric_limits<std::size_t>::max();

struct Violation {
  std::string rule;
  std::size_t row = kDatasetLevel;
  std::string message;
};

// k_outcomes == 0 infers K from the largest outcome index (at least 2).
Dataset load_csv(const std::string& path, const CsvSchema& schema = {}, int k_outcomes = 0);

// Same parser, but the outcome column is read as a real number and returned
// separately (indexed like ds.units); the records carry no outcome index.
struct RealOutcomeData {
  Dataset data;
  std::vector<std::optional<double>> outcome;
};
RealOutcomeData load_csv_real_outcome(const std::string& path, const CsvSchema& schema = {});

void write_csv(const Dataset& ds, const std::string& path);

std::vector<Violation> validate(const Dataset& ds);

// Resampling/splitting unit: units sharing a cluster id (or DiD unit key)
// always travel together.
std::vector<std::vector<std::size_t>> unit_groups(const Dataset& ds);

std::vector<int> split_folds(const Dataset& ds, int n_folds, std::uint64_t seed);

}  // namespace rsv
