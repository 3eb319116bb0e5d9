#include "rsv/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include "rsv/error.hpp"
#include "rsv/rng.hpp"

namespace rsv {

const char* tag_code(SampleTag t) {
  switch (t) {
    case SampleTag::Exp: return "e";
    case SampleTag::Obs: return "o";
    case SampleTag::Both: return "eo";
  }
  return "?";
}

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Incomplete: return "incomplete";
    case Mode::Complete: return "complete";
    case Mode::Iv: return "iv";
    case Mode::Did: return "did";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "incomplete") return Mode::Incomplete;
  if (s == "complete") return Mode::Complete;
  if (s == "iv") return Mode::Iv;
  if (s == "did") return Mode::Did;
  fail(ErrorCode::InvalidArgument, "unknown mode '" + s + "'");
}

double Dataset::outcome_value(int k) const {
  if (outcome_values.empty()) return static_cast<double>(k);
  return outcome_values.at(static_cast<std::size_t>(k));
}

std::vector<double> Dataset::value_map() const {
  std::vector<double> v(static_cast<std::size_t>(k_outcomes));
  for (int k = 0; k < k_outcomes; ++k) v[static_cast<std::size_t>(k)] = outcome_value(k);
  return v;
}

bool Dataset::has_covariate() const {
  return std::any_of(units.begin(), units.end(), [](const UnitRecord& u) { return u.covariate.has_value(); });
}

bool Dataset::has_cluster() const {
  return std::any_of(units.begin(), units.end(), [](const UnitRecord& u) { return u.cluster.has_value(); });
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    std::string_view f = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
    out.push_back(f);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool is_missing(std::string_view f) { return f.empty() || f == "NA"; }

std::string where(std::size_t row, std::string_view col) {
  return "row " + std::to_string(row) + ", column '" + std::string(col) + "'";
}

double parse_real(std::string_view f, std::size_t row, std::string_view col) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size() || !std::isfinite(v))
    fail(ErrorCode::MalformedRow, where(row, col) + ": not a finite number: '" + std::string(f) + "'");
  return v;
}

int parse_int(std::string_view f, std::size_t row, std::string_view col) {
  double v = parse_real(f, row, col);
  if (v != std::floor(v) || std::fabs(v) > 1e9)
    fail(ErrorCode::MalformedRow, where(row, col) + ": not an integer: '" + std::string(f) + "'");
  return static_cast<int>(v);
}

SampleTag parse_tag(std::string_view f, std::size_t row, std::string_view col) {
  if (f == "e") return SampleTag::Exp;
  if (f == "o") return SampleTag::Obs;
  if (f == "eo" || f == "oe") return SampleTag::Both;
  fail(ErrorCode::MalformedRow, where(row, col) + ": sample must be e, o or eo");
}

// Columns named prefix<integer>, ordered by the integer.
std::vector<int> indexed_columns(const std::vector<std::string>& header, const std::string& prefix) {
  std::vector<std::pair<long, int>> found;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h.size() <= prefix.size() || h.compare(0, prefix.size(), prefix) != 0) continue;
    std::string_view rest(h.data() + prefix.size(), h.size() - prefix.size());
    long idx = 0;
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), idx);
    if (ec == std::errc() && p == rest.data() + rest.size()) found.emplace_back(idx, static_cast<int>(c));
  }
  std::sort(found.begin(), found.end());
  std::vector<int> cols;
  for (auto& [i, c] : found) cols.push_back(c);
  return cols;
}

struct Layout {
  int sample = -1, treatment = -1, outcome = -1, covariate = -1, cluster = -1, instrument = -1, period = -1;
  std::vector<int> rsv;
  bool wide = false;
  std::vector<int> rsv1, rsv2;
  int y1 = -1, y2 = -1;
};

Layout resolve_layout(const std::vector<std::string>& header, const CsvSchema& schema) {
  Layout L;
  auto find = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  L.sample = find(schema.sample);
  if (L.sample < 0) fail(ErrorCode::SchemaViolation, "missing column '" + schema.sample + "'");
  L.treatment = find(schema.treatment);
  L.outcome = find(schema.outcome);
  L.covariate = find(schema.covariate);
  L.cluster = find(schema.cluster);
  L.instrument = find(schema.instrument);
  L.period = find(schema.period);
  L.rsv = indexed_columns(header, schema.rsv_prefix);
  if (L.rsv.empty()) {
    // Wide two-period layout: r1_*, r2_* and y_1, y_2.
    std::string stem = schema.rsv_prefix;
    if (!stem.empty() && stem.back() == '_') stem.pop_back();
    L.rsv1 = indexed_columns(header, stem + "1_");
    L.rsv2 = indexed_columns(header, stem + "2_");
    if (L.rsv1.empty()) fail(ErrorCode::SchemaViolation, "no RSV columns with prefix '" + schema.rsv_prefix + "'");
    if (L.rsv1.size() != L.rsv2.size())
      fail(ErrorCode::SchemaViolation, "period RSV blocks have different widths");
    L.wide = true;
    L.y1 = find("y_1");
    L.y2 = find("y_2");
  }
  return L;
}

struct Loaded {
  Dataset data;
  std::vector<std::optional<double>> real;
};

Loaded load_impl(const std::string& path, const CsvSchema& schema, bool real_outcome) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptySample, "'" + path + "' is empty");
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);
  Layout L = resolve_layout(header, schema);

  Loaded out;
  Dataset& ds = out.data;
  ds.mode = L.wide ? Mode::Did : schema.mode;
  ds.rsv_dim = L.wide ? L.rsv1.size() : L.rsv.size();

  auto read_outcome = [&](std::string_view f, std::size_t row, std::string_view col, UnitRecord& u) {
    if (is_missing(f)) {
      if (real_outcome) out.real.emplace_back();
      return;
    }
    if (real_outcome) {
      out.real.emplace_back(parse_real(f, row, col));
    } else {
      int k = parse_int(f, row, col);
      if (k < 0) fail(ErrorCode::MalformedRow, where(row, col) + ": negative outcome index");
      u.outcome = k;
    }
  };
  auto read_rsv = [&](const std::vector<std::string_view>& fields, const std::vector<int>& cols, std::size_t row) {
    std::vector<double> r(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      std::string_view f = fields[static_cast<std::size_t>(cols[j])];
      if (is_missing(f)) fail(ErrorCode::MalformedRow, where(row, header[static_cast<std::size_t>(cols[j])]) + ": RSV value missing");
      r[j] = parse_real(f, row, header[static_cast<std::size_t>(cols[j])]);
    }
    return r;
  };

  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size())
      fail(ErrorCode::MalformedRow, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                        " fields, got " + std::to_string(fields.size()));
    auto field = [&](int c) { return c < 0 ? std::string_view() : fields[static_cast<std::size_t>(c)]; };

    UnitRecord u;
    u.sample = parse_tag(field(L.sample), row, schema.sample);
    if (!is_missing(field(L.treatment))) u.treatment = parse_int(field(L.treatment), row, schema.treatment);
    if (!is_missing(field(L.covariate))) u.covariate = std::string(field(L.covariate));
    if (!is_missing(field(L.cluster))) u.cluster = std::string(field(L.cluster));
    if (!is_missing(field(L.instrument))) u.instrument = parse_int(field(L.instrument), row, schema.instrument);

    if (!L.wide) {
      if (!is_missing(field(L.period))) u.period = parse_int(field(L.period), row, schema.period);
      read_outcome(field(L.outcome), row, schema.outcome, u);
      u.rsv = read_rsv(fields, L.rsv, row);
      ds.units.push_back(std::move(u));
    } else {
      long key = static_cast<long>(row - 1);
      UnitRecord u2 = u;
      u.period = 1;
      u2.period = 2;
      u.unit_key = u2.unit_key = key;
      read_outcome(field(L.y1), row, "y_1", u);
      u.rsv = read_rsv(fields, L.rsv1, row);
      read_outcome(field(L.y2), row, "y_2", u2);
      u2.rsv = read_rsv(fields, L.rsv2, row);
      ds.units.push_back(std::move(u));
      ds.units.push_back(std::move(u2));
    }
  }
  return out;
}

void enforce(const std::vector<Violation>& violations, bool strict) {
  const Violation* empty = nullptr;
  for (const auto& v : violations) {
    if (v.rule == "no_experimental_units" || v.rule == "no_observational_units") {
      if (!empty) empty = &v;
    } else if (strict) {
      std::string at = v.row == kDatasetLevel ? "dataset" : "row " + std::to_string(v.row + 1);
      fail(ErrorCode::SchemaViolation, at + ": " + v.rule + ": " + v.message);
    }
  }
  if (empty) fail(ErrorCode::EmptySample, empty->message);
}

int infer_k(const Dataset& ds) {
  int k = 2;
  for (const auto& u : ds.units)
    if (u.outcome) k = std::max(k, *u.outcome + 1);
  return k;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema, int k_outcomes) {
  Loaded L = load_impl(path, schema, false);
  Dataset& ds = L.data;
  ds.k_outcomes = k_outcomes > 0 ? k_outcomes : infer_k(ds);
  enforce(validate(ds), schema.strict);
  return std::move(L.data);
}

RealOutcomeData load_csv_real_outcome(const std::string& path, const CsvSchema& schema) {
  Loaded L = load_impl(path, schema, true);
  RealOutcomeData out{std::move(L.data), std::move(L.real)};
  // Validate presence rules with a placeholder index; binning assigns real ones.
  Dataset probe = out.data;
  for (std::size_t i = 0; i < probe.units.size(); ++i)
    if (out.outcome[i]) probe.units[i].outcome = 0;
  enforce(validate(probe), schema.strict);
  return out;
}

namespace {

std::string fmt_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, p);
}

template <class T>
std::string opt_str(const std::optional<T>& v) {
  if (!v) return "NA";
  if constexpr (std::is_same_v<T, std::string>) return *v;
  else return std::to_string(*v);
}

}  // namespace

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  auto any = [&](auto pred) { return std::any_of(ds.units.begin(), ds.units.end(), pred); };
  bool has_t = any([](const UnitRecord& u) { return u.treatment.has_value(); });
  bool has_x = any([](const UnitRecord& u) { return u.covariate.has_value(); });
  bool has_c = any([](const UnitRecord& u) { return u.cluster.has_value(); });
  bool has_z = any([](const UnitRecord& u) { return u.instrument.has_value(); });
  bool wide = ds.mode == Mode::Did && !ds.units.empty() &&
              std::all_of(ds.units.begin(), ds.units.end(),
                          [](const UnitRecord& u) { return u.unit_key >= 0 && u.period.has_value(); });

  std::vector<std::string> head{"sample"};
  if (has_t) head.push_back("treatment");
  if (has_x) head.push_back("x");
  if (has_c) head.push_back("cluster");
  if (has_z) head.push_back("instrument");
  auto common = [&](const UnitRecord& u) {
    std::string s = tag_code(u.sample);
    if (has_t) s += "," + opt_str(u.treatment);
    if (has_x) s += "," + opt_str(u.covariate);
    if (has_c) s += "," + opt_str(u.cluster);
    if (has_z) s += "," + opt_str(u.instrument);
    return s;
  };

  if (!wide) {
    bool has_p = any([](const UnitRecord& u) { return u.period.has_value(); });
    head.push_back("outcome");
    if (has_p) head.push_back("period");
    for (std::size_t j = 0; j < ds.rsv_dim; ++j) head.push_back("r_" + std::to_string(j + 1));
    for (std::size_t c = 0; c < head.size(); ++c) out << (c ? "," : "") << head[c];
    out << "\n";
    for (const auto& u : ds.units) {
      out << common(u) << "," << opt_str(u.outcome);
      if (has_p) out << "," << opt_str(u.period);
      for (double r : u.rsv) out << "," << fmt_real(r);
      out << "\n";
    }
    return;
  }

  head.push_back("y_1");
  head.push_back("y_2");
  for (int t = 1; t <= 2; ++t)
    for (std::size_t j = 0; j < ds.rsv_dim; ++j) head.push_back("r" + std::to_string(t) + "_" + std::to_string(j + 1));
  for (std::size_t c = 0; c < head.size(); ++c) out << (c ? "," : "") << head[c];
  out << "\n";
  std::vector<long> order;
  std::unordered_map<long, std::array<const UnitRecord*, 2>> by_key;
  for (const auto& u : ds.units) {
    auto [it, fresh] = by_key.try_emplace(u.unit_key, std::array<const UnitRecord*, 2>{nullptr, nullptr});
    if (fresh) order.push_back(u.unit_key);
    int t = *u.period;
    if (t < 1 || t > 2) fail(ErrorCode::SchemaViolation, "period must be 1 or 2");
    it->second[static_cast<std::size_t>(t - 1)] = &u;
  }
  for (long key : order) {
    const auto& pair = by_key[key];
    if (!pair[0] || !pair[1]) fail(ErrorCode::SchemaViolation, "DiD unit " + std::to_string(key) + " lacks a period");
    out << common(*pair[0]) << "," << opt_str(pair[0]->outcome) << "," << opt_str(pair[1]->outcome);
    for (int t = 0; t < 2; ++t)
      for (double r : pair[static_cast<std::size_t>(t)]->rsv) out << "," << fmt_real(r);
    out << "\n";
  }
}

std::vector<Violation> validate(const Dataset& ds) {
  std::vector<Violation> v;
  auto add = [&](std::string rule, std::size_t row, std::string msg) {
    v.push_back(Violation{std::move(rule), row, std::move(msg)});
  };
  if (ds.k_outcomes < 2) add("k_outcomes", kDatasetLevel, "k_outcomes must be at least 2");
  if (ds.rsv_dim < 1) add("rsv_dim", kDatasetLevel, "rsv dimension must be at least 1");
  if (!ds.outcome_values.empty() && ds.outcome_values.size() != static_cast<std::size_t>(ds.k_outcomes))
    add("value_map", kDatasetLevel, "value map length differs from k_outcomes");

  bool any_e = false, any_o = false;
  bool obs_arm[2] = {false, false};
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const UnitRecord& u = ds.units[i];
    any_e |= in_exp(u.sample);
    any_o |= in_obs(u.sample);
    if (u.rsv.size() != ds.rsv_dim) add("rsv_dim", i, "rsv has " + std::to_string(u.rsv.size()) + " entries");
    for (double r : u.rsv)
      if (!std::isfinite(r)) {
        add("rsv_finite", i, "non-finite rsv entry");
        break;
      }
    if (u.outcome && (*u.outcome < 0 || *u.outcome >= ds.k_outcomes)) add("outcome_range", i, "outcome index out of range");
    if (u.treatment && *u.treatment != 0 && *u.treatment != 1) add("treatment_binary", i, "treatment must be 0 or 1");
    if (u.instrument && *u.instrument != 0 && *u.instrument != 1) add("instrument_binary", i, "instrument must be 0 or 1");
    if (u.period && *u.period != 1 && *u.period != 2) add("period_range", i, "period must be 1 or 2");

    if (in_exp(u.sample) && !u.treatment) add("exp_treatment_missing", i, "experimental unit without treatment");
    if (u.sample == SampleTag::Exp && u.outcome) add("exp_outcome_present", i, "experimental-only unit carries an outcome");
    if (in_obs(u.sample) && !u.outcome) add("obs_outcome_missing", i, "observational unit without outcome");
    if (ds.mode != Mode::Complete && u.sample == SampleTag::Obs && u.treatment && *u.treatment == 1)
      add("incomplete_obs_treated", i, "observational unit carries treatment=1 in incomplete-case mode");
    if (ds.mode == Mode::Complete && in_obs(u.sample)) {
      if (!u.treatment) add("complete_obs_treatment_missing", i, "observational unit without treatment in complete-case mode");
      else if (*u.treatment == 0 || *u.treatment == 1) obs_arm[*u.treatment] = true;
    }
    if (ds.mode == Mode::Iv && in_exp(u.sample) && !u.instrument)
      add("iv_instrument_missing", i, "experimental unit without instrument in IV mode");
    if (ds.mode == Mode::Did && !u.period) add("did_period_missing", i, "unit without period in DiD mode");
  }
  if (ds.mode == Mode::Complete && any_o && !(obs_arm[0] && obs_arm[1]))
    add("complete_obs_single_arm", kDatasetLevel, "observational sample lacks one treatment arm in complete-case mode");
  if (!any_e) add("no_experimental_units", kDatasetLevel, "no experimental units");
  if (!any_o) add("no_observational_units", kDatasetLevel, "no observational units");
  return v;
}

std::vector<std::vector<std::size_t>> unit_groups(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.units.size(); ++i) {
    const UnitRecord& u = ds.units[i];
    std::string key;
    if (u.cluster) key = "c:" + *u.cluster;
    else if (u.unit_key >= 0) key = "u:" + std::to_string(u.unit_key);
    if (key.empty()) {
      groups.push_back({i});
      continue;
    }
    auto [it, fresh] = index.try_emplace(key, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

std::vector<int> split_folds(const Dataset& ds, int n_folds, std::uint64_t seed) {
  if (n_folds < 2 || n_folds > 10) fail(ErrorCode::InvalidArgument, "n_folds must be in [2, 10]");
  if (static_cast<std::size_t>(n_folds) > ds.units.size())
    fail(ErrorCode::InvalidArgument, "more folds than units");
  auto groups = unit_groups(ds);
  if (groups.size() < static_cast<std::size_t>(n_folds))
    fail(ErrorCode::InfeasibleSplit, "fewer clusters than folds");

  // Balance strata (covariate, tag, treatment) across folds by dealing a
  // shuffled, stratum-sorted list round-robin.
  auto stratum = [&](const std::vector<std::size_t>& g) {
    const UnitRecord& u = ds.units[g.front()];
    return std::make_tuple(u.covariate.value_or(""), static_cast<int>(u.sample), u.treatment.value_or(-1));
  };
  constexpr int kMaxAttempts = 100;
  std::vector<int> fold(ds.units.size());
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::size_t> order(groups.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, {0x5f01d, static_cast<std::uint64_t>(attempt)});
    std::shuffle(order.begin(), order.end(), rng);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return stratum(groups[a]) < stratum(groups[b]); });
    for (std::size_t k = 0; k < order.size(); ++k)
      for (std::size_t i : groups[order[k]]) fold[i] = static_cast<int>(k % static_cast<std::size_t>(n_folds));

    std::vector<char> has_e(static_cast<std::size_t>(n_folds), 0), has_o(static_cast<std::size_t>(n_folds), 0);
    for (std::size_t i = 0; i < ds.units.size(); ++i) {
      has_e[static_cast<std::size_t>(fold[i])] |= in_exp(ds.units[i].sample);
      has_o[static_cast<std::size_t>(fold[i])] |= in_obs(ds.units[i].sample);
    }
    bool ok = true;
    for (int f = 0; f < n_folds; ++f) ok &= has_e[static_cast<std::size_t>(f)] && has_o[static_cast<std::size_t>(f)];
    if (ok) return fold;
  }
  fail(ErrorCode::InfeasibleSplit, "no fold assignment gives every fold both experimental and observational units");
}

}  // namespace rsv
