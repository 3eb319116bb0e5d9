#include "rsv/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rsv/error.hpp"
#include "rsv/moments.hpp"
#include "rsv/rng.hpp"

namespace rsv {

using nlohmann::json;

const char* dgp_name(DgpKind k) {
  switch (k) {
    case DgpKind::Calibrated: return "calibrated";
    case DgpKind::Adversarial: return "adversarial";
    case DgpKind::Iv: return "iv";
    case DgpKind::Did: return "did";
    case DgpKind::CustomFinite: return "custom_finite";
  }
  return "?";
}

DgpKind parse_dgp(const std::string& s) {
  for (auto k : {DgpKind::Calibrated, DgpKind::Adversarial, DgpKind::Iv, DgpKind::Did, DgpKind::CustomFinite})
    if (s == dgp_name(k)) return k;
  fail(ErrorCode::InvalidSpec, "unknown dgp '" + s + "'");
}

const char* missing_pattern_name(MissingPattern m) {
  switch (m) {
    case MissingPattern::DeleteTreated: return "delete_treated";
    case MissingPattern::RandomHalf: return "random_half";
    case MissingPattern::None: return "none";
  }
  return "?";
}

MissingPattern parse_missing_pattern(const std::string& s) {
  for (auto m : {MissingPattern::DeleteTreated, MissingPattern::RandomHalf, MissingPattern::None})
    if (s == missing_pattern_name(m)) return m;
  fail(ErrorCode::InvalidSpec, "unknown missing pattern '" + s + "'");
}

json to_json(const DgpSpec& s) {
  return json{{"kind", dgp_name(s.kind)},
              {"n", s.n},
              {"theta_shift", s.theta_shift},
              {"p0", s.p0},
              {"a", s.a},
              {"b", s.b},
              {"rsv_dim", s.rsv_dim},
              {"seed", s.seed},
              {"missing_pattern", missing_pattern_name(s.missing_pattern)},
              {"signal", s.signal},
              {"signal_dims", s.signal_dims},
              {"obs_shift", s.obs_shift},
              {"complier_share", s.complier_share},
              {"always_share", s.always_share},
              {"late", s.late},
              {"drift", s.drift},
              {"att", s.att},
              {"q0", s.q0},
              {"q1", s.q1}};
}

namespace {

bool open_unit(double p) { return p > 0.0 && p < 1.0; }

void require(bool ok, const std::string& msg) {
  if (!ok) fail(ErrorCode::InvalidSpec, msg);
}

double calibrated_theta(const DgpSpec& s) { return -0.07 + s.theta_shift; }

// Base and treated outcome probabilities of the IV strata.
constexpr double kAlwaysY = 0.5;
constexpr double kNeverY = 0.2;
// Period-1 outcome gap between arms in the DiD design.
constexpr double kDidArmGap = 0.1;

std::size_t signal_dims(const DgpSpec& s) {
  return s.signal_dims > 0 ? std::min(s.signal_dims, s.rsv_dim) : (s.rsv_dim + 3) / 4;
}

std::vector<double> binary_features(Rng& rng, int y, const DgpSpec& s) {
  std::bernoulli_distribution bit(y == 1 ? s.q1 : s.q0);
  std::vector<double> r(s.rsv_dim);
  for (auto& v : r) v = bit(rng) ? 1.0 : 0.0;
  return r;
}

Dataset empty_dataset(const DgpSpec& s, Mode mode) {
  Dataset ds;
  ds.k_outcomes = 2;
  ds.rsv_dim = s.rsv_dim;
  ds.mode = mode;
  ds.units.reserve(mode == Mode::Did ? 2 * s.n : s.n);
  return ds;
}

}  // namespace

void validate_spec(const DgpSpec& s) {
  require(s.n >= 2, "n must be at least 2");
  require(s.rsv_dim >= 1, "rsv_dim must be positive");
  switch (s.kind) {
    case DgpKind::Calibrated: {
      require(open_unit(s.p0), "p0 must lie in (0,1)");
      const double p1 = s.p0 + calibrated_theta(s);
      require(open_unit(p1), "p0 + theta must lie in (0,1)");
      require(std::isfinite(s.signal) && std::isfinite(s.obs_shift), "signal and obs_shift must be finite");
      break;
    }
    case DgpKind::Adversarial:
      require(open_unit(s.a) && open_unit(s.b), "a and b must lie in (0,1)");
      break;
    case DgpKind::Iv:
      require(s.complier_share >= 0 && s.always_share >= 0 && s.complier_share + s.always_share <= 1,
              "compliance shares must be nonnegative and sum to at most 1");
      require(open_unit(s.p0) && open_unit(s.p0 + s.late), "p0 and p0 + late must lie in (0,1)");
      require(open_unit(s.q0) && open_unit(s.q1), "q0 and q1 must lie in (0,1)");
      break;
    case DgpKind::Did:
      require(open_unit(s.p0) && open_unit(s.p0 + kDidArmGap + s.drift + s.att) && open_unit(s.p0 + s.drift),
              "period outcome probabilities must lie in (0,1)");
      require(open_unit(s.q0) && open_unit(s.q1), "q0 and q1 must lie in (0,1)");
      break;
    case DgpKind::CustomFinite:
      fail(ErrorCode::InvalidSpec, "custom finite populations are sampled with sample_population");
  }
}

SimulatedDataset gen_calibrated(const DgpSpec& s) {
  validate_spec(s);
  Rng rng = make_rng(s.seed, {0xca1ULL});
  const double theta = calibrated_theta(s);
  const double p[2] = {s.p0, s.p0 + theta};
  const std::size_t m = signal_dims(s);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  SimulatedDataset out;
  out.data = empty_dataset(s, Mode::Incomplete);
  for (std::size_t i = 0; i < s.n; ++i) {
    const int d = coin(rng) ? 1 : 0;
    const int y = std::bernoulli_distribution(p[d])(rng) ? 1 : 0;
    UnitRecord u;
    u.rsv.resize(s.rsv_dim);
    for (std::size_t j = 0; j < s.rsv_dim; ++j) u.rsv[j] = noise(rng) + (j < m ? s.signal * y : 0.0);
    switch (s.missing_pattern) {
      case MissingPattern::DeleteTreated:
        u.sample = d == 1 ? SampleTag::Exp : SampleTag::Both;
        break;
      case MissingPattern::RandomHalf:
        u.sample = coin(rng) ? SampleTag::Exp : SampleTag::Both;
        break;
      case MissingPattern::None:
        u.sample = coin(rng) ? SampleTag::Exp : SampleTag::Obs;
        break;
    }
    if (u.sample != SampleTag::Obs) u.treatment = d;
    if (u.sample != SampleTag::Exp) u.outcome = y;
    if (u.sample == SampleTag::Obs)
      for (std::size_t j = 0; j < m; ++j) u.rsv[j] += s.obs_shift;
    out.data.units.push_back(std::move(u));
    out.y_true.push_back(y);
    out.d_true.push_back(d);
  }
  out.truth = theta;
  out.meta = json{{"theta", theta},
                  {"p0", p[0]},
                  {"p1", p[1]},
                  {"rsv_model", "synthetic gaussian mean shift"},
                  {"signal_dims", m},
                  {"spec", to_json(s)}};
  return out;
}

SimulatedDataset gen_adversarial(const DgpSpec& s) {
  validate_spec(s);
  Rng rng = make_rng(s.seed, {0xad7ULL});
  std::bernoulli_distribution coin(0.5);
  SimulatedDataset out;
  out.data = empty_dataset(s, Mode::Incomplete);
  out.data.rsv_dim = 1;
  for (std::size_t i = 0; i < s.n; ++i) {
    const int d = coin(rng) ? 1 : 0;
    const int y = std::bernoulli_distribution(d == 1 ? s.b : s.a)(rng) ? 1 : 0;
    const double r = coin(rng) ? y : 1.0;
    UnitRecord u;
    u.rsv = {r};
    u.treatment = d;
    u.sample = d == 1 ? SampleTag::Exp : SampleTag::Both;
    if (d == 0) u.outcome = y;
    out.data.units.push_back(std::move(u));
    out.y_true.push_back(y);
    out.d_true.push_back(d);
  }
  out.truth = s.b - s.a;
  const double bias = (s.a - s.b) / (s.a + 1.0);
  out.meta = json{{"theta", out.truth}, {"bias", bias}, {"theta_tilde", out.truth + bias}, {"spec", to_json(s)}};
  return out;
}

SimulatedDataset gen_iv(const DgpSpec& s) {
  validate_spec(s);
  Rng rng = make_rng(s.seed, {0x1fULL});
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double never_share = 1.0 - s.complier_share - s.always_share;
  SimulatedDataset out;
  out.data = empty_dataset(s, Mode::Iv);
  for (std::size_t i = 0; i < s.n; ++i) {
    const int z = coin(rng) ? 1 : 0;
    const double u_stratum = unif(rng);
    double py;
    int d;
    if (u_stratum < s.complier_share) {
      d = z;
      py = d == 1 ? s.p0 + s.late : s.p0;
    } else if (u_stratum < s.complier_share + s.always_share) {
      d = 1;
      py = kAlwaysY;
    } else {
      d = 0;
      py = kNeverY;
    }
    const int y = std::bernoulli_distribution(py)(rng) ? 1 : 0;
    UnitRecord u;
    u.rsv = binary_features(rng, y, s);
    if (coin(rng)) {
      u.sample = SampleTag::Exp;
      u.treatment = d;
      u.instrument = z;
    } else {
      u.sample = SampleTag::Obs;
      u.outcome = y;
    }
    out.data.units.push_back(std::move(u));
    out.y_true.push_back(y);
    out.d_true.push_back(d);
  }
  // Population cell means alpha(d,z) = Pr(Y=1 | D=d, Z=z) and beta(z).
  const double c = s.complier_share, at = s.always_share, nt = never_share;
  auto ratio = [](double num, double den) { return den > 0 ? json(num / den) : json(nullptr); };
  json alpha{{"1,1", ratio(c * (s.p0 + s.late) + at * kAlwaysY, c + at)},
             {"0,1", ratio(nt * kNeverY, nt)},
             {"1,0", ratio(at * kAlwaysY, at)},
             {"0,0", ratio(c * s.p0 + nt * kNeverY, c + nt)}};
  out.truth = s.late;
  out.meta = json{{"late", s.late},
                  {"beta", {{"0", at}, {"1", c + at}}},
                  {"alpha", alpha},
                  {"weak_instrument", c < 0.05},
                  {"spec", to_json(s)}};
  return out;
}

SimulatedDataset gen_did(const DgpSpec& s) {
  validate_spec(s);
  Rng rng = make_rng(s.seed, {0xd1dULL});
  std::bernoulli_distribution coin(0.5);
  SimulatedDataset out;
  out.data = empty_dataset(s, Mode::Did);
  for (std::size_t i = 0; i < s.n; ++i) {
    const int d = coin(rng) ? 1 : 0;
    const bool exp = coin(rng);
    const double base = s.p0 + kDidArmGap * d;
    const double prob[2] = {base, base + s.drift + s.att * d};
    for (int t = 1; t <= 2; ++t) {
      const int y = std::bernoulli_distribution(prob[t - 1])(rng) ? 1 : 0;
      UnitRecord u;
      u.rsv = binary_features(rng, y, s);
      u.period = t;
      u.unit_key = static_cast<long>(i);
      if (exp) {
        u.sample = SampleTag::Exp;
        u.treatment = d;
      } else {
        u.sample = SampleTag::Obs;
        u.outcome = y;
      }
      out.data.units.push_back(std::move(u));
      out.y_true.push_back(y);
      out.d_true.push_back(d);
    }
  }
  out.truth = s.att;
  out.meta = json{{"att", s.att},
                  {"drift", s.drift},
                  {"alpha", {{"1,0", s.p0}, {"1,1", s.p0 + kDidArmGap},
                             {"2,0", s.p0 + s.drift}, {"2,1", s.p0 + kDidArmGap + s.drift + s.att}}},
                  {"naive_post_difference", kDidArmGap + s.att},
                  {"spec", to_json(s)}};
  return out;
}

SimulatedDataset generate(const DgpSpec& s) {
  switch (s.kind) {
    case DgpKind::Calibrated: return gen_calibrated(s);
    case DgpKind::Adversarial: return gen_adversarial(s);
    case DgpKind::Iv: return gen_iv(s);
    case DgpKind::Did: return gen_did(s);
    case DgpKind::CustomFinite: break;
  }
  fail(ErrorCode::InvalidSpec, "custom finite populations are sampled with sample_population");
}

// ===== finite-support oracle =====

namespace {

void check_distribution(const std::vector<double>& p, std::size_t size, const std::string& name) {
  require(p.size() == size, name + " has the wrong length");
  double s = 0.0;
  for (double v : p) {
    require(v >= 0.0 && std::isfinite(v), name + " has a negative or non-finite entry");
    s += v;
  }
  require(std::fabs(s - 1.0) < 1e-9, name + " does not sum to 1");
}

void check_population(const FinitePopulation& pop) {
  const std::size_t K = pop.outcome_values.size();
  require(K >= 2, "population needs at least two outcome values");
  require(std::is_sorted(pop.outcome_values.begin(), pop.outcome_values.end()), "outcome values must be sorted");
  require(open_unit(pop.p_exp) && open_unit(pop.p_treat), "p_exp and p_treat must lie in (0,1)");
  check_distribution(pop.y_given_d0, K, "y_given_d0");
  check_distribution(pop.y_given_d1, K, "y_given_d1");
  check_distribution(pop.y_obs, K, "y_obs");
  const std::size_t M = pop.rsv_support.size();
  if (M > kMaxOracleSupport)
    fail(ErrorCode::SupportTooLarge, "RSV support has " + std::to_string(M) + " points (limit " +
                                         std::to_string(kMaxOracleSupport) + ")");
  require(M >= 1, "empty RSV support");
  require(pop.r_given_y.size() == K, "r_given_y needs one row per outcome");
  for (std::size_t k = 0; k < K; ++k) check_distribution(pop.r_given_y[k], M, "r_given_y row");
  for (std::size_t k = 0; k < K; ++k)
    require(pop.y_obs[k] > 0.0, "every outcome needs positive observational probability");
}

}  // namespace

OracleResult population_oracle(const FinitePopulation& pop, int ref) {
  check_population(pop);
  const int K = static_cast<int>(pop.outcome_values.size());
  const std::size_t M = pop.rsv_support.size();
  OracleResult res;
  res.reference = ref >= 0 ? ref : default_reference(K);
  const auto cats = non_reference(K, res.reference);
  const int J = static_cast<int>(cats.size());
  const auto Ks = static_cast<std::size_t>(K);

  const double pe[2] = {pop.p_exp * (1.0 - pop.p_treat), pop.p_exp * pop.p_treat};
  std::vector<double> po(Ks);
  for (std::size_t k = 0; k < Ks; ++k) po[k] = (1.0 - pop.p_exp) * pop.y_obs[k];

  // Direct potential-outcome contrast.
  res.theta_vec.resize(J);
  for (int j = 0; j < J; ++j) {
    const auto c = static_cast<std::size_t>(cats[static_cast<std::size_t>(j)]);
    res.theta_vec(j) = pop.y_given_d1[c] - pop.y_given_d0[c];
  }
  const double v_ref = pop.outcome_values[static_cast<std::size_t>(res.reference)];
  res.theta = 0.0;
  for (int j = 0; j < J; ++j)
    res.theta += (pop.outcome_values[static_cast<std::size_t>(cats[static_cast<std::size_t>(j)])] - v_ref) * res.theta_vec(j);

  // Conditional variation statistics per support point.
  std::vector<double> fe0(M), fe1(M);
  res.f_r.assign(M, 0.0);
  res.ce.assign(M, 0.0);
  res.co.assign(M, Eigen::VectorXd::Zero(J));
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(J, J);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(J);
  double mu_tilde[2] = {0.0, 0.0};
  for (std::size_t r = 0; r < M; ++r) {
    double f0 = 0.0, f1 = 0.0, fo = 0.0, ey_o = 0.0;
    for (std::size_t k = 0; k < Ks; ++k) {
      f0 += pop.y_given_d0[k] * pop.r_given_y[k][r];
      f1 += pop.y_given_d1[k] * pop.r_given_y[k][r];
      fo += po[k] * pop.r_given_y[k][r];
      ey_o += pop.outcome_values[k] * po[k] * pop.r_given_y[k][r];
    }
    fe0[r] = f0;
    fe1[r] = f1;
    const double f = pe[0] * f0 + pe[1] * f1 + fo;
    res.f_r[r] = f;
    if (fo > 0.0) {
      mu_tilde[0] += ey_o / fo * f0;
      mu_tilde[1] += ey_o / fo * f1;
    }
    if (!(f > 0.0)) continue;
    res.ce[r] = (f1 - f0) / f;
    for (int j = 0; j < J; ++j) {
      const auto c = static_cast<std::size_t>(cats[static_cast<std::size_t>(j)]);
      res.co[r](j) = (pop.r_given_y[c][r] - pop.r_given_y[static_cast<std::size_t>(res.reference)][r]) / f;
    }
    A += f * res.co[r] * res.co[r].transpose();
    rhs += f * res.co[r] * res.ce[r];
  }
  res.theta_tilde = mu_tilde[1] - mu_tilde[0];
  res.bias = res.theta_tilde - res.theta;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  const double scale = std::max(A.trace(), 1e-300);
  res.irrelevant = !(eig.eigenvalues().minCoeff() > 1e-14 * scale) || A.trace() == 0.0;
  if (res.irrelevant) {
    res.theta_ratio_vec = Eigen::VectorXd::Constant(J, std::numeric_limits<double>::quiet_NaN());
    res.theta_ratio = std::numeric_limits<double>::quiet_NaN();
  } else {
    res.theta_ratio_vec = A.ldlt().solve(rhs);
    res.theta_ratio = 0.0;
    for (int j = 0; j < J; ++j)
      res.theta_ratio +=
          (pop.outcome_values[static_cast<std::size_t>(cats[static_cast<std::size_t>(j)])] - v_ref) * res.theta_ratio_vec(j);
  }

  // Residual of the conditional moment at the true theta, and H*.
  const MomentSystem sys = incomplete_system(K, res.reference);
  const auto events = moment_events(sys);
  res.h_star.assign(M, Eigen::VectorXd::Zero(J));
  for (std::size_t r = 0; r < M; ++r) {
    const double f = res.f_r[r];
    if (!(f > 0.0)) continue;
    res.max_residual = std::max(res.max_residual, std::fabs(res.ce[r] - res.co[r].dot(res.theta_vec)));
    double sigma2 = 0.0;
    for (const auto& e : events) {
      double joint, p;
      if (e.side == Side::Exp) {
        const auto d = static_cast<std::size_t>(e.cell);
        joint = pe[d] * (d == 1 ? fe1[r] : fe0[r]);
        p = pe[d];
      } else {
        const auto k = static_cast<std::size_t>(e.cell);
        joint = po[k] * pop.r_given_y[k][r];
        p = po[k];
      }
      const double resid = e.a - e.b.dot(res.theta_vec);
      sigma2 += joint / f * resid * resid / (p * p);
    }
    if (sigma2 > 0.0) res.h_star[r] = res.co[r] / sigma2;
  }
  return res;
}

json to_json(const OracleResult& r) {
  auto vec = [](const Eigen::VectorXd& v) {
    std::vector<double> out(v.data(), v.data() + v.size());
    json j = json::array();
    for (double x : out) j.push_back(std::isfinite(x) ? json(x) : json(nullptr));
    return j;
  };
  json h = json::array();
  for (const auto& v : r.h_star) h.push_back(vec(v));
  json co = json::array();
  for (const auto& v : r.co) co.push_back(vec(v));
  return json{{"reference", r.reference},
              {"theta", r.theta},
              {"theta_vec", vec(r.theta_vec)},
              {"theta_ratio", std::isfinite(r.theta_ratio) ? json(r.theta_ratio) : json(nullptr)},
              {"theta_ratio_vec", vec(r.theta_ratio_vec)},
              {"theta_tilde", r.theta_tilde},
              {"bias", r.bias},
              {"max_residual", r.max_residual},
              {"irrelevant", r.irrelevant},
              {"f_r", r.f_r},
              {"cond_delta_e", r.ce},
              {"cond_delta_o", co},
              {"h_star", h}};
}

FinitePopulation adversarial_population(double a, double b) {
  require(open_unit(a) && open_unit(b), "a and b must lie in (0,1)");
  FinitePopulation pop;
  pop.outcome_values = {0.0, 1.0};
  pop.p_exp = 0.5;
  pop.p_treat = 0.5;
  pop.y_given_d0 = {1.0 - a, a};
  pop.y_given_d1 = {1.0 - b, b};
  pop.y_obs = pop.y_given_d0;  // observational units are untreated
  pop.rsv_support = {{0.0}, {1.0}};
  pop.r_given_y = {{0.5, 0.5}, {0.0, 1.0}};
  return pop;
}

namespace {

std::vector<double> dirichlet(Rng& rng, std::size_t n) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = g(rng) + 1e-3;
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

FinitePopulation random_population(int k, int m, std::uint64_t seed) {
  require(k >= 2 && m >= k, "random population needs K >= 2 and M >= K");
  Rng rng = make_rng(seed, {0x0a41eULL});
  std::uniform_real_distribution<double> u(0.2, 0.8), val(-2.0, 2.0);
  FinitePopulation pop;
  for (int i = 0; i < k; ++i) pop.outcome_values.push_back(val(rng));
  std::sort(pop.outcome_values.begin(), pop.outcome_values.end());
  pop.p_exp = u(rng);
  pop.p_treat = u(rng);
  const auto K = static_cast<std::size_t>(k), M = static_cast<std::size_t>(m);
  pop.y_given_d0 = dirichlet(rng, K);
  pop.y_given_d1 = dirichlet(rng, K);
  pop.y_obs = dirichlet(rng, K);
  for (std::size_t r = 0; r < M; ++r) pop.rsv_support.push_back({val(rng), val(rng)});
  for (std::size_t y = 0; y < K; ++y) pop.r_given_y.push_back(dirichlet(rng, M));
  return pop;
}

SimulatedDataset sample_population(const FinitePopulation& pop, std::size_t n, std::uint64_t seed) {
  check_population(pop);
  Rng rng = make_rng(seed, {0x5a3bULL});
  const std::size_t K = pop.outcome_values.size();
  std::bernoulli_distribution in_exp_sample(pop.p_exp), treat(pop.p_treat);
  std::discrete_distribution<int> y0(pop.y_given_d0.begin(), pop.y_given_d0.end()),
      y1(pop.y_given_d1.begin(), pop.y_given_d1.end()), yo(pop.y_obs.begin(), pop.y_obs.end());
  std::vector<std::discrete_distribution<std::size_t>> r_draw;
  for (std::size_t k = 0; k < K; ++k) r_draw.emplace_back(pop.r_given_y[k].begin(), pop.r_given_y[k].end());
  SimulatedDataset out;
  out.data.k_outcomes = static_cast<int>(K);
  out.data.rsv_dim = pop.rsv_support.front().size();
  out.data.mode = Mode::Incomplete;
  out.data.outcome_values = pop.outcome_values;
  for (std::size_t i = 0; i < n; ++i) {
    UnitRecord u;
    int y, d = -1;
    if (in_exp_sample(rng)) {
      d = treat(rng) ? 1 : 0;
      y = d == 1 ? y1(rng) : y0(rng);
      u.sample = SampleTag::Exp;
      u.treatment = d;
    } else {
      y = yo(rng);
      u.sample = SampleTag::Obs;
      u.outcome = y;
    }
    u.rsv = pop.rsv_support[r_draw[static_cast<std::size_t>(y)](rng)];
    out.data.units.push_back(std::move(u));
    out.y_true.push_back(y);
    out.d_true.push_back(d);
  }
  const OracleResult o = population_oracle(pop);
  out.truth = o.theta;
  out.meta = json{{"theta", o.theta}, {"theta_tilde", o.theta_tilde}, {"bias", o.bias}};
  return out;
}

}  // namespace rsv
