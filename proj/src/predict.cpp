#include "rsv/predict.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rsv/error.hpp"
#include "rsv/rng.hpp"

namespace rsv {

using nlohmann::json;

const char* predictor_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::Logistic: return "logistic";
    case PredictorKind::Knn: return "knn";
    case PredictorKind::Stumps: return "stumps";
  }
  return "?";
}

PredictorKind parse_predictor(const std::string& s) {
  if (s == "logistic") return PredictorKind::Logistic;
  if (s == "knn") return PredictorKind::Knn;
  if (s == "stumps") return PredictorKind::Stumps;
  fail(ErrorCode::InvalidArgument, "unknown predictor '" + s + "'");
}

json to_json(const PredictorOptions& o) {
  return json{{"kind", predictor_name(o.kind)}, {"class_weights", o.class_weights}, {"clip", o.clip},
              {"seed", o.seed},       {"ridge_factor", o.ridge_factor},      {"knn_k", o.knn_k},
              {"n_trees", o.n_trees}};
}

namespace {

PredictorOptions options_from_json(const json& j) {
  PredictorOptions o;
  o.kind = parse_predictor(j.at("kind").get<std::string>());
  o.class_weights = j.at("class_weights").get<std::vector<double>>();
  o.clip = j.at("clip").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.ridge_factor = j.at("ridge_factor").get<double>();
  o.knn_k = j.at("knn_k").get<int>();
  o.n_trees = j.at("n_trees").get<int>();
  return o;
}

struct Standardizer {
  Eigen::VectorXd mean, scale;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    const double n = static_cast<double>(x.rows());
    s.mean = x.colwise().mean().transpose();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double ss = (x.col(j).array() - s.mean(j)).square().sum();
      double sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
      s.scale(j) = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }
  void apply(std::span<const double> x, Eigen::VectorXd& out) const {
    if (static_cast<Eigen::Index>(x.size()) != mean.size())
      fail(ErrorCode::DimMismatch, "rsv has " + std::to_string(x.size()) + " entries, model expects " +
                                       std::to_string(mean.size()));
    out.resize(mean.size());
    for (Eigen::Index j = 0; j < mean.size(); ++j) out(j) = (x[static_cast<std::size_t>(j)] - mean(j)) / scale(j);
  }
  json to_json() const {
    return json{{"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                {"scale", std::vector<double>(scale.data(), scale.data() + scale.size())}};
  }
  static Standardizer from_json(const json& j) {
    Standardizer s;
    auto m = j.at("mean").get<std::vector<double>>();
    auto c = j.at("scale").get<std::vector<double>>();
    s.mean = Eigen::Map<Eigen::VectorXd>(m.data(), static_cast<Eigen::Index>(m.size()));
    s.scale = Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    return s;
  }
};

std::vector<int> active_list(const std::vector<char>& active) {
  std::vector<int> a;
  for (std::size_t c = 0; c < active.size(); ++c)
    if (active[c]) a.push_back(static_cast<int>(c));
  return a;
}

// ===== logistic =====

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct BinaryLogistic {
  bool constant = false;
  double value = 0.0;   // constant probability
  Eigen::VectorXd beta;  // intercept first

  double prob(const Eigen::VectorXd& z) const {
    if (constant) return value;
    return sigmoid(beta(0) + beta.tail(beta.size() - 1).dot(z));
  }
};

// Penalized (intercept-free) logistic fit by damped Newton / IRLS. Large
// designs solve the Newton system by conjugate gradients on Hessian-vector
// products instead of forming the Hessian.
BinaryLogistic fit_binary_logistic(const Eigen::MatrixXd& z, const Eigen::VectorXd& t, const Eigen::VectorXd& w,
                                   double lambda) {
  BinaryLogistic m;
  const Eigen::Index n = z.rows(), p = z.cols();
  const double wsum = w.sum();
  const double tbar = wsum > 0 ? w.dot(t) / wsum : 0.0;
  if (tbar <= 0.0 || tbar >= 1.0) {
    m.constant = true;
    m.value = std::clamp(tbar, 0.0, 1.0);
    return m;
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  beta(0) = std::log(tbar / (1.0 - tbar));

  auto objective = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd eta = (z * b.tail(p)).array() + b(0);
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) f += w(i) * (log1pexp(eta(i)) - t(i) * eta(i));
    return f + 0.5 * lambda * b.tail(p).squaredNorm();
  };

  double f = objective(beta);
  Eigen::VectorXd eta(n), mu(n), hw(n), g(p + 1), delta(p + 1);
  for (int iter = 0; iter < 100; ++iter) {
    eta = (z * beta.tail(p)).array() + beta(0);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = sigmoid(eta(i));
      hw(i) = w(i) * std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    Eigen::VectorXd r = w.cwiseProduct(mu - t);
    g(0) = r.sum();
    g.tail(p) = z.transpose() * r + lambda * beta.tail(p);

    if (p + 1 <= 400) {
      Eigen::MatrixXd h(p + 1, p + 1);
      h(0, 0) = hw.sum() + 1e-10;
      Eigen::VectorXd zh = z.transpose() * hw;
      h.block(1, 0, p, 1) = zh;
      h.block(0, 1, 1, p) = zh.transpose();
      h.block(1, 1, p, p) = z.transpose() * hw.asDiagonal() * z;
      h.block(1, 1, p, p).diagonal().array() += lambda;
      delta = h.ldlt().solve(g);
    } else {
      auto hv = [&](const Eigen::VectorXd& v) {
        Eigen::VectorXd zv = (z * v.tail(p)).array() + v(0);
        Eigen::VectorXd u = hw.cwiseProduct(zv);
        Eigen::VectorXd out(p + 1);
        out(0) = u.sum() + 1e-10 * v(0);
        out.tail(p) = z.transpose() * u + lambda * v.tail(p);
        return out;
      };
      delta.setZero();
      Eigen::VectorXd res = g, dir = g;
      double rr = res.squaredNorm();
      const double stop = 1e-20 * std::max(1.0, g.squaredNorm());
      for (int k = 0; k < 200 && rr > stop; ++k) {
        Eigen::VectorXd hd = hv(dir);
        double alpha = rr / dir.dot(hd);
        delta += alpha * dir;
        res -= alpha * hd;
        double rr_new = res.squaredNorm();
        dir = res + (rr_new / rr) * dir;
        rr = rr_new;
      }
    }

    double step = 1.0;
    Eigen::VectorXd cand;
    double fc = f;
    bool moved = false;
    for (int k = 0; k < 40; ++k) {
      cand = beta - step * delta;
      fc = objective(cand);
      if (fc <= f) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    double change = (step * delta).cwiseAbs().maxCoeff();
    double drop = f - fc;
    beta = cand;
    f = fc;
    if (change < 1e-9 * (1.0 + beta.cwiseAbs().maxCoeff()) || drop < 1e-13 * (1.0 + std::fabs(f))) break;
  }
  m.beta = beta;
  return m;
}

json binary_to_json(const BinaryLogistic& m) {
  if (m.constant) return json{{"constant", m.value}};
  return json{{"beta", std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size())}};
}

BinaryLogistic binary_from_json(const json& j) {
  BinaryLogistic m;
  if (j.contains("constant")) {
    m.constant = true;
    m.value = j.at("constant").get<double>();
  } else {
    auto b = j.at("beta").get<std::vector<double>>();
    m.beta = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
  return m;
}

class LogisticClassifier : public Classifier {
 public:
  LogisticClassifier(int n_classes, std::vector<int> classes, Standardizer s, std::vector<BinaryLogistic> models)
      : classes_(std::move(classes)), std_(std::move(s)), models_(std::move(models)) {
    n_classes_ = n_classes;
  }

  static std::shared_ptr<const Classifier> fit(const TrainingSet& d, const std::vector<char>& active,
                                               const PredictorOptions& opt) {
    auto classes = active_list(active);
    Standardizer s = Standardizer::fit(d.x);
    Eigen::MatrixXd z = s.apply(d.x);
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(d.weight.data(), static_cast<Eigen::Index>(d.weight.size()));
    const double lambda = opt.ridge_factor * static_cast<double>(d.x.rows());
    std::vector<BinaryLogistic> models;
    // Binary label spaces need one model; larger ones use one-vs-rest.
    std::vector<int> targets = classes.size() == 2 ? std::vector<int>{classes[1]} : classes;
    if (classes.size() == 1) targets.clear();
    for (int c : targets) {
      Eigen::VectorXd t(z.rows());
      for (Eigen::Index i = 0; i < z.rows(); ++i) t(i) = d.label[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
      models.push_back(fit_binary_logistic(z, t, w, lambda));
    }
    return std::make_shared<LogisticClassifier>(static_cast<int>(active.size()), classes, std::move(s), std::move(models));
  }

  void predict(std::span<const double> x, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    if (classes_.size() == 1) {
      out[static_cast<std::size_t>(classes_[0])] = 1.0;
      return;
    }
    thread_local Eigen::VectorXd z;
    std_.apply(x, z);
    if (classes_.size() == 2) {
      double p1 = models_[0].prob(z);
      out[static_cast<std::size_t>(classes_[0])] = 1.0 - p1;
      out[static_cast<std::size_t>(classes_[1])] = p1;
      return;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < classes_.size(); ++k) {
      double p = models_[k].prob(z);
      out[static_cast<std::size_t>(classes_[k])] = p;
      sum += p;
    }
    for (int c : classes_) out[static_cast<std::size_t>(c)] = sum > 0 ? out[static_cast<std::size_t>(c)] / sum : 1.0 / static_cast<double>(classes_.size());
  }

  json to_json() const override {
    json models = json::array();
    for (const auto& m : models_) models.push_back(binary_to_json(m));
    return json{{"type", "logistic"}, {"n_classes", n_classes_}, {"classes", classes_}, {"standardizer", std_.to_json()}, {"models", models}};
  }

  static std::shared_ptr<const Classifier> from_json(const json& j) {
    std::vector<BinaryLogistic> models;
    for (const auto& m : j.at("models")) models.push_back(binary_from_json(m));
    return std::make_shared<LogisticClassifier>(j.at("n_classes").get<int>(), j.at("classes").get<std::vector<int>>(),
                                                Standardizer::from_json(j.at("standardizer")), std::move(models));
  }

  const std::vector<BinaryLogistic>& models() const { return models_; }

 private:
  std::vector<int> classes_;
  Standardizer std_;
  std::vector<BinaryLogistic> models_;
};

// ===== k nearest neighbours =====

class KnnClassifier : public Classifier {
 public:
  KnnClassifier(int n_classes, int k, Standardizer s, Eigen::MatrixXd z, std::vector<int> label, std::vector<double> weight)
      : k_(k), std_(std::move(s)), z_(std::move(z)), label_(std::move(label)), weight_(std::move(weight)) {
    n_classes_ = n_classes;
  }

  static std::shared_ptr<const Classifier> fit(const TrainingSet& d, const std::vector<char>& active,
                                               const PredictorOptions& opt) {
    Standardizer s = Standardizer::fit(d.x);
    const auto n = static_cast<int>(d.x.rows());
    int k = opt.knn_k > 0 ? opt.knn_k : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    k = std::clamp(k, 1, n);
    return std::make_shared<KnnClassifier>(static_cast<int>(active.size()), k, s, s.apply(d.x), d.label, d.weight);
  }

  void predict(std::span<const double> x, std::span<double> out) const override {
    thread_local Eigen::VectorXd z;
    thread_local std::vector<std::pair<double, int>> dist;
    std_.apply(x, z);
    const auto n = static_cast<int>(z_.rows());
    dist.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(z_.row(i).transpose() - z).squaredNorm(), i};
    std::nth_element(dist.begin(), dist.begin() + (k_ - 1), dist.end());
    std::fill(out.begin(), out.end(), 0.0);
    double total = 0.0;
    for (int j = 0; j < k_; ++j) {
      int i = dist[static_cast<std::size_t>(j)].second;
      double w = weight_[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(label_[static_cast<std::size_t>(i)])] += w;
      total += w;
    }
    for (auto& v : out) v = total > 0 ? v / total : 0.0;
  }

  json to_json() const override {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(z_.rows()), std::vector<double>(static_cast<std::size_t>(z_.cols())));
    for (Eigen::Index i = 0; i < z_.rows(); ++i)
      for (Eigen::Index j = 0; j < z_.cols(); ++j) rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = z_(i, j);
    return json{{"type", "knn"}, {"n_classes", n_classes_}, {"k", k_}, {"standardizer", std_.to_json()},
                {"memo", rows}, {"label", label_}, {"weight", weight_}};
  }

  static std::shared_ptr<const Classifier> from_json(const json& j) {
    auto rows = j.at("memo").get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd z(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < rows[i].size(); ++c) z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    return std::make_shared<KnnClassifier>(j.at("n_classes").get<int>(), j.at("k").get<int>(),
                                           Standardizer::from_json(j.at("standardizer")), std::move(z),
                                           j.at("label").get<std::vector<int>>(), j.at("weight").get<std::vector<double>>());
  }

 private:
  int k_;
  Standardizer std_;
  Eigen::MatrixXd z_;
  std::vector<int> label_;
  std::vector<double> weight_;
};

// ===== bagged depth-2 trees =====

struct Tree {
  // node 0 is the root, nodes 1 and 2 its children; feature -1 means no split.
  std::array<int, 3> feature{-1, -1, -1};
  std::array<double, 3> threshold{0, 0, 0};
  std::array<std::vector<double>, 4> leaf;  // class distributions, left-left .. right-right

  int leaf_of(const Eigen::VectorXd& z) const {
    int side = feature[0] >= 0 && z(feature[0]) > threshold[0] ? 1 : 0;
    int node = 1 + side;
    int sub = feature[static_cast<std::size_t>(node)] >= 0 && z(feature[static_cast<std::size_t>(node)]) > threshold[static_cast<std::size_t>(node)] ? 1 : 0;
    return 2 * side + sub;
  }
};

struct Split {
  int feature = -1;
  double threshold = 0.0;
};

// Best weighted-Gini split of the rows `idx` (with weights w).
Split best_split(const Eigen::MatrixXd& z, const std::vector<int>& label, const std::vector<double>& w,
                 const std::vector<std::size_t>& idx, int n_classes, const std::vector<int>& features) {
  Split best;
  if (idx.size() < 2) return best;
  std::vector<double> total(static_cast<std::size_t>(n_classes), 0.0);
  double wt = 0.0;
  for (std::size_t i : idx) {
    total[static_cast<std::size_t>(label[i])] += w[i];
    wt += w[i];
  }
  auto gini_sum = [](const std::vector<double>& c, double s) {
    if (s <= 0) return 0.0;
    double q = 0.0;
    for (double v : c) q += v * v;
    return s - q / s;  // s * gini
  };
  double parent = gini_sum(total, wt);
  double best_gain = 1e-12 * std::max(1.0, wt);
  std::vector<std::size_t> order(idx);
  std::vector<double> left(static_cast<std::size_t>(n_classes));
  for (int f : features) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      double za = z(static_cast<Eigen::Index>(a), f), zb = z(static_cast<Eigen::Index>(b), f);
      return za < zb || (za == zb && a < b);
    });
    std::fill(left.begin(), left.end(), 0.0);
    double wl = 0.0;
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      std::size_t i = order[k];
      left[static_cast<std::size_t>(label[i])] += w[i];
      wl += w[i];
      double zi = z(static_cast<Eigen::Index>(i), f), zn = z(static_cast<Eigen::Index>(order[k + 1]), f);
      if (zn <= zi) continue;
      std::vector<double> right(total);
      for (std::size_t c = 0; c < right.size(); ++c) right[c] -= left[c];
      double gain = parent - gini_sum(left, wl) - gini_sum(right, wt - wl);
      if (gain > best_gain) {
        best_gain = gain;
        best.feature = f;
        best.threshold = 0.5 * (zi + zn);
      }
    }
  }
  return best;
}

class StumpEnsemble : public Classifier {
 public:
  StumpEnsemble(int n_classes, Standardizer s, std::vector<Tree> trees) : std_(std::move(s)), trees_(std::move(trees)) {
    n_classes_ = n_classes;
  }

  static std::shared_ptr<const Classifier> fit(const TrainingSet& d, const std::vector<char>& active,
                                               const PredictorOptions& opt, std::uint64_t seed) {
    const int C = static_cast<int>(active.size());
    Standardizer s = Standardizer::fit(d.x);
    Eigen::MatrixXd z = s.apply(d.x);
    const std::size_t n = static_cast<std::size_t>(z.rows());
    const int p = static_cast<int>(z.cols());
    const int mtry = p <= 16 ? p : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
    std::vector<Tree> trees;
    trees.reserve(static_cast<std::size_t>(opt.n_trees));
    for (int t = 0; t < opt.n_trees; ++t) {
      Rng rng = make_rng(seed, {0x7ee, static_cast<std::uint64_t>(t)});
      std::vector<double> w(n, 0.0);
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t k = 0; k < n; ++k) w[pick(rng)] += 1.0;
      for (std::size_t i = 0; i < n; ++i) w[i] *= d.weight[i];
      std::vector<std::size_t> all;
      for (std::size_t i = 0; i < n; ++i)
        if (w[i] > 0) all.push_back(i);

      auto features = [&]() {
        std::vector<int> f(static_cast<std::size_t>(p));
        std::iota(f.begin(), f.end(), 0);
        if (mtry < p) {
          std::shuffle(f.begin(), f.end(), rng);
          f.resize(static_cast<std::size_t>(mtry));
        }
        return f;
      };
      auto distribution = [&](const std::vector<std::size_t>& rows, const std::vector<double>& fallback) {
        std::vector<double> c(static_cast<std::size_t>(C), 0.0);
        double s2 = 0.0;
        for (std::size_t i : rows) {
          c[static_cast<std::size_t>(d.label[i])] += w[i];
          s2 += w[i];
        }
        if (s2 <= 0) return fallback;
        for (auto& v : c) v /= s2;
        return c;
      };
      auto partition = [&](const std::vector<std::size_t>& rows, Split sp) {
        std::array<std::vector<std::size_t>, 2> parts;
        for (std::size_t i : rows)
          parts[sp.feature >= 0 && z(static_cast<Eigen::Index>(i), sp.feature) > sp.threshold ? 1 : 0].push_back(i);
        return parts;
      };

      Tree tree;
      std::vector<double> root_dist = distribution(all, std::vector<double>(static_cast<std::size_t>(C), 1.0 / C));
      Split root = best_split(z, d.label, w, all, C, features());
      tree.feature[0] = root.feature;
      tree.threshold[0] = root.threshold;
      auto halves = partition(all, root);
      for (int side = 0; side < 2; ++side) {
        const auto& rows = halves[static_cast<std::size_t>(side)];
        std::vector<double> node_dist = distribution(rows, root_dist);
        Split sp = root.feature >= 0 ? best_split(z, d.label, w, rows, C, features()) : Split{};
        tree.feature[static_cast<std::size_t>(1 + side)] = sp.feature;
        tree.threshold[static_cast<std::size_t>(1 + side)] = sp.threshold;
        auto quarters = partition(rows, sp);
        for (int sub = 0; sub < 2; ++sub)
          tree.leaf[static_cast<std::size_t>(2 * side + sub)] = distribution(quarters[static_cast<std::size_t>(sub)], node_dist);
      }
      trees.push_back(std::move(tree));
    }
    return std::make_shared<StumpEnsemble>(C, std::move(s), std::move(trees));
  }

  void predict(std::span<const double> x, std::span<double> out) const override {
    thread_local Eigen::VectorXd z;
    std_.apply(x, z);
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : trees_) {
      const auto& leaf = t.leaf[static_cast<std::size_t>(t.leaf_of(z))];
      for (std::size_t c = 0; c < out.size(); ++c) out[c] += leaf[c];
    }
    for (auto& v : out) v /= static_cast<double>(trees_.size());
  }

  json to_json() const override {
    json trees = json::array();
    for (const auto& t : trees_)
      trees.push_back(json{{"feature", t.feature}, {"threshold", t.threshold}, {"leaf", t.leaf}});
    return json{{"type", "stumps"}, {"n_classes", n_classes_}, {"standardizer", std_.to_json()}, {"trees", trees}};
  }

  static std::shared_ptr<const Classifier> from_json(const json& j) {
    std::vector<Tree> trees;
    for (const auto& t : j.at("trees")) {
      Tree tree;
      tree.feature = t.at("feature").get<std::array<int, 3>>();
      tree.threshold = t.at("threshold").get<std::array<double, 3>>();
      tree.leaf = t.at("leaf").get<std::array<std::vector<double>, 4>>();
      trees.push_back(std::move(tree));
    }
    return std::make_shared<StumpEnsemble>(j.at("n_classes").get<int>(), Standardizer::from_json(j.at("standardizer")),
                                           std::move(trees));
  }

 private:
  Standardizer std_;
  std::vector<Tree> trees_;
};

}  // namespace

std::shared_ptr<const Classifier> fit_classifier(const TrainingSet& data, const std::vector<char>& active,
                                                 const PredictorOptions& opt, std::uint64_t seed) {
  if (data.x.rows() == 0) fail(ErrorCode::EmptyTraining, "no training units");
  if (std::none_of(active.begin(), active.end(), [](char a) { return a != 0; }))
    fail(ErrorCode::EmptyTraining, "empty label space");
  switch (opt.kind) {
    case PredictorKind::Logistic: return LogisticClassifier::fit(data, active, opt);
    case PredictorKind::Knn: return KnnClassifier::fit(data, active, opt);
    case PredictorKind::Stumps: return StumpEnsemble::fit(data, active, opt, seed);
  }
  fail(ErrorCode::InvalidArgument, "unknown predictor kind");
}

std::shared_ptr<const Classifier> classifier_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "logistic") return LogisticClassifier::from_json(j);
  if (type == "knn") return KnnClassifier::from_json(j);
  if (type == "stumps") return StumpEnsemble::from_json(j);
  fail(ErrorCode::InvalidArgument, "unknown classifier type '" + type + "'");
}

void clip_probabilities(std::span<double> p, const std::vector<char>& active, double clip) {
  if (!(clip > 0.0 && clip < 0.5)) fail(ErrorCode::InvalidArgument, "clip must lie in (0, 0.5)");
  std::size_t m = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (active[c]) ++m;
    else p[c] = 0.0;
  }
  if (m == 0) return;
  if (m == 1) {
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = active[c] ? 1.0 : 0.0;
    return;
  }
  if (static_cast<double>(m) * clip > 1.0) fail(ErrorCode::InvalidArgument, "clip too large for the number of classes");
  const double lo_b = clip, hi_b = 1.0 - clip;
  auto total = [&](double tau) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c)
      if (active[c]) s += std::clamp(p[c] - tau, lo_b, hi_b);
    return s;
  };
  // total() is nonincreasing in tau; bracket the root and bisect.
  double lo = -1.0, hi = 1.0;
  for (int it = 0; it < 200 && hi - lo > 0; ++it) {
    double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (total(mid) > 1.0) lo = mid;
    else hi = mid;
  }
  double tau = 0.5 * (lo + hi);
  double sum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c)
    if (active[c]) {
      p[c] = std::clamp(p[c] - tau, lo_b, hi_b);
      sum += p[c];
    }
  // Absorb the last rounding error in an unclamped entry.
  double err = 1.0 - sum;
  if (err != 0.0) {
    for (std::size_t c = 0; c < p.size(); ++c)
      if (active[c] && p[c] + err > lo_b && p[c] + err < hi_b) {
        p[c] += err;
        break;
      }
  }
}

double Prediction::event(Side side, int cell) const {
  if (side == Side::Exp) return exp_cells[static_cast<std::size_t>(cell)] * p_exp;
  return obs_cells[static_cast<std::size_t>(cell)] * p_obs;
}

Prediction PredictorSet::predict(std::span<const double> rsv) const {
  if (rsv.size() != rsv_dim)
    fail(ErrorCode::DimMismatch, "rsv has " + std::to_string(rsv.size()) + " entries, predictors expect " +
                                     std::to_string(rsv_dim));
  Prediction out;
  out.obs_cells.assign(active_y.size(), 0.0);
  out.exp_cells.assign(active_d.size(), 0.0);
  std::vector<double> tags(3, 0.0);
  pred_y->predict(rsv, out.obs_cells);
  pred_d->predict(rsv, out.exp_cells);
  pred_s->predict(rsv, tags);
  clip_probabilities(out.obs_cells, active_y, options.clip);
  clip_probabilities(out.exp_cells, active_d, options.clip);
  clip_probabilities(tags, active_s, options.clip);
  out.p_exp = tags[0] + tags[2];
  out.p_obs = tags[1] + tags[2];
  return out;
}

json PredictorSet::to_json() const {
  auto mask = [](const std::vector<char>& m) { return std::vector<int>(m.begin(), m.end()); };
  return json{{"layout", static_cast<int>(layout)}, {"k_outcomes", k_outcomes}, {"rsv_dim", rsv_dim},
              {"options", rsv::to_json(options)},      {"active_y", mask(active_y)},     {"active_d", mask(active_d)},
              {"active_s", mask(active_s)},             {"pred_y", pred_y->to_json()},    {"pred_d", pred_d->to_json()},
              {"pred_s", pred_s->to_json()}};
}

PredictorSet PredictorSet::from_json(const json& j) {
  auto mask = [](const json& v) {
    auto m = v.get<std::vector<int>>();
    return std::vector<char>(m.begin(), m.end());
  };
  PredictorSet ps;
  ps.layout = static_cast<CellLayout>(j.at("layout").get<int>());
  ps.k_outcomes = j.at("k_outcomes").get<int>();
  ps.rsv_dim = j.at("rsv_dim").get<std::size_t>();
  ps.options = options_from_json(j.at("options"));
  ps.active_y = mask(j.at("active_y"));
  ps.active_d = mask(j.at("active_d"));
  ps.active_s = mask(j.at("active_s"));
  ps.pred_y = classifier_from_json(j.at("pred_y"));
  ps.pred_d = classifier_from_json(j.at("pred_d"));
  ps.pred_s = classifier_from_json(j.at("pred_s"));
  return ps;
}

namespace {

int tag_class(SampleTag t) {
  switch (t) {
    case SampleTag::Exp: return 0;
    case SampleTag::Obs: return 1;
    case SampleTag::Both: return 2;
  }
  return 0;
}

int outcome_of_cell(int cell, CellLayout layout) { return layout == CellLayout::Complete ? cell / 2 : cell; }

}  // namespace

PredictorSet fit_predictors(const Dataset& ds, std::span<const std::size_t> rows, CellLayout layout,
                            const PredictorOptions& opt) {
  if (!opt.class_weights.empty()) {
    if (opt.class_weights.size() != static_cast<std::size_t>(ds.k_outcomes))
      fail(ErrorCode::InvalidArgument, "class_weights needs one weight per outcome class");
    for (double w : opt.class_weights)
      if (!(w > 0.0)) fail(ErrorCode::InvalidArgument, "class weights must be positive");
  }
  PredictorSet ps;
  ps.layout = layout;
  ps.k_outcomes = ds.k_outcomes;
  ps.rsv_dim = ds.rsv_dim;
  ps.options = opt;
  ps.active_y.assign(static_cast<std::size_t>(obs_cell_count(layout, ds.k_outcomes)), 0);
  ps.active_d.assign(static_cast<std::size_t>(exp_cell_count(layout)), 0);
  ps.active_s.assign(3, 0);
  for (const auto& u : ds.units) {
    int oc = obs_cell(u, layout), ec = exp_cell(u, layout);
    if (oc >= 0 && oc < static_cast<int>(ps.active_y.size())) ps.active_y[static_cast<std::size_t>(oc)] = 1;
    if (ec >= 0) ps.active_d[static_cast<std::size_t>(ec)] = 1;
    ps.active_s[static_cast<std::size_t>(tag_class(u.sample))] = 1;
  }
  // A binary treatment label space is {0,1} even if one arm is missing, so a
  // single-class training set degenerates to a clipped constant.
  if (layout != CellLayout::Instrument) ps.active_d.assign(2, 1);

  auto build = [&](auto select, auto label_of, auto weight_of) {
    TrainingSet t;
    std::vector<std::size_t> keep;
    for (std::size_t i : rows)
      if (select(ds.units[i])) keep.push_back(i);
    t.x.resize(static_cast<Eigen::Index>(keep.size()), static_cast<Eigen::Index>(ds.rsv_dim));
    for (std::size_t r = 0; r < keep.size(); ++r) {
      const auto& u = ds.units[keep[r]];
      if (u.rsv.size() != ds.rsv_dim) fail(ErrorCode::DimMismatch, "rsv dimension differs from dataset");
      for (std::size_t j = 0; j < ds.rsv_dim; ++j) t.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = u.rsv[j];
      t.label.push_back(label_of(u));
      t.weight.push_back(weight_of(u));
    }
    return t;
  };
  auto unit_weight = [](const UnitRecord&) { return 1.0; };

  TrainingSet ty = build([&](const UnitRecord& u) { return obs_cell(u, layout) >= 0; },
                         [&](const UnitRecord& u) { return obs_cell(u, layout); },
                         [&](const UnitRecord& u) {
                           if (opt.class_weights.empty()) return 1.0;
                           return opt.class_weights[static_cast<std::size_t>(outcome_of_cell(obs_cell(u, layout), layout))];
                         });
  if (ty.label.empty()) fail(ErrorCode::EmptyTraining, "no observational units in training data");
  TrainingSet td = build([&](const UnitRecord& u) { return exp_cell(u, layout) >= 0; },
                         [&](const UnitRecord& u) { return exp_cell(u, layout); }, unit_weight);
  if (td.label.empty()) fail(ErrorCode::EmptyTraining, "no experimental units in training data");
  TrainingSet ts = build([](const UnitRecord&) { return true; },
                         [](const UnitRecord& u) { return tag_class(u.sample); }, unit_weight);
  if (ts.label.empty()) fail(ErrorCode::EmptyTraining, "no training units");

  ps.pred_y = fit_classifier(ty, ps.active_y, opt, opt.seed ^ 0x1ULL);
  ps.pred_d = fit_classifier(td, ps.active_d, opt, opt.seed ^ 0x2ULL);
  ps.pred_s = fit_classifier(ts, ps.active_s, opt, opt.seed ^ 0x3ULL);
  return ps;
}

PredictAll predict_all(const PredictorSet& ps, const UnitRecord& u) {
  Prediction p = ps.predict(u);
  PredictAll out;
  out.prob_y = p.obs_cells;
  out.prob_d = ps.layout == CellLayout::Instrument ? p.exp_cells[2] + p.exp_cells[3] : p.exp_cells[1];
  out.prob_s = p.p_exp;
  return out;
}

}  // namespace rsv
