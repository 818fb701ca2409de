#include "auss/ml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "auss/random.hpp"
#include "auss/stats.hpp"

namespace auss::ml {

namespace {

void check_shape(const Matrix &x, std::size_t n_targets) {
  if (x.empty()) {
    throw InvalidArgument("training set is empty");
  }
  if (x.size() != n_targets) {
    throw InvalidArgument("feature rows and targets differ in length");
  }
  const std::size_t d = x.front().size();
  for (const auto &row : x) {
    if (row.size() != d) {
      throw InvalidArgument("ragged feature matrix");
    }
  }
}

} // namespace

void RegressionTree::fit(const Matrix &x, std::span<const double> y,
                         std::span<const std::size_t> sample, std::size_t max_depth,
                         std::size_t min_samples_leaf) {
  check_shape(x, y.size());
  if (sample.empty()) {
    throw InvalidArgument("tree sample is empty");
  }
  nodes_.clear();
  std::vector<std::size_t> idx(sample.begin(), sample.end());
  build(x, y, idx, 0, idx.size(), 0, max_depth, std::max<std::size_t>(1, min_samples_leaf));
}

int RegressionTree::build(const Matrix &x, std::span<const double> y,
                          std::vector<std::size_t> &idx, std::size_t begin, std::size_t end,
                          std::size_t depth, std::size_t max_depth, std::size_t min_samples_leaf) {
  const std::size_t n = end - begin;
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    sum += y[idx[i]];
  }
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{-1, 0.0, sum / static_cast<double>(n), -1, -1});
  if (depth >= max_depth || n < 2 * min_samples_leaf) {
    return self;
  }

  // Best split by reduction of squared error: maximize sum_l^2/n_l + sum_r^2/n_r.
  const double parent_score = sum * sum / static_cast<double>(n);
  double best_gain = 1e-12;
  int best_feature = -1;
  double best_threshold = 0.0;
  const std::size_t d = x.front().size();
  std::vector<std::size_t> order(idx.begin() + begin, idx.begin() + end);
  for (std::size_t f = 0; f < d; ++f) {
    std::stable_sort(order.begin(), order.end(),
                     [&x, f](std::size_t a, std::size_t b) { return x[a][f] < x[b][f]; });
    double left_sum = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      left_sum += y[order[k]];
      const std::size_t n_left = k + 1;
      const std::size_t n_right = n - n_left;
      const double here = x[order[k]][f];
      const double next = x[order[k + 1]][f];
      if (here == next || n_left < min_samples_leaf || n_right < min_samples_leaf) {
        continue;
      }
      const double right_sum = sum - left_sum;
      const double score = left_sum * left_sum / static_cast<double>(n_left) +
                           right_sum * right_sum / static_cast<double>(n_right);
      const double gain = score - parent_score;
      if (gain > best_gain) {
        best_gain = gain;
        best_feature = static_cast<int>(f);
        best_threshold = 0.5 * (here + next);
      }
    }
  }
  if (best_feature < 0) {
    return self;
  }

  auto mid = std::stable_partition(idx.begin() + begin, idx.begin() + end,
                                   [&x, best_feature, best_threshold](std::size_t i) {
                                     return x[i][best_feature] <= best_threshold;
                                   });
  const auto split = static_cast<std::size_t>(mid - idx.begin());
  const int left = build(x, y, idx, begin, split, depth + 1, max_depth, min_samples_leaf);
  const int right = build(x, y, idx, split, end, depth + 1, max_depth, min_samples_leaf);
  nodes_[self].feature = best_feature;
  nodes_[self].threshold = best_threshold;
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

double RegressionTree::predict(std::span<const double> row) const {
  if (nodes_.empty()) {
    throw InvalidArgument("regression tree is not fitted");
  }
  int node = 0;
  while (nodes_[node].feature >= 0) {
    const auto f = static_cast<std::size_t>(nodes_[node].feature);
    if (f >= row.size()) {
      throw InvalidArgument("feature row too short for tree");
    }
    node = row[f] <= nodes_[node].threshold ? nodes_[node].left : nodes_[node].right;
  }
  return nodes_[node].value;
}

Json RegressionTree::node_json(int node) const {
  const Node &n = nodes_[node];
  Json j;
  if (n.feature < 0) {
    j["value"] = n.value;
    return j;
  }
  j["feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["value"] = n.value;
  j["left"] = node_json(n.left);
  j["right"] = node_json(n.right);
  return j;
}

Json RegressionTree::to_json() const {
  if (nodes_.empty()) {
    return Json::object();
  }
  return node_json(0);
}

int RegressionTree::node_from_json(const Json &j, std::vector<Node> &nodes) {
  const int self = static_cast<int>(nodes.size());
  nodes.push_back(Node{-1, 0.0, require(j, "value").get<double>(), -1, -1});
  if (j.contains("feature")) {
    const int feature = require(j, "feature").get<int>();
    const double threshold = require(j, "threshold").get<double>();
    const int left = node_from_json(require(j, "left"), nodes);
    const int right = node_from_json(require(j, "right"), nodes);
    nodes[self].feature = feature;
    nodes[self].threshold = threshold;
    nodes[self].left = left;
    nodes[self].right = right;
  }
  return self;
}

RegressionTree RegressionTree::from_json(const Json &j) {
  RegressionTree t;
  if (!j.empty()) {
    node_from_json(j, t.nodes_);
  }
  return t;
}

void BaggedTrees::fit(const Matrix &x, std::span<const double> y, const BaggedTreesConfig &config) {
  check_shape(x, y.size());
  if (config.n_trees == 0) {
    throw InvalidArgument("bagged trees need at least one tree");
  }
  if (!(config.bootstrap_fraction > 0.0 && config.bootstrap_fraction <= 1.0)) {
    throw InvalidArgument("bootstrap_fraction must be in (0, 1]");
  }
  Rng rng(config.seed);
  const auto n = x.size();
  const auto draw = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::lround(config.bootstrap_fraction * static_cast<double>(n))));
  trees_.assign(config.n_trees, RegressionTree{});
  std::vector<std::size_t> sample(draw);
  for (auto &tree : trees_) {
    for (auto &s : sample) {
      s = rng.uniform_index(n);
    }
    tree.fit(x, y, sample, config.max_depth, config.min_samples_leaf);
  }
}

double BaggedTrees::predict(std::span<const double> row) const {
  if (trees_.empty()) {
    throw InvalidArgument("bagged trees are not fitted");
  }
  double sum = 0.0;
  for (const auto &t : trees_) {
    sum += t.predict(row);
  }
  return sum / static_cast<double>(trees_.size());
}

Json BaggedTrees::to_json() const {
  Json trees = Json::array();
  for (const auto &t : trees_) {
    trees.push_back(t.to_json());
  }
  Json j;
  j["trees"] = std::move(trees);
  return j;
}

BaggedTrees BaggedTrees::from_json(const Json &j) {
  BaggedTrees b;
  for (const auto &t : require(j, "trees")) {
    b.trees_.push_back(RegressionTree::from_json(t));
  }
  return b;
}

LogisticModel LogisticModel::from_weights(std::vector<double> weights, double bias) {
  LogisticModel m;
  m.means_.assign(weights.size(), 0.0);
  m.scales_.assign(weights.size(), 1.0);
  m.weights_ = std::move(weights);
  m.bias_ = bias;
  return m;
}

void LogisticModel::fit(const Matrix &x, std::span<const int> labels, const LogisticConfig &config) {
  check_shape(x, labels.size());
  const std::size_t n = x.size();
  const std::size_t d = x.front().size();

  means_.assign(d, 0.0);
  scales_.assign(d, 1.0);
  for (std::size_t f = 0; f < d; ++f) {
    double m = 0.0;
    for (const auto &row : x) {
      m += row[f];
    }
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const auto &row : x) {
      var += (row[f] - m) * (row[f] - m);
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    means_[f] = m;
    scales_[f] = sd > 1e-12 ? sd : 1.0;
  }
  Matrix z(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < d; ++f) {
      z[i][f] = (x[i][f] - means_[f]) / scales_[f];
    }
  }

  Rng rng(config.seed);
  weights_.assign(d, 0.0);
  for (auto &w : weights_) {
    w = rng.uniform(-0.01, 0.01);
  }
  bias_ = 0.0;

  std::vector<double> grad(d);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_bias = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = bias_;
      for (std::size_t f = 0; f < d; ++f) {
        s += weights_[f] * z[i][f];
      }
      const double err = stats::logistic(s) - static_cast<double>(labels[i]);
      grad_bias += err;
      for (std::size_t f = 0; f < d; ++f) {
        grad[f] += err * z[i][f];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    bias_ -= config.learning_rate * grad_bias * inv_n;
    for (std::size_t f = 0; f < d; ++f) {
      weights_[f] -= config.learning_rate * (grad[f] * inv_n + config.l2 * weights_[f]);
    }
  }
}

double LogisticModel::linear_score(std::span<const double> row) const {
  if (weights_.empty()) {
    throw InvalidArgument("logistic model is not fitted");
  }
  if (row.size() != weights_.size()) {
    throw InvalidArgument("feature length " + std::to_string(row.size()) + " does not match model (" +
                          std::to_string(weights_.size()) + ")");
  }
  double s = bias_;
  for (std::size_t f = 0; f < row.size(); ++f) {
    s += weights_[f] * (row[f] - means_[f]) / scales_[f];
  }
  return s;
}

double LogisticModel::predict_proba(std::span<const double> row) const {
  return stats::logistic(linear_score(row));
}

Json LogisticModel::to_json() const {
  Json j;
  j["weights"] = weights_;
  j["bias"] = bias_;
  j["means"] = means_;
  j["scales"] = scales_;
  return j;
}

LogisticModel LogisticModel::from_json(const Json &j) {
  LogisticModel m;
  m.weights_ = require(j, "weights").get<std::vector<double>>();
  m.bias_ = require(j, "bias").get<double>();
  m.means_ = require(j, "means").get<std::vector<double>>();
  m.scales_ = require(j, "scales").get<std::vector<double>>();
  if (m.means_.size() != m.weights_.size() || m.scales_.size() != m.weights_.size()) {
    throw DataError("logistic model arrays differ in length");
  }
  return m;
}

} // namespace auss::ml
