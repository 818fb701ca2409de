#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "auss/json_io.hpp"

namespace auss::ml {

using Matrix = std::vector<std::vector<double>>;

/// CART regression tree, squared-error splits, x[feature] <= threshold goes left.
class RegressionTree {
public:
  struct Node {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    double value = 0.0; // leaf prediction (mean target)
    int left = -1;
    int right = -1;

    bool operator==(const Node &) const = default;
  };

  /// Fits on the rows named by `sample` (duplicates allowed, as in bootstrap draws).
  void fit(const Matrix &x, std::span<const double> y, std::span<const std::size_t> sample,
           std::size_t max_depth, std::size_t min_samples_leaf);

  double predict(std::span<const double> row) const;
  bool fitted() const { return !nodes_.empty(); }
  const std::vector<Node> &nodes() const { return nodes_; }

  Json to_json() const;
  static RegressionTree from_json(const Json &j);

  bool operator==(const RegressionTree &) const = default;

private:
  int build(const Matrix &x, std::span<const double> y, std::vector<std::size_t> &idx,
            std::size_t begin, std::size_t end, std::size_t depth, std::size_t max_depth,
            std::size_t min_samples_leaf);
  Json node_json(int node) const;
  static int node_from_json(const Json &j, std::vector<Node> &nodes);

  std::vector<Node> nodes_;
};

struct BaggedTreesConfig {
  std::size_t n_trees = 25;
  std::size_t max_depth = 4;
  double bootstrap_fraction = 0.8;
  std::size_t min_samples_leaf = 2;
  std::uint64_t seed = 0;
};

/// Bootstrap-aggregated regression trees; prediction is the mean over trees.
class BaggedTrees {
public:
  void fit(const Matrix &x, std::span<const double> y, const BaggedTreesConfig &config);
  double predict(std::span<const double> row) const;
  bool fitted() const { return !trees_.empty(); }
  const std::vector<RegressionTree> &trees() const { return trees_; }

  Json to_json() const;
  static BaggedTrees from_json(const Json &j);

  bool operator==(const BaggedTrees &) const = default;

private:
  std::vector<RegressionTree> trees_;
};

struct LogisticConfig {
  double learning_rate = 0.5;
  std::size_t iterations = 2000;
  double l2 = 0.0;
  std::uint64_t seed = 0;
};

/**
 * Binary logistic regression fit by full-batch gradient descent on the mean
 * log-loss. Inputs are standardized with the training means and scales;
 * weights live in standardized space.
 */
class LogisticModel {
public:
  LogisticModel() = default;

  /// Model over raw features: score = logistic(bias + weights . x).
  static LogisticModel from_weights(std::vector<double> weights, double bias);

  void fit(const Matrix &x, std::span<const int> labels, const LogisticConfig &config);

  /// Throws InvalidArgument on a feature-length mismatch or an unfitted model.
  double predict_proba(std::span<const double> row) const;
  double linear_score(std::span<const double> row) const;

  bool fitted() const { return !weights_.empty(); }
  std::size_t feature_count() const { return weights_.size(); }
  const std::vector<double> &weights() const { return weights_; }
  double bias() const { return bias_; }
  /// Effective weight on raw feature i (weights_[i] / scale_[i]).
  double raw_weight(std::size_t i) const { return weights_.at(i) / scales_.at(i); }

  Json to_json() const;
  static LogisticModel from_json(const Json &j);

  bool operator==(const LogisticModel &) const = default;

private:
  std::vector<double> weights_;
  double bias_ = 0.0;
  std::vector<double> means_;
  std::vector<double> scales_;
};

} // namespace auss::ml
