#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/dataset.hpp"

namespace rarity {

// Gini impurity 1 - sum p_c^2. Throws on all-zero counts.
double gini(std::span<const std::uint64_t> class_counts);

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::array<std::uint32_t, 2> counts{};  // training rows routed here, by class
  double gain = 0.0;                       // weighted impurity decrease of the split

  bool is_leaf() const { return feature < 0; }
};

struct CartConstraints {
  std::size_t min_split_obs = 2;  // minimum rows in each child
  std::optional<int> max_depth;
};

enum class SplitRule { gini, extratrees };

std::string_view to_string(SplitRule rule);
SplitRule parse_split_rule(std::string_view text);

// Binary classification tree stored as a node arena; node 0 is the root.
struct DecisionTree {
  std::vector<std::string> feature_names;
  std::vector<TreeNode> nodes;
  double cp = 0.0;
  CartConstraints constraints;

  std::size_t leaf_count() const;
  int depth() const;
};

struct TreePrediction {
  int cls = 0;
  double probability = 0.0;  // positive share of the leaf
};

// Greedy CART growth. At each impure node the best gini-gain split over all
// features and midpoint thresholds is found (ties: lowest feature index, then
// lowest threshold); it is kept when its impurity decrease, relative to the
// root's total impurity, exceeds cp (any split, zero-gain included, when
// cp = 0) and both children hold at least min_split_obs rows.
DecisionTree fit_cart(const Dataset& train, std::string_view label, double cp,
                      const CartConstraints& constraints = {});

// `row` is aligned with tree.feature_names. Routing: value <= threshold goes left.
TreePrediction predict_tree(const DecisionTree& tree, std::span<const double> row);
// Features matched by name.
std::vector<TreePrediction> predict_tree(const DecisionTree& tree, const Dataset& ds);

// Indented text rendering of splits and leaf counts.
std::string render_tree(const DecisionTree& tree);

struct ForestHyper {
  std::size_t n_trees = 500;
  std::size_t mtry = 1;
  std::size_t min_node = 100;  // minimum rows in each child
  SplitRule splitrule = SplitRule::gini;
  std::uint64_t seed = 0;
  bool bootstrap = true;  // false only for testing
  unsigned threads = 0;   // 0 = hardware concurrency
};

struct Forest {
  std::vector<DecisionTree> trees;
  ForestHyper hyper;
  std::vector<std::uint64_t> tree_seeds;
  std::vector<std::string> feature_names;
};

// Bagged ensemble: each tree grows on an n-row bootstrap resample with mtry
// features drawn per split. Trees are independent given their seeds, so the
// result does not depend on the thread count.
Forest fit_forest(const Dataset& train, std::string_view label, const ForestHyper& hyper);

struct ForestPrediction {
  int cls = 0;
  double score = 0.0;  // fraction of trees voting positive
};

// Majority vote; an exact tie goes to the negative class.
ForestPrediction predict_forest(const Forest& forest, std::span<const double> row);
std::vector<ForestPrediction> predict_forest(const Forest& forest, const Dataset& ds);

// Normalized per-feature importance (sums to 1): total gini gain per split
// feature for trees and forests. All-zero importance falls back to uniform.
std::vector<double> variable_importance(const DecisionTree& tree);
std::vector<double> variable_importance(const Forest& forest);

}  // namespace rarity
