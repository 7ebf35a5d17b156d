#include "rarity/trees.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "rarity/common.hpp"
#include "rarity/linear.hpp"
#include "rarity/random.hpp"

namespace rarity {

double gini(std::span<const std::uint64_t> class_counts) {
  double total = 0.0;
  for (auto c : class_counts) total += static_cast<double>(c);
  if (total <= 0.0) throw ValidationError("gini: all class counts are zero");
  double sum_sq = 0.0;
  for (auto c : class_counts) {
    const double p = static_cast<double>(c) / total;
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

std::string_view to_string(SplitRule rule) {
  return rule == SplitRule::gini ? "gini" : "extratrees";
}

SplitRule parse_split_rule(std::string_view text) {
  if (text == "gini") return SplitRule::gini;
  if (text == "extratrees") return SplitRule::extratrees;
  throw ValidationError("unknown split rule '" + std::string(text) + "'");
}

std::size_t DecisionTree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    if (n.is_leaf()) continue;
    d[n.left] = d[i] + 1;
    d[n.right] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

namespace {

// n * gini for a two-class count pair.
double weighted_impurity(double c0, double c1) {
  const double n = c0 + c1;
  return n > 0 ? n - (c0 * c0 + c1 * c1) / n : 0.0;
}

struct GrowParams {
  double cp = 0.0;
  std::size_t min_child = 1;
  std::optional<int> max_depth;
  std::size_t mtry = 0;  // 0 = every feature
  SplitRule rule = SplitRule::gini;
};

struct Candidate {
  int feature = -1;
  double threshold = 0.0;
  double gain = -INFINITY;
};

// Column-major copy of the training features with binary labels.
struct TrainingMatrix {
  std::vector<std::vector<double>> cols;
  const LabelVector* y = nullptr;
  std::size_t rows = 0;
};

TrainingMatrix make_matrix(const Dataset& train, std::string_view label) {
  for (const auto& f : train.features()) {
    if (f.kind == FeatureKind::categorical) {
      throw ValidationError("feature '" + f.name + "' is categorical; one-hot encode it first");
    }
  }
  TrainingMatrix m;
  m.y = &train.label(label);
  m.rows = train.rows();
  m.cols.resize(train.cols());
  for (std::size_t j = 0; j < train.cols(); ++j) m.cols[j] = train.column(j);
  return m;
}

class TreeGrower {
 public:
  TreeGrower(const TrainingMatrix& data, const GrowParams& params, Rng* rng)
      : data_(data), params_(params), rng_(rng) {}

  std::vector<TreeNode> grow(std::vector<std::uint32_t> sample) {
    sample_ = std::move(sample);
    nodes_.clear();
    if (sample_.empty()) throw ValidationError("cannot grow a tree on an empty sample");
    nodes_.push_back(make_node(0, sample_.size()));
    const auto& root = nodes_[0];
    root_impurity_ = weighted_impurity(root.counts[0], root.counts[1]);
    root_rows_ = static_cast<double>(sample_.size());

    struct Pending {
      int node;
      std::size_t begin, end;
      int depth;
    };
    std::vector<Pending> stack{{0, 0, sample_.size(), 0}};
    while (!stack.empty()) {
      auto [id, begin, end, depth] = stack.back();
      stack.pop_back();
      auto split = try_split(nodes_[id], begin, end, depth);
      if (!split) continue;
      const auto f = static_cast<std::size_t>(split->feature);
      const auto& col = data_.cols[f];
      auto mid_it = std::partition(sample_.begin() + begin, sample_.begin() + end,
                                   [&](std::uint32_t r) { return col[r] <= split->threshold; });
      const auto mid = static_cast<std::size_t>(mid_it - sample_.begin());
      const int left = static_cast<int>(nodes_.size());
      nodes_.push_back(make_node(begin, mid));
      nodes_.push_back(make_node(mid, end));
      auto& node = nodes_[id];
      node.feature = split->feature;
      node.threshold = split->threshold;
      node.gain = split->gain;
      node.left = left;
      node.right = left + 1;
      // Right pushed first so the left subtree is expanded first.
      stack.push_back({left + 1, mid, end, depth + 1});
      stack.push_back({left, begin, mid, depth + 1});
    }
    return std::move(nodes_);
  }

 private:
  TreeNode make_node(std::size_t begin, std::size_t end) const {
    TreeNode node;
    for (std::size_t i = begin; i < end; ++i) ++node.counts[(*data_.y)[sample_[i]]];
    return node;
  }

  std::optional<Candidate> try_split(const TreeNode& node, std::size_t begin, std::size_t end,
                                     int depth) {
    if (node.counts[0] == 0 || node.counts[1] == 0) return std::nullopt;
    if (params_.max_depth && depth >= *params_.max_depth) return std::nullopt;
    const std::size_t n = end - begin;
    if (n < 2 * params_.min_child) return std::nullopt;

    const std::size_t nfeat = data_.cols.size();
    std::vector<std::size_t> features(nfeat);
    std::iota(features.begin(), features.end(), 0);
    if (params_.mtry > 0 && params_.mtry < nfeat) {
      for (std::size_t i = 0; i < params_.mtry; ++i) {
        std::swap(features[i], features[i + rng_->index(nfeat - i)]);
      }
      features.resize(params_.mtry);
      std::sort(features.begin(), features.end());
    }

    Candidate best;
    for (auto f : features) {
      if (params_.rule == SplitRule::gini) {
        best_threshold(f, node, begin, end, best);
      } else {
        random_threshold(f, node, begin, end, best);
      }
    }
    if (best.feature < 0) return std::nullopt;
    // A positive cp must be strictly exceeded; cp = 0 admits zero-gain splits.
    // The slack absorbs rounding in the gain sums.
    const double slack = 1e-12 * root_rows_;
    if (params_.cp > 0.0) {
      if (best.gain <= params_.cp * root_impurity_ + slack) return std::nullopt;
    } else if (best.gain < -slack) {
      return std::nullopt;
    }
    return best;
  }

  void consider(std::size_t f, double threshold, double gain, Candidate& best) const {
    if (gain > best.gain) best = {static_cast<int>(f), threshold, gain};
  }

  void best_threshold(std::size_t f, const TreeNode& node, std::size_t begin, std::size_t end,
                      Candidate& best) {
    const auto& col = data_.cols[f];
    const auto& y = *data_.y;
    buffer_.clear();
    for (std::size_t i = begin; i < end; ++i) {
      buffer_.emplace_back(col[sample_[i]], y[sample_[i]]);
    }
    std::sort(buffer_.begin(), buffer_.end());
    const double total = weighted_impurity(node.counts[0], node.counts[1]);
    const std::size_t n = buffer_.size();
    double l0 = 0, l1 = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      (buffer_[i].second ? l1 : l0) += 1;
      const double a = buffer_[i].first;
      const double b = buffer_[i + 1].first;
      if (!(a < b)) continue;
      const std::size_t n_left = i + 1;
      if (n_left < params_.min_child || n - n_left < params_.min_child) continue;
      const double r0 = node.counts[0] - l0;
      const double r1 = node.counts[1] - l1;
      const double gain = total - weighted_impurity(l0, l1) - weighted_impurity(r0, r1);
      double mid = a + (b - a) / 2.0;
      if (!(mid < b)) mid = a;
      consider(f, mid, gain, best);
    }
  }

  void random_threshold(std::size_t f, const TreeNode& node, std::size_t begin, std::size_t end,
                        Candidate& best) {
    const auto& col = data_.cols[f];
    const auto& y = *data_.y;
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = begin; i < end; ++i) {
      lo = std::min(lo, col[sample_[i]]);
      hi = std::max(hi, col[sample_[i]]);
    }
    if (!(lo < hi)) return;
    const double cut = rng_->uniform(lo, hi);
    double l0 = 0, l1 = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (col[sample_[i]] <= cut) (y[sample_[i]] ? l1 : l0) += 1;
    }
    const auto n_left = static_cast<std::size_t>(l0 + l1);
    const std::size_t n = end - begin;
    if (n_left < params_.min_child || n - n_left < params_.min_child) return;
    const double total = weighted_impurity(node.counts[0], node.counts[1]);
    const double gain = total - weighted_impurity(l0, l1) -
                        weighted_impurity(node.counts[0] - l0, node.counts[1] - l1);
    consider(f, cut, gain, best);
  }

  const TrainingMatrix& data_;
  GrowParams params_;
  Rng* rng_;
  std::vector<std::uint32_t> sample_;
  std::vector<TreeNode> nodes_;
  std::vector<std::pair<double, std::uint8_t>> buffer_;
  double root_impurity_ = 0.0;
  double root_rows_ = 0.0;
};

const TreeNode& route(const DecisionTree& tree, std::span<const double> row) {
  if (tree.nodes.empty()) throw ValidationError("predict: unfitted tree");
  const TreeNode* node = &tree.nodes[0];
  while (!node->is_leaf()) {
    const auto f = static_cast<std::size_t>(node->feature);
    if (f >= row.size()) throw ValidationError("predict: row lacks split feature");
    node = &tree.nodes[row[f] <= node->threshold ? node->left : node->right];
  }
  return *node;
}

TreePrediction leaf_prediction(const TreeNode& leaf) {
  const double n = static_cast<double>(leaf.counts[0]) + leaf.counts[1];
  TreePrediction p;
  p.probability = n > 0 ? leaf.counts[1] / n : 0.0;
  p.cls = leaf.counts[1] > leaf.counts[0] ? 1 : 0;
  return p;
}

std::vector<double> aligned_row(const Dataset& ds, std::size_t r,
                                const std::vector<std::size_t>& cols) {
  std::vector<double> row(cols.size());
  for (std::size_t j = 0; j < cols.size(); ++j) row[j] = ds.at(r, cols[j]);
  return row;
}

}  // namespace

DecisionTree fit_cart(const Dataset& train, std::string_view label, double cp,
                      const CartConstraints& constraints) {
  if (train.rows() == 0) throw ValidationError("fit_cart: empty dataset");
  if (!(cp >= 0.0)) throw ValidationError("fit_cart: cp must be >= 0");
  if (constraints.min_split_obs < 1) throw ValidationError("fit_cart: min_split_obs must be >= 1");
  const auto data = make_matrix(train, label);
  GrowParams params;
  params.cp = cp;
  params.min_child = constraints.min_split_obs;
  params.max_depth = constraints.max_depth;
  std::vector<std::uint32_t> sample(train.rows());
  std::iota(sample.begin(), sample.end(), 0u);
  TreeGrower grower(data, params, nullptr);
  DecisionTree tree;
  tree.feature_names = train.feature_names();
  tree.cp = cp;
  tree.constraints = constraints;
  tree.nodes = grower.grow(std::move(sample));
  return tree;
}

TreePrediction predict_tree(const DecisionTree& tree, std::span<const double> row) {
  if (row.size() < tree.feature_names.size()) {
    throw ValidationError("predict: row has fewer cells than the tree has features");
  }
  return leaf_prediction(route(tree, row));
}

std::vector<TreePrediction> predict_tree(const DecisionTree& tree, const Dataset& ds) {
  const auto cols = map_features(ds, tree.feature_names);
  std::vector<TreePrediction> out(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) out[r] = predict_tree(tree, aligned_row(ds, r, cols));
  return out;
}

std::string render_tree(const DecisionTree& tree) {
  std::ostringstream out;
  if (tree.nodes.empty()) return "(empty tree)\n";
  struct Item {
    int id;
    int depth;
    std::string edge;
  };
  std::vector<Item> stack{{0, 0, "root"}};
  while (!stack.empty()) {
    auto [id, depth, edge] = stack.back();
    stack.pop_back();
    const auto& n = tree.nodes[id];
    out << std::string(2 * depth, ' ') << edge << ": ";
    const auto pred = leaf_prediction(n);
    if (n.is_leaf()) {
      out << "leaf n=" << n.counts[0] + n.counts[1] << " counts=[" << n.counts[0] << ","
          << n.counts[1] << "] class=" << pred.cls << " p=" << format_double(pred.probability)
          << '\n';
      continue;
    }
    const auto& name = tree.feature_names[n.feature];
    out << "split " << name << " <= " << format_double(n.threshold) << " n="
        << n.counts[0] + n.counts[1] << " counts=[" << n.counts[0] << "," << n.counts[1] << "]\n";
    stack.push_back({n.right, depth + 1, name + " > " + format_double(n.threshold)});
    stack.push_back({n.left, depth + 1, name + " <= " + format_double(n.threshold)});
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Forest

Forest fit_forest(const Dataset& train, std::string_view label, const ForestHyper& hyper) {
  if (train.rows() == 0) throw ValidationError("fit_forest: empty dataset");
  const std::size_t k = train.cols();
  if (hyper.n_trees < 1) throw ValidationError("fit_forest: n_trees must be >= 1");
  if (hyper.mtry < 1 || hyper.mtry > k) {
    throw ValidationError("fit_forest: mtry must lie in [1, " + std::to_string(k) + "]");
  }
  if (hyper.min_node < 1) throw ValidationError("fit_forest: min_node must be >= 1");
  const auto data = make_matrix(train, label);

  Forest forest;
  forest.hyper = hyper;
  forest.feature_names = train.feature_names();
  forest.trees.resize(hyper.n_trees);
  for (std::size_t t = 0; t < hyper.n_trees; ++t) forest.tree_seeds.push_back(mix_seed(hyper.seed, t));

  GrowParams params;
  params.cp = 0.0;
  params.min_child = hyper.min_node;
  params.mtry = hyper.mtry;
  params.rule = hyper.splitrule;

  auto build = [&](std::size_t t) {
    Rng rng(forest.tree_seeds[t]);
    const std::size_t n = train.rows();
    std::vector<std::uint32_t> sample(n);
    if (hyper.bootstrap) {
      for (auto& s : sample) s = static_cast<std::uint32_t>(rng.index(n));
    } else {
      std::iota(sample.begin(), sample.end(), 0u);
    }
    TreeGrower grower(data, params, &rng);
    DecisionTree tree;
    tree.feature_names = forest.feature_names;
    tree.constraints.min_split_obs = hyper.min_node;
    tree.nodes = grower.grow(std::move(sample));
    forest.trees[t] = std::move(tree);
  };

  unsigned threads = hyper.threads ? hyper.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, hyper.n_trees));
  if (threads <= 1) {
    for (std::size_t t = 0; t < hyper.n_trees; ++t) build(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> workers;
      for (unsigned w = 0; w < threads; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (std::size_t t = next++; t < hyper.n_trees; t = next++) build(t);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return forest;
}

ForestPrediction predict_forest(const Forest& forest, std::span<const double> row) {
  if (forest.trees.empty()) throw ValidationError("predict: unfitted forest");
  std::size_t votes = 0;
  for (const auto& tree : forest.trees) votes += static_cast<std::size_t>(predict_tree(tree, row).cls);
  ForestPrediction p;
  p.score = static_cast<double>(votes) / static_cast<double>(forest.trees.size());
  p.cls = 2 * votes > forest.trees.size() ? 1 : 0;
  return p;
}

std::vector<ForestPrediction> predict_forest(const Forest& forest, const Dataset& ds) {
  const auto cols = map_features(ds, forest.feature_names);
  std::vector<ForestPrediction> out(ds.rows());
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    out[r] = predict_forest(forest, aligned_row(ds, r, cols));
  }
  return out;
}

namespace {

std::vector<double> normalized(std::vector<double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (weights.empty()) return weights;
  if (!(total > 0.0)) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(weights.size()));
    return weights;
  }
  for (double& w : weights) w /= total;
  return weights;
}

void accumulate_gain(const DecisionTree& tree, std::vector<double>& out) {
  for (const auto& n : tree.nodes) {
    if (!n.is_leaf()) out[n.feature] += std::max(n.gain, 0.0);
  }
}

}  // namespace

std::vector<double> variable_importance(const DecisionTree& tree) {
  if (tree.nodes.empty()) throw ValidationError("variable_importance: unfitted tree");
  std::vector<double> out(tree.feature_names.size(), 0.0);
  accumulate_gain(tree, out);
  return normalized(std::move(out));
}

std::vector<double> variable_importance(const Forest& forest) {
  if (forest.trees.empty()) throw ValidationError("variable_importance: unfitted forest");
  std::vector<double> out(forest.feature_names.size(), 0.0);
  for (const auto& tree : forest.trees) accumulate_gain(tree, out);
  return normalized(std::move(out));
}

}  // namespace rarity
