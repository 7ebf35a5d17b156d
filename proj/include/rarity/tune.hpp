#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rarity/dataset.hpp"
#include "rarity/eval.hpp"
#include "rarity/linear.hpp"
#include "rarity/neural.hpp"
#include "rarity/preprocess.hpp"
#include "rarity/trees.hpp"

namespace rarity {

// ---------------------------------------------------------------------------
// Folds

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> assignments;  // per row, in [0, k)
  std::uint64_t seed = 0;
  bool stratified = false;

  std::vector<std::size_t> fold_rows(std::size_t fold) const;
  std::vector<std::size_t> training_rows(std::size_t fold) const;
};

// Seeded shuffle, then round-robin. With labels, negatives are dealt first and
// positives continue the same counter, so each fold gets a near-equal share
// of every class.
FoldPlan kfold_partition(std::size_t n, std::size_t k, std::uint64_t seed,
                         std::optional<std::span<const std::uint8_t>> stratify = std::nullopt);

// ---------------------------------------------------------------------------
// Hyperparameters

using HyperValue = std::variant<double, std::string>;
using HyperGrid = std::map<std::string, std::vector<HyperValue>>;
using HyperPoint = std::map<std::string, HyperValue>;

std::string format_hyper(const HyperValue& v);
// "a=1;b=x", names in order.
std::string format_point(const HyperPoint& p);

// Cartesian product; the first name (alphabetically) varies slowest.
std::vector<HyperPoint> grid_expand(const HyperGrid& grid);

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { majority, logit, elastic_net, cart, forest, ffn };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view text);

// Hyperparameters understood by each kind (besides the shared "exclude",
// a space- or comma-separated list of features to drop):
//   elastic_net: lambda, alpha
//   cart: cp, min_split_obs, max_depth
//   forest: n_trees, mtry, min_node, splitrule, threads
//   ffn: hidden ("22-20-15"), dropout ("0.3-0.2-0"), activation, epochs, batch, lr
struct ModelSpec {
  std::string name;
  ModelKind kind = ModelKind::logit;
  std::optional<ScalerMethod> scaler = ScalerMethod::standardize;
  bool one_hot = true;
  HyperPoint fixed;  // merged under every grid point
};

struct MajorityModel {
  double positive_share = 0.0;
};

using ModelVariant =
    std::variant<MajorityModel, LogitModel, ElasticNetModel, DecisionTree, Forest, Network>;

struct FittedModel {
  std::string name;
  ModelKind kind = ModelKind::logit;
  HyperPoint point;  // effective hyperparameters (fixed merged with the grid point)
  Preprocessor prep;
  std::vector<std::string> excluded;
  std::string label;
  ModelVariant model;
};

// Fits preprocessing and model on `train` only.
FittedModel fit_model(const ModelSpec& spec, const HyperPoint& point, const Dataset& train,
                      std::string_view label, std::uint64_t seed);

// Positive-class scores for raw (unpreprocessed) rows.
std::vector<double> predict_scores(const FittedModel& model, const Dataset& raw);

// Importance over the model's input columns; none for networks.
std::optional<Importance> model_importance(const FittedModel& model);

// ---------------------------------------------------------------------------
// Cross-validation

// Metric names: auc, accuracy, kappa, sensitivity, specificity. Class metrics
// use score > threshold. Empty when undefined on the given data.
std::optional<double> score_metric(std::string_view metric, std::span<const double> scores,
                                   std::span<const std::uint8_t> labels, double threshold = 0.5);

struct FoldOutcome {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::optional<double> value;  // empty when the fit failed or the metric is undefined
  double seconds = 0.0;
  std::string error;
};

struct CvCell {
  HyperPoint point;
  std::vector<FoldOutcome> folds;
  std::optional<double> mean;  // over folds with a value
};

// For each fold: fit on the other folds (fold seed = mix_seed(seed, fold)),
// score the held-out fold.
CvCell cross_validate(const ModelSpec& spec, const HyperPoint& point, const Dataset& ds,
                      std::string_view label, const FoldPlan& plan, std::string_view metric,
                      std::uint64_t seed, std::size_t repeat = 0, double threshold = 0.5);

struct GridOptions {
  std::size_t k = 5;
  std::size_t repeats = 1;
  double subset_frac = 0.10;
  std::string metric = "auc";
  std::uint64_t seed = 0;
  double threshold = 0.5;
};

// Seed derivations used by grid_search, exposed for reproduction in tests.
std::uint64_t subset_seed(std::uint64_t seed);
std::uint64_t fold_plan_seed(std::uint64_t seed, std::size_t repeat);
std::uint64_t model_seed(std::uint64_t seed);

struct GridResult {
  std::string metric;
  std::vector<CvCell> cells;
  std::size_t best = 0;  // index into cells
  std::vector<std::string> warnings;
  FittedModel final_model;
  std::size_t subset_rows = 0;
};

// Tunes on a stratified subset of `train` (all of it when subset_frac = 1),
// picks the point with the highest mean metric (ties: first in grid order),
// and refits on the full training set.
GridResult grid_search(const ModelSpec& spec, const HyperGrid& grid, const Dataset& train,
                       std::string_view label, const GridOptions& opts);

// point_index, point, repeat, fold, <metric>, status
std::string tuning_folds_csv(const GridResult& r);
// point_index, point, mean_<metric>, folds_ok, selected
std::string tuning_summary_csv(const GridResult& r);
// point_index, repeat, fold, seconds
std::string tuning_timings_csv(const GridResult& r);

}  // namespace rarity
