#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rarity {

struct ConfusionMatrix {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
};

ConfusionMatrix confusion(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> preds);

// Undefined values (zero denominators) are empty and named in `flags`.
// Degenerate one-class predictions are flagged as well.
struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> kappa;  // Cohen's
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::vector<std::string> flags;
};

Metrics metrics(const ConfusionMatrix& cm);

struct RocCurve {
  // thresholds[0] = +inf at (0, 0); then one point per distinct score, descending.
  std::vector<double> thresholds;
  std::vector<double> fpr;
  std::vector<double> tpr;
};

RocCurve roc(std::span<const double> scores, std::span<const std::uint8_t> labels);
// Trapezoidal area under the curve.
double auc(const RocCurve& curve);
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// 1 where score > threshold.
std::vector<std::uint8_t> threshold_predictions(std::span<const double> scores, double threshold);

struct Importance {
  std::vector<std::string> features;
  std::vector<double> values;
};

struct ModelOutput {
  std::string name;
  std::vector<double> scores;
  std::vector<std::uint8_t> preds;
  std::optional<Importance> importance;
};

// Writes metrics.csv (rows Accuracy, Kappa, Sensitivity, Specificity, AUC;
// one column per model; undefined values as NA), and per model
// roc_<name>.csv, confusion_<name>.csv and, when available,
// importance_<name>.csv.
void report(const std::vector<ModelOutput>& models, std::span<const std::uint8_t> labels,
            const std::filesystem::path& out_dir);

// Text of metrics.csv for the given models.
std::string metrics_csv(const std::vector<ModelOutput>& models, std::span<const std::uint8_t> labels);
std::string roc_csv(const RocCurve& curve);

}  // namespace rarity
