#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/dataset.hpp"

namespace rarity {

enum class ScalerMethod { standardize, minmax, meannorm };

std::string_view to_string(ScalerMethod method);
ScalerMethod parse_scaler_method(std::string_view text);

struct ColumnStats {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;  // sample sd, n - 1 denominator
  double min = 0.0;
  double max = 0.0;
  bool constant = false;
};

struct ScalerParams {
  ScalerMethod method = ScalerMethod::standardize;
  std::vector<ColumnStats> columns;  // one per continuous feature
  // Fingerprint of the data the statistics were computed on.
  std::vector<std::string> fitted_features;
  std::size_t fitted_rows = 0;
};

ScalerParams fit_scaler(const Dataset& train, ScalerMethod method);

// Transforms the continuous columns named in `params`; every other column is
// copied unchanged. Constant columns map to 0.
Dataset apply_scaler(const Dataset& ds, const ScalerParams& params);

// Inverse of apply_scaler for non-constant columns.
Dataset unscale(const Dataset& ds, const ScalerParams& params);

// Replaces a categorical feature by one binary column per level, named
// "feature=level" and placed where the original column was. All levels are
// kept (no reference level is dropped).
Dataset one_hot(const Dataset& ds, std::string_view feature);
// Same, but with an explicit level list (matched by level name). Rows whose
// level is not in the list get all-zero indicator columns.
Dataset one_hot(const Dataset& ds, std::string_view feature,
                const std::vector<std::string>& levels);

// Scaling plus one-hot expansion, fitted on training data only.
struct Preprocessor {
  std::optional<ScalerParams> scaler;
  // Categorical features to expand, with their training-time levels.
  std::vector<Feature> one_hot_features;
};

Preprocessor fit_preprocessor(const Dataset& train, std::optional<ScalerMethod> method,
                              bool expand_categoricals = true);
Dataset apply_preprocessor(const Dataset& ds, const Preprocessor& prep);

// ---------------------------------------------------------------------------
// Conditional distribution summaries

struct SummaryRow {
  std::string feature;
  int cls = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::array<double, 9> deciles{};  // d10 .. d90
};

// One row per (feature, class present in the data), feature-major.
std::vector<SummaryRow> conditional_summary(const Dataset& ds, std::string_view label);

// Columns: feature, class, mean, sd, d10 ... d90.
std::string summary_csv(const std::vector<SummaryRow>& rows);

// Linear-interpolation quantile on sorted data (R type 7).
double quantile_sorted(const std::vector<double>& sorted, double p);

}  // namespace rarity
