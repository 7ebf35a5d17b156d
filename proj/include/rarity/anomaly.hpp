#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/dataset.hpp"
#include "rarity/neural.hpp"

namespace rarity {

struct AeArch {
  // Layer widths after the input; the last one must equal the input width.
  // An empty list means {9, 4, 4, input}.
  std::vector<std::size_t> layers;
  std::vector<Activation> activations{Activation::tanh, Activation::relu, Activation::tanh,
                                      Activation::relu};
};

struct AeOptions {
  int epochs = 10;
  std::size_t batch = 512;
  double lr = 0.001;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cosine_proximity;
  double activity_l2 = 1e-4;
};

struct Autoencoder {
  Network net;
  std::vector<std::string> feature_names;
  double activity_l2 = 0.0;
  LossKind loss = LossKind::cosine_proximity;

  std::size_t input_dim() const { return static_cast<std::size_t>(net.input_dim()); }
  // Narrowest layer width.
  std::size_t latent_dim() const;
};

// The default input features: the base indicators without many_field.
std::vector<std::string> default_ae_features();

// Self-supervised fit (targets = inputs) on every feature of `normals`.
// When `label` is given and present, any positive row is rejected; without a
// label every label vector in the dataset must be all-negative.
Autoencoder train_autoencoder(const Dataset& normals, const AeArch& arch = {},
                              const AeOptions& opts = {},
                              std::optional<std::string> label = std::nullopt);

enum class ErrorMetric { squared_l2, l2 };

std::string_view to_string(ErrorMetric m);
ErrorMetric parse_error_metric(std::string_view text);

double reconstruction_error(std::span<const double> x, std::span<const double> reconstructed,
                            ErrorMetric metric);
double reconstruction_error(const Autoencoder& ae, std::span<const double> x, ErrorMetric metric);

// One score per row, in row order; features matched by name.
std::vector<double> score_dataset(const Autoencoder& ae, const Dataset& ds, ErrorMetric metric);

struct ThresholdBand {
  double lo = 0.0;
  double hi = INFINITY;
};

// 1 iff lo <= score <= hi.
LabelVector classify_band(std::span<const double> scores, const ThresholdBand& band);

enum class BandObjective { youden, f1 };

std::string_view to_string(BandObjective o);
BandObjective parse_band_objective(std::string_view text);

struct BandCalibration {
  ThresholdBand band;
  double objective = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Chooses the band maximizing the objective. The lower bound is searched over
// every distinct observed score with hi = +inf; with `search_upper`, bands with
// both ends on the percentile grid of the scores are also tried. Ties keep the
// earlier (lower) candidate.
BandCalibration calibrate_band(std::span<const double> scores, std::span<const std::uint8_t> labels,
                               BandObjective objective, bool search_upper = false);

// Columns row_id, score[, label].
std::string score_csv(std::span<const double> scores, const LabelVector* labels = nullptr);

}  // namespace rarity
