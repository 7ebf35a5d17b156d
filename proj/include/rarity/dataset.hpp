#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rarity {

enum class FeatureKind { continuous, categorical, binary };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

struct Feature {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  // Level strings for categorical features; cells hold indices into this list.
  std::vector<std::string> levels;
};

using LabelVector = std::vector<std::uint8_t>;

// Named feature matrix plus binary label vectors. Immutable after
// construction; values are stored row-major.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t rows, std::vector<Feature> features, std::vector<double> values,
          std::map<std::string, LabelVector> labels = {});

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return features_.size(); }

  const std::vector<Feature>& features() const { return features_; }
  const Feature& feature(std::size_t col) const { return features_.at(col); }
  std::vector<std::string> feature_names() const;

  double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols(), cols()};
  }
  std::vector<double> column(std::size_t col) const;
  const std::vector<double>& values() const { return values_; }

  std::optional<std::size_t> find_feature(std::string_view name) const;
  // Throws ValidationError when the feature does not exist.
  std::size_t feature_index(std::string_view name) const;

  const std::map<std::string, LabelVector>& labels() const { return labels_; }
  bool has_label(std::string_view name) const;
  const LabelVector& label(std::string_view name) const;

  Dataset select_rows(std::span<const std::size_t> rows) const;
  Dataset select_features(std::span<const std::size_t> cols) const;
  Dataset select_features(const std::vector<std::string>& names) const;
  Dataset drop_features(const std::vector<std::string>& names) const;
  Dataset with_label(std::string name, LabelVector values) const;
  Dataset without_labels() const;

 private:
  std::size_t rows_ = 0;
  std::vector<Feature> features_;
  std::vector<double> values_;
  std::map<std::string, LabelVector> labels_;
};

// ---------------------------------------------------------------------------
// CSV input/output

enum class MissingPolicy { error, impute };

// Column name -> kind. Label columns use the reserved kind name "label".
struct Schema {
  std::map<std::string, FeatureKind> features;
  std::vector<std::string> labels;
};

Schema load_schema(const std::filesystem::path& path);
void save_schema(const Schema& schema, const std::filesystem::path& path);
Schema schema_of(const Dataset& ds);

// Parses CSV text. `source` names the input in error messages.
Dataset parse_csv(std::string_view text, const Schema& schema, MissingPolicy policy,
                  std::string_view source = "<memory>");
Dataset load_csv(const std::filesystem::path& path, const Schema& schema,
                 MissingPolicy policy);

std::string to_csv(const Dataset& ds);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic generation

struct Marginal {
  std::string name;
  FeatureKind kind = FeatureKind::continuous;
  double mean = 0.0;
  double sd = 1.0;
  double min = -INFINITY;
  double max = INFINITY;
  std::size_t levels = 0;  // categorical only
};

// One term of the latent score: the product of the standardized features
// times `weight`. One feature is a main effect, two an interaction.
struct SignalTerm {
  std::vector<std::string> features;
  double weight = 0.0;
};

struct SynthSpec {
  std::size_t n = 0;
  double positive_rate = 0.5;
  std::string label = "label";
  std::vector<Marginal> features;
  std::vector<SignalTerm> signal;
  // Additive per-feature shift applied to positive rows after the draw.
  std::map<std::string, double> anomaly_shift;
  std::uint64_t seed = 0;
};

// The twenty continuous/binary indicators with their descriptive statistics
// from the USPTO 2010-2015 patent corpus.
std::vector<Marginal> patent_marginals();
// The twelve base indicators (no cohort deltas).
std::vector<std::string> patent_base_features();

// Rows are drawn independently. Each row's label is Bernoulli(positive_rate);
// features are then drawn from the marginals by rejection against a logistic
// link on the latent score, so the realized positive count is exactly
// Binomial(n, positive_rate) while P(y | x) stays logistic in the signal.
Dataset synth_generate(const SynthSpec& spec);

// ---------------------------------------------------------------------------
// Splitting

struct SplitPair {
  Dataset train;
  Dataset test;
  double fraction = 0.0;
  std::string stratify_on;
  std::vector<std::size_t> train_rows;  // source row indices, ascending
  std::vector<std::size_t> test_rows;
};

// Per class: shuffle by seed, train count = floor(fraction * class count),
// remainder to test. Output rows keep source order.
SplitPair stratified_split(const Dataset& ds, double fraction, std::string_view label,
                           std::uint64_t seed);

}  // namespace rarity
