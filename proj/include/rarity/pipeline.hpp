#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "rarity/anomaly.hpp"
#include "rarity/dataset.hpp"
#include "rarity/preprocess.hpp"
#include "rarity/tune.hpp"

namespace rarity {

struct CsvSource {
  std::filesystem::path path;
  std::filesystem::path schema;
  MissingPolicy missing = MissingPolicy::error;
};

struct ModelConfig {
  ModelSpec spec;
  HyperGrid grid;
};

struct AutoencoderConfig {
  std::vector<std::string> features;
  AeArch arch;
  AeOptions options;
  ErrorMetric metric = ErrorMetric::l2;
  // A fixed band, or calibration on the training split when absent.
  std::optional<ThresholdBand> band;
  BandObjective objective = BandObjective::youden;
  bool search_upper = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  // Exactly one data source.
  std::optional<SynthSpec> synth;
  std::optional<CsvSource> csv;
  std::string label;
  double split_fraction = 0.75;
  std::optional<ScalerMethod> scaler = ScalerMethod::standardize;
  std::vector<ModelConfig> models;
  GridOptions tuning;
  double threshold = 0.5;
  std::optional<AutoencoderConfig> autoencoder;
  // Hash of the configuration text, recorded in the manifest.
  std::string config_sha256;
};

// Parses a YAML run configuration. Relative csv paths resolve against
// `base_dir`. Throws ValidationError naming the offending field.
RunConfig parse_config(const std::string& yaml_text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Checks cross-references (label, model exclusions, autoencoder features)
// against the columns the data source provides.
void validate_config(const RunConfig& cfg);

enum class Command { generate, split, preprocess, tune, train, evaluate, detect, report, all };

std::string_view to_string(Command c);
Command parse_command(std::string_view text);

// Runs one command against cfg.output_dir. Progress and warnings go to `log`.
void run_command(const RunConfig& cfg, Command command, std::ostream& log);

// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

// Sorted key=value lines of <out>/manifest.txt.
std::map<std::string, std::string> read_manifest(const std::filesystem::path& out_dir);

}  // namespace rarity
