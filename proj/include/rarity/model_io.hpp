#pragma once

#include <filesystem>
#include <string>

#include "rarity/anomaly.hpp"
#include "rarity/preprocess.hpp"
#include "rarity/tune.hpp"

namespace rarity {

// Versioned, whitespace-separated text formats. Numbers are written in
// shortest round-trip form, so save -> load -> save is byte-identical.
// Every file starts with "rarity-model 1" followed by a type tag.

std::string serialize(const FittedModel& model);
FittedModel deserialize_model(const std::string& text);

std::string serialize(const Preprocessor& prep);
Preprocessor deserialize_preprocessor(const std::string& text);

std::string serialize(const Autoencoder& ae);
Autoencoder deserialize_autoencoder(const std::string& text);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);
void save_preprocessor(const Preprocessor& prep, const std::filesystem::path& path);
Preprocessor load_preprocessor(const std::filesystem::path& path);
void save_autoencoder(const Autoencoder& ae, const std::filesystem::path& path);
Autoencoder load_autoencoder(const std::filesystem::path& path);

}  // namespace rarity
