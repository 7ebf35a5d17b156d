#include <CLI11.hpp>

#include <iostream>

#include "rarity/common.hpp"
#include "rarity/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Rare-event modeling pipeline"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  for (const char* name : {"generate", "split", "preprocess", "tune", "train", "evaluate", "detect",
                           "report", "all"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "Run configuration (YAML)")->required();
    sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Master seed (overrides seed)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    auto cfg = rarity::load_config(config_path);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (seed) cfg.seed = *seed;
    rarity::validate_config(cfg);
    const auto command = rarity::parse_command(app.get_subcommands().front()->get_name());
    rarity::run_command(cfg, command, std::cout);
  } catch (const rarity::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
