#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsps/data.hpp"
#include "vsps/nn.hpp"
#include "vsps/volume_grid.hpp"

namespace vsps::cli {

struct ExperimentConfig {
  std::string data_source = "synthetic";  // "synthetic" or "csv"
  std::size_t synthetic_n = 5000;
  std::uint64_t synthetic_seed = 2024;
  std::string csv_path;
  int csv_response_dim = 2;
  data::SplitFractions fractions;

  double alpha = 0.1;
  int M = 200;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::string> methods{"vsps", "naive_qr"};
  bool k_selection_uses_calibration_set = false;

  int flow_blocks = 5;
  std::vector<int> flow_hidden{64, 64, 64};
  double log_scale_clamp = 7.0;
  std::vector<int> qr_hidden{64, 64, 64};
  nn::TrainConfig train;
  metrics::GridSettings grid;

  std::string output_dir = "vsps_output";
  bool save_models = true;

  bool runs(const std::string& method) const;
  void validate() const;  // throws data::ConfigError
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);  // throws data::ConfigError
};

// Defaults as a nested JSON object; every leaf is a valid dotted override key.
nlohmann::json default_config_json();
// Sets `dotted_key` (e.g. "train.max_epochs") to `value`, parsed as JSON when
// possible, otherwise as a string; comma lists fill array-valued keys.
void apply_override(nlohmann::json& config, const std::string& dotted_key, const std::string& value);
// Leaf keys of a nested object in dotted form.
std::vector<std::string> dotted_keys(const nlohmann::json& config);
// Merges a user config file (possibly partial) over the defaults.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& user);

struct ExperimentResult {
  nlohmann::json report;
  std::string table;  // human-readable "mean (std)" summary
};

// Runs every seed, writes report.json, metrics.csv, regions.csv (and flow
// model files) into `output_dir`. Errors carry the seed index.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& output_dir);

class SeedError : public std::runtime_error {
 public:
  SeedError(const std::string& what, std::uint64_t seed) : std::runtime_error(what), seed_(seed) {}
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace vsps::cli
