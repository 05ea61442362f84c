#include "doctest.h"

#include <filesystem>

#include "vsps/experiment.hpp"

using namespace vsps;
using namespace vsps::cli;
using nlohmann::json;

TEST_CASE("default config is valid and round-trips through json") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  const auto back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(default_config_json() == cfg.to_json());
}

TEST_CASE("partial configs merge over defaults") {
  const auto merged = merge_config(default_config_json(), json{{"alpha", 0.2}, {"train", {{"patience", 5}}}});
  const auto cfg = ExperimentConfig::from_json(merged);
  CHECK(cfg.alpha == 0.2);
  CHECK(cfg.train.patience == 5);
  CHECK(cfg.train.batch_size == 256);
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(json{{"alpah", 0.1}}), data::ConfigError);
  auto j = default_config_json();
  j["alpha"] = 1.5;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), data::ConfigError);
  j = default_config_json();
  j["seeds"] = json::array();
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), data::ConfigError);
  j = default_config_json();
  j["methods"] = {"vsps", "bogus"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), data::ConfigError);
}

TEST_CASE("dotted overrides") {
  auto j = default_config_json();
  apply_override(j, "train.max_epochs", "12");
  apply_override(j, "train.patience", "4");
  apply_override(j, "methods", "naive_qr");
  apply_override(j, "seeds", "3,4");
  apply_override(j, "flow.hidden_sizes", "16,16");
  const auto cfg = ExperimentConfig::from_json(j);
  CHECK(cfg.train.max_epochs == 12);
  CHECK(cfg.methods == std::vector<std::string>{"naive_qr"});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(cfg.flow_hidden == std::vector<int>{16, 16});
  CHECK_THROWS(apply_override(j, "train.nonexistent", "1"));

  const auto keys = dotted_keys(default_config_json());
  CHECK(std::find(keys.begin(), keys.end(), "train.patience") != keys.end());
  CHECK(std::find(keys.begin(), keys.end(), "alpha") != keys.end());
}

TEST_CASE("smoke run: both methods cover") {
  ExperimentConfig cfg;
  cfg.synthetic_n = 2000;
  cfg.seeds = {0};
  cfg.M = 50;
  cfg.save_models = false;
  const auto dir = std::filesystem::temp_directory_path() / "vsps_smoke";
  std::filesystem::remove_all(dir);
  const auto result = run_experiment(cfg, dir);
  for (const char* method : {"vsps", "naive_qr"}) {
    const double cov = result.report["seeds"][0]["methods"][method]["coverage"].get<double>();
    CHECK(cov >= 0.8);
    CHECK(cov <= 1.0);
  }
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "metrics.csv"));
  CHECK(std::filesystem::exists(dir / "regions.csv"));
  std::filesystem::remove_all(dir);
}
