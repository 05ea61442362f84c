// Command-line front end: run experiments, emit synthetic data, inspect saved
// flows and run the built-in invariant checks.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or training failure.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "vsps/cnf.hpp"
#include "vsps/data.hpp"
#include "vsps/diagnostics.hpp"
#include "vsps/experiment.hpp"
#include "vsps/prediction_set.hpp"

namespace {

using nlohmann::json;

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

// "n=5000 seed=7" or "n=5000,seed=7"
void apply_synthetic_spec(json& config, const std::string& spec) {
  std::string normalized = spec;
  for (char& c : normalized) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(normalized);
  std::string item;
  config["data"]["source"] = "synthetic";
  while (in >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw vsps::data::ConfigError("--synthetic expects key=value pairs, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    if (key != "n" && key != "seed") throw vsps::data::ConfigError("--synthetic accepts n and seed, got '" + key + "'");
    vsps::cli::apply_override(config, "data.synthetic." + key, item.substr(eq + 1));
  }
}

bool report_check(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << name << ": " << detail << '\n';
  return ok;
}

int run_checks() {
  using namespace vsps;
  bool ok = true;
  for (int d : {1, 2, 3}) {
    cnf::FlowArchitecture arch;
    arch.response_dim = d;
    arch.feature_dim = 2;
    arch.hidden_sizes = {16, 16};
    arch.blocks = 3;
    arch.seed = 17 + static_cast<std::uint64_t>(d);
    const auto flow = cnf::FlowModel::random(arch);
    const auto diag = diagnostics::inspect_flow(flow, 200, 99);
    const std::string tag = "flow d=" + std::to_string(d);
    ok &= report_check(tag + " round trip", std::max(diag.round_trip_y, diag.round_trip_z) <= 1e-6,
                       std::to_string(std::max(diag.round_trip_y, diag.round_trip_z)));
    ok &= report_check(tag + " log-det vs finite differences", diag.jacobian_rel_error <= 1e-4,
                       std::to_string(diag.jacobian_rel_error));
    ok &= report_check(tag + " autoregressive masks", diag.autoregressive, diag.autoregressive ? "ok" : "violated");
  }

  Rng rng(5);
  bool quantile_ok = true;
  for (int trial = 0; trial < 1000 && quantile_ok; ++trial) {
    const std::size_t n = 1 + rng.index(50);
    const double alpha = std::array<double, 3>{0.05, 0.1, 0.2}[rng.index(3)];
    std::vector<double> scores(n);
    for (auto& s : scores) s = rng.normal();
    std::vector<double> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t k = conformal_rank(n, alpha);
    const double expected = k > n ? kInfiniteRadius : sorted[k - 1];
    quantile_ok = conformal_quantile(scores, alpha) == expected;
  }
  ok &= report_check("conformal quantile vs full sort", quantile_ok, "1000 random score sets");

  const auto grid = metrics::VolumeGrid::lattice(Eigen::Vector2d(-2, -2), Eigen::Vector2d(2, 2), {401, 401});
  const BallUnionRegion disk{Eigen::MatrixXd::Zero(1, 2), 1.0};
  const double area = region_volume(disk, grid).volume;
  ok &= report_check("unit disk area on 0.01 grid", std::abs(area - M_PI) / M_PI <= 0.05, std::to_string(area));
  return ok ? 0 : kRuntimeError;
}

int inspect_flow(const std::string& path, int probes, std::uint64_t seed) {
  const auto flow = vsps::cnf::FlowModel::load(path);
  const auto diag = vsps::diagnostics::inspect_flow(flow, probes, seed);
  const auto& arch = flow.architecture();
  json out = {{"file", path},
              {"response_dim", arch.response_dim},
              {"feature_dim", arch.feature_dim},
              {"blocks", arch.blocks},
              {"hidden_sizes", arch.hidden_sizes},
              {"probes", probes},
              {"round_trip_y_max_abs", diag.round_trip_y},
              {"round_trip_z_max_abs", diag.round_trip_z},
              {"inverse_log_det_consistency", diag.log_det_consistency},
              {"jacobian_max_rel_error", diag.jacobian_rel_error},
              {"autoregressive", diag.autoregressive}};
  std::cout << out.dump(2) << '\n';
  const bool ok = diag.round_trip_y <= 1e-6 && diag.round_trip_z <= 1e-6 && diag.jacobian_rel_error <= 1e-4 &&
                  diag.autoregressive;
  return ok ? 0 : kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("vsps");
  spdlog::set_default_logger(logger);

  CLI::App app{"Volume-sorted conformal prediction sets for multi-target regression"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log per-epoch training progress");
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  auto* run = app.add_subcommand("run", "Run a seeded multi-split experiment");
  std::string config_path;
  std::string synthetic_spec;
  run->add_option("-c,--config", config_path, "JSON config file (partial configs are merged over defaults)");
  run->add_option("--synthetic", synthetic_spec, "Synthetic data spec, e.g. \"n=5000 seed=7\"");
  const json defaults = vsps::cli::default_config_json();
  std::map<std::string, std::string> overrides;
  std::vector<std::pair<std::string, CLI::Option*>> override_options;
  for (const auto& key : vsps::cli::dotted_keys(defaults)) {
    override_options.emplace_back(key, run->add_option("--" + key, overrides[key], "Override config key " + key));
  }

  auto* synthetic = app.add_subcommand("synthetic", "Write a synthetic v-shaped dataset as CSV");
  std::size_t synthetic_n = 5000;
  std::uint64_t synthetic_seed = 2024;
  std::string synthetic_out;
  synthetic->add_option("--n", synthetic_n, "Rows")->capture_default_str();
  synthetic->add_option("--seed", synthetic_seed, "Generator seed")->capture_default_str();
  synthetic->add_option("-o,--out", synthetic_out, "Output CSV path")->required();

  auto* inspect = app.add_subcommand("inspect-flow", "Round-trip and log-det diagnostics for a saved flow");
  std::string flow_path;
  int probes = 200;
  std::uint64_t probe_seed = 1;
  inspect->add_option("model", flow_path, "Flow model file")->required();
  inspect->add_option("--probes", probes, "Random probes")->capture_default_str();
  inspect->add_option("--seed", probe_seed, "Probe seed")->capture_default_str();

  auto* check = app.add_subcommand("check", "Run invariant and oracle checks on random models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*run) {
      json config = defaults;
      if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw vsps::data::ConfigError("cannot open config file " + config_path);
        json user = json::parse(in, nullptr, false);
        if (user.is_discarded()) throw vsps::data::ConfigError(config_path + " is not valid JSON");
        config = vsps::cli::merge_config(defaults, user);
      }
      if (const char* env_dir = std::getenv("VSPS_OUTPUT_DIR"); env_dir && *env_dir) {
        config["output"]["dir"] = env_dir;
      }
      if (!synthetic_spec.empty()) apply_synthetic_spec(config, synthetic_spec);
      for (const auto& [key, option] : override_options) {
        if (option->count() > 0) vsps::cli::apply_override(config, key, overrides[key]);
      }
      const auto cfg = vsps::cli::ExperimentConfig::from_json(config);
      const auto result = vsps::cli::run_experiment(cfg, cfg.output_dir);
      std::cout << result.table;
      spdlog::info("wrote report.json, metrics.csv, regions.csv to {}", cfg.output_dir);
      return 0;
    }
    if (*synthetic) {
      vsps::data::write_csv(vsps::data::generate_synthetic(synthetic_n, synthetic_seed), synthetic_out);
      return 0;
    }
    if (*inspect) return inspect_flow(flow_path, probes, probe_seed);
    if (*check) return run_checks();
  } catch (const vsps::data::ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
  return 0;
}
