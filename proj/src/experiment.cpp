#include "vsps/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include <spdlog/spdlog.h>

#include "vsps/baseline_qr.hpp"
#include "vsps/cnf.hpp"
#include "vsps/metrics.hpp"
#include "vsps/prediction_set.hpp"

namespace vsps::cli {

using nlohmann::json;

namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json row_json(const Eigen::MatrixXd& m, Eigen::Index row) {
  json a = json::array();
  for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(row, j));
  return a;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) a.push_back(v(j));
  return a;
}

json radius_json(double gamma) {
  if (std::isinf(gamma)) return gamma > 0 ? "inf" : "-inf";
  return gamma;
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

json group_json(const std::map<double, double>& per_group) {
  json j = json::object();
  for (const auto& [label, c] : per_group) j[number(label)] = c;
  return j;
}

void check_unknown_keys(const json& defaults, const json& user, const std::string& prefix) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw data::ConfigError("unknown config key '" + key + "'");
    if (defaults.at(it.key()).is_object()) {
      if (!it.value().is_object()) throw data::ConfigError("config key '" + key + "' must be an object");
      check_unknown_keys(defaults.at(it.key()), it.value(), key);
    }
  }
}

struct SeedOutcome {
  json record;
  std::string metrics_rows;
  std::string region_rows;
};

SeedOutcome run_seed(const ExperimentConfig& cfg, const data::Dataset& raw, std::uint64_t seed,
                     const std::filesystem::path& output_dir) {
  SeedOutcome out;
  const auto parts = data::split(static_cast<std::size_t>(raw.size()), cfg.fractions,
                                 derive_seed(seed, Stream::kSplit));
  const auto stats = data::fit_stats(raw, parts.train);
  const data::Dataset standardized = data::apply_stats(raw, stats);
  const auto train = standardized.subset(parts.train);
  const auto cal = standardized.subset(parts.calibration);
  const auto val = standardized.subset(parts.validation);
  const auto test = standardized.subset(parts.test);
  const nn::Batch train_batch{train.x, train.y};
  const nn::Batch val_batch{val.x, val.y};

  metrics::GridSettings grid_settings = cfg.grid;
  grid_settings.seed = derive_seed(seed, Stream::kGrid);
  const auto grid = metrics::grid_for_responses(stack_rows(train.y, cal.y), grid_settings);

  json& rec = out.record;
  rec["seed"] = seed;
  rec["split_sizes"] = {{"train", parts.train.size()},
                        {"calibration", parts.calibration.size()},
                        {"validation", parts.validation.size()},
                        {"test", parts.test.size()}};
  rec["grid"] = {{"token", grid.token_hex()},
                 {"lower", vector_json(grid.lower())},
                 {"upper", vector_json(grid.upper())},
                 {"counts", grid.counts()},
                 {"cell_volume", grid.cell_volume()},
                 {"monte_carlo", grid.is_monte_carlo()},
                 {"points", grid.size()}};
  rec["methods"] = json::object();

  nn::TrainConfig train_config = cfg.train;
  const Eigen::Index n_test = test.size();
  std::ostringstream metrics_rows;
  std::ostringstream region_rows;

  auto record_method = [&](const std::string& method, const std::vector<bool>& covered,
                           const metrics::SizeSummary& size, json extra) {
    json m = std::move(extra);
    m["coverage"] = metrics::coverage_fraction(covered);
    m["size"] = size.mean_count;
    m["size_volume"] = size.mean_volume;
    m["grid_token"] = grid.token_hex();
    metrics_rows << seed << ',' << method << ",coverage," << number(m["coverage"].get<double>()) << '\n';
    metrics_rows << seed << ',' << method << ",size," << number(size.mean_count) << '\n';
    metrics_rows << seed << ',' << method << ",size_volume," << number(size.mean_volume) << '\n';
    if (test.groups) {
      const auto cond = metrics::conditional_coverage(covered, *test.groups);
      m["conditional_coverage"] = cond.minimum;
      m["per_group_coverage"] = group_json(cond.per_group);
      metrics_rows << seed << ',' << method << ",conditional_coverage," << number(cond.minimum) << '\n';
    }
    rec["methods"][method] = std::move(m);
  };

  if (cfg.runs("vsps")) {
    cnf::FlowArchitecture arch;
    arch.response_dim = static_cast<int>(train.y.cols());
    arch.feature_dim = static_cast<int>(train.x.cols());
    arch.hidden_sizes = cfg.flow_hidden;
    arch.blocks = cfg.flow_blocks;
    arch.log_scale_clamp = cfg.log_scale_clamp;
    arch.seed = derive_seed(seed, Stream::kFlowInit);
    train_config.seed = derive_seed(seed, Stream::kFlowTrain);
    nn::TrainResult flow_history;
    const cnf::FlowModel flow = cnf::fit_flow(train_batch, val_batch, arch, train_config, &flow_history);
    if (cfg.save_models) flow.save(output_dir / ("flow_seed" + std::to_string(seed) + ".bin"));

    Eigen::MatrixXd size_x, sel_x, sel_y;
    Stream sel_stream = Stream::kSelectionCalibration;
    if (cfg.k_selection_uses_calibration_set) {
      size_x = val.x;
      sel_x = cal.x;
      sel_y = cal.y;
      sel_stream = Stream::kCalibration;
    } else {
      const Eigen::Index half = val.size() / 2;
      sel_x = val.x.topRows(half);
      sel_y = val.y.topRows(half);
      size_x = val.x.bottomRows(val.size() - half);
    }
    const KSelection selection = select_k(flow, size_x, sel_x, sel_y, cfg.alpha, cfg.M, grid, seed, sel_stream);
    const Eigen::MatrixXd table = score_table(flow, cal.x, cal.y, cfg.M, seed, Stream::kCalibration);
    const Eigen::VectorXd column = table.col(selection.k_star - 1);
    const CalibrationResult calibration =
        calibrate(std::vector<double>(column.data(), column.data() + column.size()), cfg.alpha);
    spdlog::info("seed {}: vsps K* = {}, gamma = {:.4f}", seed, selection.k_star, calibration.gamma);

    std::vector<BallUnionRegion> regions;
    regions.reserve(static_cast<std::size_t>(n_test));
    for (Eigen::Index i = 0; i < n_test; ++i) {
      const auto samples = sample_sorted(test.x.row(i).transpose(), cfg.M, flow, seed, Stream::kTest,
                                         static_cast<std::uint64_t>(i));
      regions.push_back(region_from_samples(samples, selection.k_star, calibration.gamma));
    }
    const auto covered = metrics::covered_flags(regions, test.y);
    const auto size = metrics::mean_region_size(regions, grid);
    record_method("vsps", covered, size,
                  {{"k_star", selection.k_star},
                   {"gamma", radius_json(calibration.gamma)},
                   {"quantile_index", calibration.quantile_index},
                   {"selection_sizes", selection.mean_volumes},
                   {"flow_epochs", flow_history.history.size()},
                   {"flow_best_epoch", flow_history.best_epoch},
                   {"flow_best_val_nll", flow_history.best_val_loss}});
    for (Eigen::Index i = 0; i < n_test; ++i) {
      json centers = json::array();
      for (Eigen::Index k = 0; k < regions[static_cast<std::size_t>(i)].centers.rows(); ++k) {
        centers.push_back(row_json(regions[static_cast<std::size_t>(i)].centers, k));
      }
      const json geometry = {{"k", selection.k_star}, {"gamma", radius_json(calibration.gamma)}, {"centers", centers}};
      region_rows << seed << ',' << i << ",vsps," << (covered[static_cast<std::size_t>(i)] ? 1 : 0) << ','
                  << csv_quote(row_json(test.y, i).dump()) << ',' << csv_quote(geometry.dump()) << '\n';
    }
  }

  if (cfg.runs("naive_qr")) {
    qr::QrArchitecture arch{cfg.qr_hidden, derive_seed(seed, Stream::kQuantileInit)};
    train_config.seed = derive_seed(seed, Stream::kQuantileTrain);
    const qr::QuantileNet model = qr::train_naive_qr(train_batch, val_batch, cfg.alpha, arch, train_config);
    const CalibrationResult calibration = qr::conformalize_qr(model, cal.x, cal.y, cfg.alpha);
    spdlog::info("seed {}: naive_qr gamma = {:.4f}", seed, calibration.gamma);
    std::vector<qr::BoxRegion> boxes;
    boxes.reserve(static_cast<std::size_t>(n_test));
    for (Eigen::Index i = 0; i < n_test; ++i) {
      boxes.push_back(qr::qr_region(test.x.row(i).transpose(), model, calibration.gamma));
    }
    const auto covered = metrics::covered_flags(boxes, test.y);
    const auto size = metrics::mean_region_size(boxes, grid);
    record_method("naive_qr", covered, size,
                  {{"gamma", radius_json(calibration.gamma)}, {"quantile_index", calibration.quantile_index}});
    for (Eigen::Index i = 0; i < n_test; ++i) {
      const auto& box = boxes[static_cast<std::size_t>(i)];
      const json geometry = {{"lower", vector_json(box.lower)}, {"upper", vector_json(box.upper)}};
      region_rows << seed << ',' << i << ",naive_qr," << (covered[static_cast<std::size_t>(i)] ? 1 : 0) << ','
                  << csv_quote(row_json(test.y, i).dump()) << ',' << csv_quote(geometry.dump()) << '\n';
    }
  }
  out.metrics_rows = metrics_rows.str();
  out.region_rows = region_rows.str();
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

bool ExperimentConfig::runs(const std::string& method) const {
  return std::find(methods.begin(), methods.end(), method) != methods.end();
}

void ExperimentConfig::validate() const {
  if (data_source != "synthetic" && data_source != "csv") {
    throw data::ConfigError("data.source must be 'synthetic' or 'csv'");
  }
  if (data_source == "csv" && csv_path.empty()) throw data::ConfigError("data.csv.path is required for csv data");
  if (data_source == "synthetic" && synthetic_n == 0) throw data::ConfigError("data.synthetic.n must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw data::ConfigError("alpha must lie in (0, 1)");
  if (M < 1) throw data::ConfigError("M must be positive");
  if (seeds.empty()) throw data::ConfigError("at least one seed is required");
  if (methods.empty()) throw data::ConfigError("at least one method is required");
  for (const auto& m : methods) {
    if (m != "vsps" && m != "naive_qr") throw data::ConfigError("unknown method '" + m + "'");
  }
  if (flow_blocks < 1) throw data::ConfigError("flow.blocks must be positive");
  if (flow_hidden.empty() || qr_hidden.empty()) throw data::ConfigError("hidden_sizes must be non-empty");
  if (grid.resolution < 2 || grid.resolution_3d < 2) throw data::ConfigError("grid resolution must be >= 2");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw data::ConfigError(std::string("train: ") + e.what());
  }
}

json default_config_json() { return ExperimentConfig{}.to_json(); }

json ExperimentConfig::to_json() const {
  return {
      {"data",
       {{"source", data_source},
        {"synthetic", {{"n", synthetic_n}, {"seed", synthetic_seed}}},
        {"csv", {{"path", csv_path}, {"d", csv_response_dim}}},
        {"fractions",
         {{"train", fractions.train},
          {"calibration", fractions.calibration},
          {"validation", fractions.validation},
          {"test", fractions.test}}}}},
      {"alpha", alpha},
      {"M", M},
      {"seeds", seeds},
      {"methods", methods},
      {"k_selection_uses_calibration_set", k_selection_uses_calibration_set},
      {"flow", {{"blocks", flow_blocks}, {"hidden_sizes", flow_hidden}, {"log_scale_clamp", log_scale_clamp}}},
      {"qr", {{"hidden_sizes", qr_hidden}}},
      {"train",
       {{"batch_size", train.batch_size},
        {"max_epochs", train.max_epochs},
        {"patience", train.patience},
        {"learning_rate", train.learning_rate}}},
      {"grid",
       {{"expand", grid.expand},
        {"resolution", grid.resolution},
        {"resolution_3d", grid.resolution_3d},
        {"mc_probes", grid.mc_probes}}},
      {"output", {{"dir", output_dir}, {"save_models", save_models}}},
  };
}

json merge_config(const json& defaults, const json& user) {
  if (!user.is_object()) throw data::ConfigError("config must be a JSON object");
  check_unknown_keys(defaults, user, "");
  json merged = defaults;
  merged.merge_patch(user);
  return merged;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  const json m = merge_config(default_config_json(), j);
  ExperimentConfig c;
  try {
    const auto& d = m.at("data");
    c.data_source = d.at("source").get<std::string>();
    c.synthetic_n = d.at("synthetic").at("n").get<std::size_t>();
    c.synthetic_seed = d.at("synthetic").at("seed").get<std::uint64_t>();
    c.csv_path = d.at("csv").at("path").get<std::string>();
    c.csv_response_dim = d.at("csv").at("d").get<int>();
    const auto& f = d.at("fractions");
    c.fractions = {f.at("train").get<double>(), f.at("calibration").get<double>(), f.at("validation").get<double>(),
                   f.at("test").get<double>()};
    c.alpha = m.at("alpha").get<double>();
    c.M = m.at("M").get<int>();
    c.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    c.methods = m.at("methods").get<std::vector<std::string>>();
    c.k_selection_uses_calibration_set = m.at("k_selection_uses_calibration_set").get<bool>();
    c.flow_blocks = m.at("flow").at("blocks").get<int>();
    c.flow_hidden = m.at("flow").at("hidden_sizes").get<std::vector<int>>();
    c.log_scale_clamp = m.at("flow").at("log_scale_clamp").get<double>();
    c.qr_hidden = m.at("qr").at("hidden_sizes").get<std::vector<int>>();
    const auto& t = m.at("train");
    c.train.batch_size = t.at("batch_size").get<int>();
    c.train.max_epochs = t.at("max_epochs").get<int>();
    c.train.patience = t.at("patience").get<int>();
    c.train.learning_rate = t.at("learning_rate").get<double>();
    const auto& g = m.at("grid");
    c.grid.expand = g.at("expand").get<double>();
    c.grid.resolution = g.at("resolution").get<int>();
    c.grid.resolution_3d = g.at("resolution_3d").get<int>();
    c.grid.mc_probes = g.at("mc_probes").get<std::size_t>();
    c.output_dir = m.at("output").at("dir").get<std::string>();
    c.save_models = m.at("output").at("save_models").get<bool>();
  } catch (const json::exception& e) {
    throw data::ConfigError(std::string("invalid config value: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> dotted_keys(const json& config) {
  std::vector<std::string> keys;
  for (auto it = config.begin(); it != config.end(); ++it) {
    if (it.value().is_object()) {
      for (const auto& sub : dotted_keys(it.value())) keys.push_back(it.key() + "." + sub);
    } else {
      keys.push_back(it.key());
    }
  }
  return keys;
}

void apply_override(json& config, const std::string& dotted_key, const std::string& value) {
  json* node = &config;
  std::istringstream path(dotted_key);
  std::string part;
  while (std::getline(path, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw data::ConfigError("unknown config key '" + dotted_key + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw data::ConfigError("'" + dotted_key + "' is a section, not a value");
  auto parse = [](const std::string& text) {
    json parsed = json::parse(text, nullptr, false);
    return parsed.is_discarded() ? json(text) : parsed;
  };
  json parsed = parse(value);
  if (node->is_string()) {
    parsed = value;
  } else if (node->is_array() && !parsed.is_array()) {
    json list = json::array();
    std::istringstream items(value);
    std::string item;
    while (std::getline(items, item, ',')) list.push_back(parse(item));
    parsed = std::move(list);
  }
  *node = std::move(parsed);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& output_dir) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const std::string started_utc = utc_now();
  std::filesystem::create_directories(output_dir);

  data::Dataset raw;
  std::size_t dropped = 0;
  if (cfg.data_source == "synthetic") {
    raw = data::generate_synthetic(cfg.synthetic_n, cfg.synthetic_seed);
  } else {
    auto loaded = data::load_csv(cfg.csv_path, cfg.csv_response_dim);
    raw = std::move(loaded.dataset);
    dropped = loaded.dropped_rows;
  }
  spdlog::info("data: {} rows ({}), p = {}, d = {}", raw.size(), raw.provenance, raw.x.cols(), raw.y.cols());

  json report;
  report["config"] = cfg.to_json();
  report["data"] = {{"provenance", raw.provenance},
                    {"rows", raw.size()},
                    {"dropped_rows", dropped},
                    {"features", raw.x.cols()},
                    {"responses", raw.y.cols()},
                    {"units", "standardized"}};
  report["seeds"] = json::array();
  std::string metrics_csv = "seed,method,metric,value\n";
  std::string regions_csv = "seed,test_index,method,covered,y,geometry\n";

  for (std::uint64_t seed : cfg.seeds) {
    spdlog::info("seed {}: start", seed);
    SeedOutcome outcome;
    try {
      outcome = run_seed(cfg, raw, seed, output_dir);
    } catch (const data::ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw SeedError("seed " + std::to_string(seed) + ": " + e.what(), seed);
    }
    report["seeds"].push_back(std::move(outcome.record));
    metrics_csv += outcome.metrics_rows;
    regions_csv += outcome.region_rows;
  }

  json aggregates = json::object();
  json table_cells = json::object();
  std::ostringstream table;
  table << "method      Coverage         Size                  Cond. Coverage\n";
  for (const auto& method : cfg.methods) {
    std::map<std::string, std::vector<double>> series;
    for (const auto& rec : report["seeds"]) {
      const auto& m = rec["methods"][method];
      for (const char* key : {"coverage", "size", "size_volume", "conditional_coverage", "k_star"}) {
        if (m.contains(key)) series[key].push_back(m[key].get<double>());
      }
    }
    json agg = json::object();
    for (const auto& [key, values] : series) {
      const auto a = metrics::aggregate(values);
      agg[key] = {{"mean", a.mean}, {"std", a.std_dev}, {"count", a.count}};
    }
    aggregates[method] = agg;
    const auto cov = metrics::aggregate(series["coverage"]);
    const auto size = metrics::aggregate(series["size"]);
    json cells = {{"coverage", metrics::format_percent(cov)}, {"size", metrics::format_plain(size)}};
    std::string cond_text = "-";
    if (series.count("conditional_coverage")) {
      cond_text = metrics::format_percent(metrics::aggregate(series["conditional_coverage"]));
      cells["conditional_coverage"] = cond_text;
    }
    table_cells[method] = cells;
    char line[160];
    std::snprintf(line, sizeof(line), "%-11s %-16s %-21s %s\n", method.c_str(), cells["coverage"].get<std::string>().c_str(),
                  cells["size"].get<std::string>().c_str(), cond_text.c_str());
    table << line;
  }
  report["aggregates"] = aggregates;
  report["table"] = table_cells;
  const double runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report["timestamp"] = {{"started_utc", started_utc}, {"runtime_seconds", runtime}};

  {
    std::ofstream out(output_dir / "report.json");
    out << report.dump(2) << '\n';
  }
  {
    std::ofstream out(output_dir / "metrics.csv");
    out << metrics_csv;
  }
  {
    std::ofstream out(output_dir / "regions.csv");
    out << regions_csv;
  }
  return {std::move(report), table.str()};
}

}  // namespace vsps::cli
