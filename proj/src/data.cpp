#include "vsps/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "vsps/rng.hpp"

namespace vsps::data {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? std::string() : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()), y.cols());
  if (groups) out.groups.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(r);
    out.y.row(static_cast<Eigen::Index>(i)) = y.row(r);
    if (groups) out.groups->push_back((*groups)[rows[i]]);
  }
  out.provenance = provenance;
  return out;
}

Dataset generate_synthetic(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be positive");
  static constexpr std::array<double, 3> kLevels{1.5, 2.0, 2.5};
  Rng rng(seed);
  Dataset ds;
  const auto rows = static_cast<Eigen::Index>(n);
  ds.x.resize(rows, 1);
  ds.y.resize(rows, 2);
  ds.groups.emplace(n);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double x = kLevels[rng.index(kLevels.size())];
    const double t = rng.uniform(-1.0, 1.0);
    const double e1 = rng.normal();
    const double e2 = rng.normal();
    ds.x(i, 0) = x;
    ds.y(i, 0) = t + 0.1 * e1;
    ds.y(i, 1) = x * std::abs(t) + 0.1 * e2;
    (*ds.groups)[static_cast<std::size_t>(i)] = x;
  }
  ds.provenance = "synthetic:n=" + std::to_string(n) + ",seed=" + std::to_string(seed);
  return ds;
}

CsvLoad load_csv(const std::filesystem::path& path, int response_dim) {
  if (response_dim < 1) throw IngestionError("response dimension must be positive");
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IngestionError(path.string() + ": missing header row");
  const auto header = split_line(line);
  const auto columns = static_cast<int>(header.size());
  const int p = columns - response_dim;
  if (p < 0) {
    throw IngestionError(path.string() + ": header has " + std::to_string(columns) + " columns, expected at least " +
                         std::to_string(response_dim) + " response columns");
  }
  for (int c = 0; c < columns; ++c) {
    const std::string expected = c < p ? "x" + std::to_string(c) : "y" + std::to_string(c - p);
    if (header[static_cast<std::size_t>(c)] != expected) {
      throw IngestionError(path.string() + ": header column " + std::to_string(c + 1) + " is '" +
                           header[static_cast<std::size_t>(c)] + "', expected '" + expected + "'");
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != columns) {
      throw IngestionError(path.string() + ": row " + std::to_string(line_no) + " has " +
                           std::to_string(cells.size()) + " cells, expected " + std::to_string(columns));
    }
    std::vector<double> values(cells.size());
    bool finite = true;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), values[c]);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw IngestionError(path.string() + ": row " + std::to_string(line_no) + ", column " +
                             std::to_string(c + 1) + ": '" + cell + "' is not a number");
      }
      finite = finite && std::isfinite(values[c]);
    }
    if (!finite) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(values));
  }
  if (dropped > 0) spdlog::warn("{}: dropped {} rows with non-finite values", path.string(), dropped);

  CsvLoad result;
  result.dropped_rows = dropped;
  auto& ds = result.dataset;
  ds.x.resize(static_cast<Eigen::Index>(rows.size()), p);
  ds.y.resize(static_cast<Eigen::Index>(rows.size()), response_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int c = 0; c < p; ++c) ds.x(r, c) = rows[i][static_cast<std::size_t>(c)];
    for (int c = 0; c < response_dim; ++c) ds.y(r, c) = rows[i][static_cast<std::size_t>(p + c)];
  }
  ds.provenance = "csv:" + path.string();
  return result;
}

void write_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot open " + path.string() + " for writing");
  const auto p = dataset.x.cols();
  const auto d = dataset.y.cols();
  for (Eigen::Index c = 0; c < p; ++c) out << (c ? "," : "") << 'x' << c;
  for (Eigen::Index c = 0; c < d; ++c) out << (p + c ? "," : "") << 'y' << c;
  out << '\n' << std::setprecision(17);
  for (Eigen::Index i = 0; i < dataset.size(); ++i) {
    for (Eigen::Index c = 0; c < p; ++c) out << (c ? "," : "") << dataset.x(i, c);
    for (Eigen::Index c = 0; c < d; ++c) out << (p + c ? "," : "") << dataset.y(i, c);
    out << '\n';
  }
}

std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitFractions& fractions) {
  const auto f = fractions.as_array();
  double total = 0.0;
  for (double v : f) {
    if (!(v >= 0.0)) throw ConfigError("split fractions must be non-negative");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::array<std::size_t, 4> sizes{};
  std::array<double, 4> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double exact = f[k] * static_cast<double>(n);
    // Guard against 384.00000000000006-style products.
    const double floored = std::floor(exact + 1e-9);
    sizes[k] = static_cast<std::size_t>(floored);
    remainder[k] = exact - floored;
    assigned += sizes[k];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 4, ++assigned) sizes[order[k]] += 1;
  for (std::size_t s : sizes) {
    if (s == 0) throw ConfigError("split of " + std::to_string(n) + " rows leaves a part empty");
  }
  return sizes;
}

SplitIndices split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(n, fractions);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 4> parts{&out.train, &out.calibration, &out.validation, &out.test};
  std::size_t offset = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    parts[k]->assign(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                     perm.begin() + static_cast<std::ptrdiff_t>(offset + sizes[k]));
    offset += sizes[k];
  }
  return out;
}

StandardizationStats fit_stats(const Dataset& dataset, const std::vector<std::size_t>& train_rows) {
  if (train_rows.empty()) throw ConfigError("fit_stats: empty training split");
  const Dataset train = dataset.subset(train_rows);
  auto column_stats = [](const Matrix& m, Vector& mean, Vector& std_dev) {
    mean = m.colwise().mean().transpose();
    std_dev.resize(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double var = (m.col(c).array() - mean(c)).square().mean();
      std_dev(c) = std::max(std::sqrt(var), kMinStd);
    }
  };
  StandardizationStats stats;
  column_stats(train.x, stats.x_mean, stats.x_std);
  column_stats(train.y, stats.y_mean, stats.y_std);
  return stats;
}

Dataset apply_stats(const Dataset& dataset, const StandardizationStats& stats) {
  Dataset out = dataset;
  out.x = (dataset.x.rowwise() - stats.x_mean.transpose()).array().rowwise() / stats.x_std.transpose().array();
  out.y = (dataset.y.rowwise() - stats.y_mean.transpose()).array().rowwise() / stats.y_std.transpose().array();
  return out;
}

Dataset invert_stats(const Dataset& dataset, const StandardizationStats& stats) {
  Dataset out = dataset;
  out.x = (dataset.x.array().rowwise() * stats.x_std.transpose().array()).matrix().rowwise() +
          stats.x_mean.transpose();
  out.y = (dataset.y.array().rowwise() * stats.y_std.transpose().array()).matrix().rowwise() +
          stats.y_mean.transpose();
  return out;
}

}  // namespace vsps::data
