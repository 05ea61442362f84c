#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vsps::data {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix x;  // [n x p]
  Matrix y;  // [n x d]
  std::optional<std::vector<double>> groups;  // discrete x value per row, when known
  std::string provenance;

  Eigen::Index size() const { return x.rows(); }
  Dataset subset(const std::vector<std::size_t>& rows) const;
};

// x uniform on {1.5, 2.0, 2.5}, t ~ U(-1, 1),
// y1 = t + 0.1 e1, y2 = x |t| + 0.1 e2, group label = x.
Dataset generate_synthetic(std::size_t n, std::uint64_t seed);

struct CsvLoad {
  Dataset dataset;
  std::size_t dropped_rows = 0;  // rows with a non-finite value
};

// Header must read x0..x{p-1},y0..y{d-1}.
CsvLoad load_csv(const std::filesystem::path& path, int response_dim);
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.384;
  double calibration = 0.256;
  double validation = 0.16;
  double test = 0.2;

  std::array<double, 4> as_array() const { return {train, calibration, validation, test}; }
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> calibration;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// Seeded permutation cut into contiguous slices; sizes by largest remainder.
SplitIndices split(std::size_t n, const SplitFractions& fractions, std::uint64_t seed);
std::array<std::size_t, 4> split_sizes(std::size_t n, const SplitFractions& fractions);

struct StandardizationStats {
  Vector x_mean, x_std, y_mean, y_std;
};

inline constexpr double kMinStd = 1e-12;

StandardizationStats fit_stats(const Dataset& dataset, const std::vector<std::size_t>& train_rows);
Dataset apply_stats(const Dataset& dataset, const StandardizationStats& stats);
Dataset invert_stats(const Dataset& dataset, const StandardizationStats& stats);

}  // namespace vsps::data
