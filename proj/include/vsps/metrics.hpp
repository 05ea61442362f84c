#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "vsps/baseline_qr.hpp"
#include "vsps/prediction_set.hpp"
#include "vsps/volume_grid.hpp"

namespace vsps::metrics {

std::vector<bool> covered_flags(std::span<const BallUnionRegion> regions, const Eigen::MatrixXd& responses);
std::vector<bool> covered_flags(std::span<const qr::BoxRegion> regions, const Eigen::MatrixXd& responses);

double coverage_fraction(const std::vector<bool>& covered);
double marginal_coverage(std::span<const BallUnionRegion> regions, const Eigen::MatrixXd& responses);
double marginal_coverage(std::span<const qr::BoxRegion> regions, const Eigen::MatrixXd& responses);

struct ConditionalCoverage {
  std::map<double, double> per_group;
  double minimum = 1.0;
};

// Coverage per distinct label; every group counts equally in the minimum.
ConditionalCoverage conditional_coverage(const std::vector<bool>& covered, const std::vector<double>& labels);

struct SizeSummary {
  double mean_count = 0.0;
  double mean_volume = 0.0;
};

SizeSummary mean_region_size(std::span<const BallUnionRegion> regions, const VolumeGrid& grid);
SizeSummary mean_region_size(std::span<const qr::BoxRegion> regions, const VolumeGrid& grid);

struct Aggregate {
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

Aggregate aggregate(std::span<const double> values);

// "90.06 (1.30)" for fractions 0.9006 and 0.0130.
std::string format_percent(const Aggregate& a);
std::string format_plain(const Aggregate& a);

}  // namespace vsps::metrics
