#include "vsps/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace vsps::metrics {

namespace {

std::span<const double> row_span(const Eigen::MatrixXd& m, Eigen::Index row, std::vector<double>& buffer) {
  buffer.resize(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) buffer[static_cast<std::size_t>(j)] = m(row, j);
  return buffer;
}

template <typename Region, typename Contains>
std::vector<bool> flags(std::span<const Region> regions, const Eigen::MatrixXd& responses, Contains contains) {
  if (static_cast<Eigen::Index>(regions.size()) != responses.rows()) {
    throw std::invalid_argument("coverage: region and response counts differ");
  }
  std::vector<bool> out(regions.size());
  std::vector<double> buffer;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    out[i] = contains(regions[i], row_span(responses, static_cast<Eigen::Index>(i), buffer));
  }
  return out;
}

}  // namespace

std::vector<bool> covered_flags(std::span<const BallUnionRegion> regions, const Eigen::MatrixXd& responses) {
  return flags(regions, responses,
               [](const BallUnionRegion& r, std::span<const double> y) { return region_contains(r, y); });
}

std::vector<bool> covered_flags(std::span<const qr::BoxRegion> regions, const Eigen::MatrixXd& responses) {
  return flags(regions, responses,
               [](const qr::BoxRegion& r, std::span<const double> y) { return qr::box_contains(r, y); });
}

double coverage_fraction(const std::vector<bool>& covered) {
  if (covered.empty()) throw std::invalid_argument("coverage: no test points");
  std::size_t hits = 0;
  for (bool c : covered) hits += c ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(covered.size());
}

double marginal_coverage(std::span<const BallUnionRegion> regions, const Eigen::MatrixXd& responses) {
  return coverage_fraction(covered_flags(regions, responses));
}

double marginal_coverage(std::span<const qr::BoxRegion> regions, const Eigen::MatrixXd& responses) {
  return coverage_fraction(covered_flags(regions, responses));
}

ConditionalCoverage conditional_coverage(const std::vector<bool>& covered, const std::vector<double>& labels) {
  if (covered.size() != labels.size()) throw std::invalid_argument("conditional coverage: label count mismatch");
  if (covered.empty()) throw std::invalid_argument("conditional coverage: no test points");
  std::map<double, std::pair<std::size_t, std::size_t>> tally;
  for (std::size_t i = 0; i < covered.size(); ++i) {
    auto& [hits, total] = tally[labels[i]];
    hits += covered[i] ? 1 : 0;
    total += 1;
  }
  ConditionalCoverage out;
  for (const auto& [label, counts] : tally) {
    const double c = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    out.per_group[label] = c;
    out.minimum = std::min(out.minimum, c);
  }
  return out;
}

SizeSummary mean_region_size(std::span<const BallUnionRegion> regions, const VolumeGrid& grid) {
  if (regions.empty()) throw std::invalid_argument("mean_region_size: no regions");
  SizeSummary s;
  for (const auto& r : regions) {
    const auto v = region_volume(r, grid);
    s.mean_count += static_cast<double>(v.count);
    s.mean_volume += v.volume;
  }
  s.mean_count /= static_cast<double>(regions.size());
  s.mean_volume /= static_cast<double>(regions.size());
  return s;
}

SizeSummary mean_region_size(std::span<const qr::BoxRegion> regions, const VolumeGrid& grid) {
  if (regions.empty()) throw std::invalid_argument("mean_region_size: no regions");
  SizeSummary s;
  for (const auto& r : regions) {
    const auto v = qr::box_volume(r, grid);
    s.mean_count += static_cast<double>(v.count);
    s.mean_volume += v.volume;
  }
  s.mean_count /= static_cast<double>(regions.size());
  s.mean_volume /= static_cast<double>(regions.size());
  return s;
}

Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate: at least one value required");
  Aggregate a;
  a.count = values.size();
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

std::string format_percent(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", 100.0 * a.mean, 100.0 * a.std_dev);
  return buf;
}

std::string format_plain(const Aggregate& a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", a.mean, a.std_dev);
  return buf;
}

}  // namespace vsps::metrics
