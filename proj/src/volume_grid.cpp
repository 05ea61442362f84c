#include "vsps/volume_grid.hpp"

#include <bit>
#include <cstdio>
#include <stdexcept>

#include "vsps/rng.hpp"

namespace vsps::metrics {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  std::uint64_t state = h ^ v;
  return splitmix64(state);
}

void check_bounds(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  if (lower.size() != upper.size() || lower.size() == 0) {
    throw std::invalid_argument("grid bounds must be non-empty and of equal length");
  }
  if (!lower.allFinite() || !upper.allFinite()) throw std::invalid_argument("grid bounds must be finite");
  for (Eigen::Index j = 0; j < lower.size(); ++j) {
    if (!(upper(j) > lower(j))) throw std::invalid_argument("grid upper bound must exceed lower bound");
  }
}

}  // namespace

VolumeGrid VolumeGrid::lattice(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                               const std::vector<int>& counts) {
  check_bounds(lower, upper);
  if (counts.size() != static_cast<std::size_t>(lower.size())) {
    throw std::invalid_argument("grid counts must have one entry per dimension");
  }
  VolumeGrid grid;
  grid.dim_ = static_cast<int>(lower.size());
  grid.lower_ = lower;
  grid.upper_ = upper;
  grid.counts_ = counts;
  std::size_t total = 1;
  grid.cell_volume_ = 1.0;
  std::vector<double> steps(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] < 2) throw std::invalid_argument("grid needs at least 2 points per dimension");
    total *= static_cast<std::size_t>(counts[j]);
    steps[j] = (upper(static_cast<Eigen::Index>(j)) - lower(static_cast<Eigen::Index>(j))) / (counts[j] - 1);
    grid.cell_volume_ *= steps[j];
  }
  grid.points_.resize(total * counts.size());
  std::vector<int> idx(counts.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    for (std::size_t j = 0; j < counts.size(); ++j) {
      grid.points_[n * counts.size() + j] = lower(static_cast<Eigen::Index>(j)) + idx[j] * steps[j];
    }
    for (std::size_t j = counts.size(); j-- > 0;) {
      if (++idx[j] < counts[j]) break;
      idx[j] = 0;
    }
  }
  grid.finalize_token(0);
  return grid;
}

VolumeGrid VolumeGrid::monte_carlo(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                   std::size_t probes, std::uint64_t seed) {
  check_bounds(lower, upper);
  if (probes == 0) throw std::invalid_argument("Monte-Carlo grid needs at least one probe");
  VolumeGrid grid;
  grid.dim_ = static_cast<int>(lower.size());
  grid.lower_ = lower;
  grid.upper_ = upper;
  grid.monte_carlo_ = true;
  grid.counts_ = {static_cast<int>(probes)};
  double box = 1.0;
  for (Eigen::Index j = 0; j < lower.size(); ++j) box *= upper(j) - lower(j);
  grid.cell_volume_ = box / static_cast<double>(probes);
  Rng rng(seed);
  grid.points_.resize(probes * static_cast<std::size_t>(grid.dim_));
  for (std::size_t n = 0; n < probes; ++n) {
    for (int j = 0; j < grid.dim_; ++j) {
      grid.points_[n * static_cast<std::size_t>(grid.dim_) + static_cast<std::size_t>(j)] =
          rng.uniform(lower(j), upper(j));
    }
  }
  grid.finalize_token(seed);
  return grid;
}

void VolumeGrid::finalize_token(std::uint64_t extra) {
  std::uint64_t h = mix(0x5653505347524944ULL, static_cast<std::uint64_t>(dim_));
  h = mix(h, monte_carlo_ ? 1 : 0);
  h = mix(h, extra);
  for (Eigen::Index j = 0; j < lower_.size(); ++j) {
    h = mix(h, std::bit_cast<std::uint64_t>(lower_(j)));
    h = mix(h, std::bit_cast<std::uint64_t>(upper_(j)));
  }
  for (int c : counts_) h = mix(h, static_cast<std::uint64_t>(c));
  token_ = h;
}

std::string VolumeGrid::token_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(token_));
  return buf;
}

VolumeGrid grid_for_responses(const Eigen::MatrixXd& responses, const GridSettings& settings) {
  if (responses.rows() == 0) throw std::invalid_argument("grid needs at least one response row");
  Eigen::VectorXd lower = responses.colwise().minCoeff().transpose();
  Eigen::VectorXd upper = responses.colwise().maxCoeff().transpose();
  for (Eigen::Index j = 0; j < lower.size(); ++j) {
    double range = upper(j) - lower(j);
    if (range <= 0.0) range = 1.0;
    lower(j) -= settings.expand * range;
    upper(j) += settings.expand * range;
  }
  const auto d = static_cast<int>(responses.cols());
  if (d >= 4) return VolumeGrid::monte_carlo(lower, upper, settings.mc_probes, settings.seed);
  const int per_dim = d == 3 ? settings.resolution_3d : settings.resolution;
  return VolumeGrid::lattice(lower, upper, std::vector<int>(static_cast<std::size_t>(d), per_dim));
}

}  // namespace vsps::metrics
