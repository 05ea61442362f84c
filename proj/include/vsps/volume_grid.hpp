#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vsps::metrics {

// Fixed set of probe points over a response-space box. A lattice grid counts
// points exactly; for high dimensions the probes are uniform Monte-Carlo draws
// and each probe stands for box_volume / probes units of volume.
class VolumeGrid {
 public:
  // `counts[j]` >= 2 points per dimension, endpoints included.
  static VolumeGrid lattice(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                            const std::vector<int>& counts);
  static VolumeGrid monte_carlo(const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                std::size_t probes, std::uint64_t seed);

  std::size_t size() const { return points_.size() / static_cast<std::size_t>(dim_); }
  int dim() const { return dim_; }
  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  double cell_volume() const { return cell_volume_; }
  bool is_monte_carlo() const { return monte_carlo_; }
  const Eigen::VectorXd& lower() const { return lower_; }
  const Eigen::VectorXd& upper() const { return upper_; }
  const std::vector<int>& counts() const { return counts_; }
  // Hash of the grid definition; equal tokens mean identical probe sets.
  std::uint64_t token() const { return token_; }
  std::string token_hex() const;

 private:
  VolumeGrid() = default;
  void finalize_token(std::uint64_t extra);

  int dim_ = 0;
  std::vector<double> points_;
  Eigen::VectorXd lower_;
  Eigen::VectorXd upper_;
  std::vector<int> counts_;
  double cell_volume_ = 0.0;
  bool monte_carlo_ = false;
  std::uint64_t token_ = 0;
};

struct GridSettings {
  double expand = 0.1;            // fraction of the range added on each side
  int resolution = 100;           // lattice points per dimension for d <= 2
  int resolution_3d = 40;         // lattice points per dimension for d == 3
  std::size_t mc_probes = 200000; // used for d >= 4
  std::uint64_t seed = 0;
};

// Bounding box of `responses` (rows are points) widened by `expand`, then a
// lattice for d <= 3 or Monte-Carlo probes for d >= 4.
VolumeGrid grid_for_responses(const Eigen::MatrixXd& responses, const GridSettings& settings);

}  // namespace vsps::metrics
