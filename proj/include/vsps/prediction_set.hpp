#pragma once

// Volume-sorted prediction sets: flow samples ranked by |det df/dy|, a
// conformally calibrated radius, and unions of balls around the top-K samples.

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "vsps/cnf.hpp"
#include "vsps/rng.hpp"
#include "vsps/volume_grid.hpp"

namespace vsps {

using nn::Matrix;
using nn::Vector;

inline constexpr double kInfiniteRadius = std::numeric_limits<double>::infinity();

// M flow samples for one input, sorted by Jacobian determinant, largest first.
struct SortedSamples {
  Matrix samples;              // [M x d], row m is y^(m)
  Vector jacobians;            // J^(m) = |det df/dy| at y^(m), non-increasing
  Vector log_jacobians;        // log J^(m)
  std::vector<int> draw_index; // position of each sample in the original draw order
  Vector x;

  int size() const { return static_cast<int>(samples.rows()); }
};

// Draws M latent points from N(0, I), maps them through the inverse flow and
// sorts by J descending; ties keep draw order.
SortedSamples sample_sorted(const Vector& x, int M, const cnf::FlowModel& flow, Rng& rng);
SortedSamples sample_sorted(const Vector& x, int M, const cnf::FlowModel& flow, std::uint64_t master_seed,
                            Stream stream, std::uint64_t index);

// Sorts pre-computed draws (rows of `samples`) the same way sample_sorted does.
SortedSamples sort_by_jacobian(Matrix samples, const Vector& log_jacobians, const Vector& x);

struct BallUnionRegion {
  Matrix centers;  // [K x d]
  double radius = 0.0;

  int k() const { return static_cast<int>(centers.rows()); }
  int dim() const { return static_cast<int>(centers.cols()); }
};

double euclidean_distance(std::span<const double> a, const Matrix& centers, Eigen::Index row);
double nearest_center_distance(const Matrix& centers, std::span<const double> y);

// min over centers of ||y - c||_2 <= radius, boundary included.
bool region_contains(const BallUnionRegion& region, std::span<const double> y);
bool region_contains(const BallUnionRegion& region, const Vector& y);

struct RegionVolume {
  std::size_t count = 0;
  double volume = 0.0;
};

RegionVolume region_volume(const BallUnionRegion& region, const metrics::VolumeGrid& grid);

// ceil((1 - alpha)(n + 1)), the 1-based order statistic used as the quantile.
std::size_t conformal_rank(std::size_t n, double alpha);
// The conformal_rank-th smallest score, or +inf when that rank exceeds n.
double conformal_quantile(std::span<const double> scores, double alpha);

struct CalibrationResult {
  double gamma = 0.0;
  std::vector<double> scores;
  std::size_t quantile_index = 0;

  bool infinite() const { return gamma == kInfiniteRadius; }
};

CalibrationResult calibrate(std::vector<double> scores, double alpha);

// Nearest-center distances for every calibration point and every K at once:
// entry (i, K-1) is min over the point's own top-K samples of ||y_i - y_i^(m)||.
// Point i samples with seed derive_seed(master_seed, stream, i).
Matrix score_table(const cnf::FlowModel& flow, const Matrix& x, const Matrix& y, int M,
                   std::uint64_t master_seed, Stream stream);
// Column K-1 of score_table.
std::vector<double> calibration_scores(const cnf::FlowModel& flow, int K, const Matrix& x, const Matrix& y,
                                       int M, std::uint64_t master_seed, Stream stream);
// Prefix minimum of the distances from y to each sorted sample; entry K-1 is d(K).
std::vector<double> prefix_min_distances(const SortedSamples& samples, std::span<const double> y);

struct KSelection {
  int k_star = 1;
  std::vector<double> gammas;        // gamma(K), K = 1..M
  std::vector<double> mean_volumes;  // Size_K, K = 1..M
};

// Chooses K in 1..M minimizing the mean region volume over `size_x`, with
// gamma(K) calibrated on the selection-calibration pair. Ties go to smaller K;
// if every gamma(K) is infinite the result is M.
KSelection select_k(const cnf::FlowModel& flow, const Matrix& size_x, const Matrix& calibration_x,
                    const Matrix& calibration_y, double alpha, int M, const metrics::VolumeGrid& grid,
                    std::uint64_t master_seed, Stream calibration_stream = Stream::kSelectionCalibration);

// Union of radius-gamma balls around the top-K samples for x.
BallUnionRegion predict_region(const Vector& x, const cnf::FlowModel& flow, int K, double gamma, int M,
                               Rng& rng);
BallUnionRegion region_from_samples(const SortedSamples& samples, int K, double gamma);

// Machine-readable geometry for one test point.
struct RegionRecord {
  std::size_t test_index = 0;
  int k = 0;
  double gamma = 0.0;
  Matrix centers;
};

}  // namespace vsps
