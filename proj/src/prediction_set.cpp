#include "vsps/prediction_set.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace vsps {

SortedSamples sort_by_jacobian(Matrix samples, const Vector& log_jacobians, const Vector& x) {
  const auto M = static_cast<int>(samples.rows());
  std::vector<int> order(static_cast<std::size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return log_jacobians(a) > log_jacobians(b); });
  SortedSamples out;
  out.samples.resize(M, samples.cols());
  out.log_jacobians.resize(M);
  out.jacobians.resize(M);
  out.draw_index = order;
  out.x = x;
  for (int m = 0; m < M; ++m) {
    out.samples.row(m) = samples.row(order[static_cast<std::size_t>(m)]);
    out.log_jacobians(m) = log_jacobians(order[static_cast<std::size_t>(m)]);
    out.jacobians(m) = std::exp(out.log_jacobians(m));
  }
  return out;
}

SortedSamples sample_sorted(const Vector& x, int M, const cnf::FlowModel& flow, Rng& rng) {
  if (M < 1) throw std::invalid_argument("sample_sorted: M must be positive");
  const int d = flow.response_dim();
  if (x.size() != flow.feature_dim()) throw nn::ShapeError("sample_sorted: feature width");
  Matrix z(M, d);
  for (int m = 0; m < M; ++m) {
    for (int j = 0; j < d; ++j) z(m, j) = rng.normal();
  }
  const Matrix xs = x.transpose().replicate(M, 1);
  cnf::FlowOutput out = flow.inverse(z, xs);
  return sort_by_jacobian(std::move(out.values), out.log_det, x);
}

SortedSamples sample_sorted(const Vector& x, int M, const cnf::FlowModel& flow, std::uint64_t master_seed,
                            Stream stream, std::uint64_t index) {
  Rng rng(derive_seed(master_seed, stream, index));
  return sample_sorted(x, M, flow, rng);
}

double euclidean_distance(std::span<const double> a, const Matrix& centers, Eigen::Index row) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < centers.cols(); ++j) {
    const double diff = a[static_cast<std::size_t>(j)] - centers(row, j);
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

double nearest_center_distance(const Matrix& centers, std::span<const double> y) {
  if (static_cast<Eigen::Index>(y.size()) != centers.cols()) {
    throw nn::ShapeError("nearest_center_distance: dimension mismatch");
  }
  double best = kInfiniteRadius;
  for (Eigen::Index m = 0; m < centers.rows(); ++m) best = std::min(best, euclidean_distance(y, centers, m));
  return best;
}

bool region_contains(const BallUnionRegion& region, std::span<const double> y) {
  if (region.radius == kInfiniteRadius) return true;
  return nearest_center_distance(region.centers, y) <= region.radius;
}

bool region_contains(const BallUnionRegion& region, const Vector& y) {
  return region_contains(region, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

RegionVolume region_volume(const BallUnionRegion& region, const metrics::VolumeGrid& grid) {
  if (grid.dim() != region.dim()) throw nn::ShapeError("region_volume: grid dimension mismatch");
  RegionVolume out;
  if (region.radius == kInfiniteRadius) {
    out.count = grid.size();
  } else {
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (nearest_center_distance(region.centers, grid.point(g)) <= region.radius) ++out.count;
    }
  }
  out.volume = static_cast<double>(out.count) * grid.cell_volume();
  return out;
}

std::size_t conformal_rank(std::size_t n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  // The small slack keeps exact products such as 0.9 * 10 from rounding up.
  const double level = (1.0 - alpha) * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::ceil(level - 1e-9));
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("conformal_quantile: no scores");
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) return kInfiniteRadius;
  std::vector<double> work(scores.begin(), scores.end());
  auto nth = work.begin() + static_cast<std::ptrdiff_t>(k - 1);
  std::nth_element(work.begin(), nth, work.end());
  return *nth;
}

CalibrationResult calibrate(std::vector<double> scores, double alpha) {
  CalibrationResult result;
  result.gamma = conformal_quantile(scores, alpha);
  result.quantile_index = conformal_rank(scores.size(), alpha);
  result.scores = std::move(scores);
  if (result.infinite()) {
    spdlog::warn("calibration: rank {} exceeds {} scores, radius is unbounded at alpha {}",
                 result.quantile_index, result.scores.size(), alpha);
  }
  return result;
}

std::vector<double> prefix_min_distances(const SortedSamples& samples, std::span<const double> y) {
  std::vector<double> out(static_cast<std::size_t>(samples.size()));
  double best = kInfiniteRadius;
  for (int m = 0; m < samples.size(); ++m) {
    best = std::min(best, euclidean_distance(y, samples.samples, m));
    out[static_cast<std::size_t>(m)] = best;
  }
  return out;
}

Matrix score_table(const cnf::FlowModel& flow, const Matrix& x, const Matrix& y, int M,
                   std::uint64_t master_seed, Stream stream) {
  if (x.rows() == 0) throw std::invalid_argument("score_table: empty calibration set");
  if (x.rows() != y.rows()) throw nn::ShapeError("score_table: x and y row counts differ");
  Matrix table(x.rows(), M);
  std::vector<double> yi(static_cast<std::size_t>(y.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const SortedSamples s =
        sample_sorted(x.row(i).transpose(), M, flow, master_seed, stream, static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < y.cols(); ++j) yi[static_cast<std::size_t>(j)] = y(i, j);
    const auto d = prefix_min_distances(s, yi);
    for (int k = 0; k < M; ++k) table(i, k) = d[static_cast<std::size_t>(k)];
  }
  return table;
}

std::vector<double> calibration_scores(const cnf::FlowModel& flow, int K, const Matrix& x, const Matrix& y,
                                       int M, std::uint64_t master_seed, Stream stream) {
  if (K < 1 || K > M) throw std::invalid_argument("calibration_scores: K must lie in 1..M");
  const Matrix table = score_table(flow, x, y, M, master_seed, stream);
  const Vector col = table.col(K - 1);
  return {col.data(), col.data() + col.size()};
}

KSelection select_k(const cnf::FlowModel& flow, const Matrix& size_x, const Matrix& calibration_x,
                    const Matrix& calibration_y, double alpha, int M, const metrics::VolumeGrid& grid,
                    std::uint64_t master_seed, Stream calibration_stream) {
  if (M < 1) throw std::invalid_argument("select_k: M must be positive");
  if (size_x.rows() == 0 || calibration_x.rows() == 0) {
    throw std::invalid_argument("select_k: empty validation or selection-calibration set");
  }
  if (grid.dim() != flow.response_dim()) throw nn::ShapeError("select_k: grid dimension mismatch");
  KSelection sel;
  const Matrix table = score_table(flow, calibration_x, calibration_y, M, master_seed, calibration_stream);
  sel.gammas.resize(static_cast<std::size_t>(M));
  bool any_finite = false;
  for (int k = 0; k < M; ++k) {
    const Vector col = table.col(k);
    sel.gammas[static_cast<std::size_t>(k)] =
        conformal_quantile(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())), alpha);
    any_finite = any_finite || sel.gammas[static_cast<std::size_t>(k)] != kInfiniteRadius;
  }
  if (!any_finite) {
    spdlog::warn("select_k: radius unbounded for every K; using K = M");
    sel.k_star = M;
    sel.mean_volumes.assign(static_cast<std::size_t>(M), static_cast<double>(grid.size()) * grid.cell_volume());
    return sel;
  }

  std::vector<std::size_t> counts(static_cast<std::size_t>(M), 0);
  for (Eigen::Index i = 0; i < size_x.rows(); ++i) {
    const SortedSamples s = sample_sorted(size_x.row(i).transpose(), M, flow, master_seed,
                                          Stream::kSizeEvaluation, static_cast<std::uint64_t>(i));
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const auto point = grid.point(g);
      double running = kInfiniteRadius;
      for (int k = 0; k < M; ++k) {
        running = std::min(running, euclidean_distance(point, s.samples, k));
        if (running <= sel.gammas[static_cast<std::size_t>(k)]) ++counts[static_cast<std::size_t>(k)];
      }
    }
  }
  sel.mean_volumes.resize(static_cast<std::size_t>(M));
  double best = kInfiniteRadius;
  for (int k = 0; k < M; ++k) {
    const double size = static_cast<double>(counts[static_cast<std::size_t>(k)]) * grid.cell_volume() /
                        static_cast<double>(size_x.rows());
    sel.mean_volumes[static_cast<std::size_t>(k)] = size;
    if (size < best) {
      best = size;
      sel.k_star = k + 1;
    }
  }
  return sel;
}

BallUnionRegion region_from_samples(const SortedSamples& samples, int K, double gamma) {
  if (K < 1 || K > samples.size()) throw std::invalid_argument("region: K must lie in 1..M");
  return BallUnionRegion{samples.samples.topRows(K), gamma};
}

BallUnionRegion predict_region(const Vector& x, const cnf::FlowModel& flow, int K, double gamma, int M,
                               Rng& rng) {
  if (K > M) throw std::invalid_argument("predict_region: K exceeds M");
  return region_from_samples(sample_sorted(x, M, flow, rng), K, gamma);
}

}  // namespace vsps
