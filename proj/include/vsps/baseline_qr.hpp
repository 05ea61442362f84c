#pragma once

// Per-dimension conformalized quantile regression producing axis-aligned boxes.

#include <cstdint>
#include <span>
#include <vector>

#include "vsps/nn.hpp"
#include "vsps/prediction_set.hpp"
#include "vsps/volume_grid.hpp"

namespace vsps::qr {

using nn::Matrix;
using nn::Vector;

struct PinballResult {
  double loss;
  double gradient;  // d loss / d prediction
};

PinballResult pinball_loss(double prediction, double target, double tau);

struct BoxRegion {
  Vector lower;
  Vector upper;
};

// One network per response dimension, each emitting (lower, upper) at
// levels (alpha/2, 1 - alpha/2).
class QuantileNet {
 public:
  QuantileNet() = default;
  QuantileNet(double alpha, std::vector<nn::Mlp> nets) : alpha_(alpha), nets_(std::move(nets)) {}

  // Bounds per row; crossed pairs are swapped.
  void predict(const Matrix& x, Matrix& lower, Matrix& upper) const;
  BoxRegion predict_box(const Vector& x) const;

  double alpha() const { return alpha_; }
  int response_dim() const { return static_cast<int>(nets_.size()); }
  std::vector<nn::Mlp>& nets() { return nets_; }
  const std::vector<nn::Mlp>& nets() const { return nets_; }

 private:
  double alpha_ = 0.1;
  std::vector<nn::Mlp> nets_;
};

// Summed pinball losses of one dimension's (lower, upper) outputs.
class QuantileObjective : public nn::Differentiable {
 public:
  QuantileObjective(nn::Mlp& net, int dim, double alpha) : net_(net), dim_(dim), alpha_(alpha) {}
  std::vector<nn::ParameterGroup> parameters() override;
  // batch.features = x, batch.targets = all responses (column `dim` is used)
  double loss(const nn::Batch& batch, nn::GradientSet* grads) override;

 private:
  nn::Mlp& net_;
  int dim_;
  double alpha_;
};

struct QrArchitecture {
  std::vector<int> hidden_sizes{64, 64, 64};
  std::uint64_t seed = 0;
};

QuantileNet train_naive_qr(const nn::Batch& train, const nn::Batch& val, double alpha,
                           const QrArchitecture& arch, const nn::TrainConfig& config);

// max_j max(lower_j - y_j, y_j - upper_j) per row.
std::vector<double> box_scores(const QuantileNet& model, const Matrix& x, const Matrix& y);
CalibrationResult conformalize_qr(const QuantileNet& model, const Matrix& x, const Matrix& y, double alpha);

// [lower - gamma, upper + gamma]; gamma may be negative.
BoxRegion inflate(const BoxRegion& box, double gamma);
BoxRegion qr_region(const Vector& x, const QuantileNet& model, double gamma);
bool box_contains(const BoxRegion& box, std::span<const double> y);
bool box_contains(const BoxRegion& box, const Vector& y);
RegionVolume box_volume(const BoxRegion& box, const metrics::VolumeGrid& grid);

}  // namespace vsps::qr
