#include "vsps/baseline_qr.hpp"

#include <stdexcept>

#include <spdlog/spdlog.h>

namespace vsps::qr {

PinballResult pinball_loss(double prediction, double target, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("pinball_loss: tau must lie in (0, 1)");
  if (target >= prediction) return {tau * (target - prediction), -tau};
  return {(1.0 - tau) * (prediction - target), 1.0 - tau};
}

void QuantileNet::predict(const Matrix& x, Matrix& lower, Matrix& upper) const {
  const auto d = static_cast<Eigen::Index>(nets_.size());
  lower.resize(x.rows(), d);
  upper.resize(x.rows(), d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const Matrix out = nets_[static_cast<std::size_t>(j)].forward(x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      lower(i, j) = std::min(out(i, 0), out(i, 1));
      upper(i, j) = std::max(out(i, 0), out(i, 1));
    }
  }
}

BoxRegion QuantileNet::predict_box(const Vector& x) const {
  Matrix lower, upper;
  predict(Matrix(x.transpose()), lower, upper);
  return {lower.row(0).transpose(), upper.row(0).transpose()};
}

std::vector<nn::ParameterGroup> QuantileObjective::parameters() {
  std::vector<nn::ParameterGroup> groups;
  auto& layers = net_.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    nn::append_layer_parameters(layers[l], "qr" + std::to_string(dim_) + ".layer" + std::to_string(l), groups);
  }
  return groups;
}

double QuantileObjective::loss(const nn::Batch& batch, nn::GradientSet* grads) {
  const double lo_tau = alpha_ / 2.0;
  const double hi_tau = 1.0 - alpha_ / 2.0;
  nn::Mlp::Cache cache;
  const Matrix out = net_.forward(batch.features, grads ? &cache : nullptr);
  const auto n = static_cast<double>(batch.features.rows());
  Matrix grad_out(out.rows(), 2);
  double total = 0.0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double target = batch.targets(i, dim_);
    const auto lo = pinball_loss(out(i, 0), target, lo_tau);
    const auto hi = pinball_loss(out(i, 1), target, hi_tau);
    total += lo.loss + hi.loss;
    grad_out(i, 0) = lo.gradient / n;
    grad_out(i, 1) = hi.gradient / n;
  }
  if (grads) {
    std::vector<nn::AffineGradients> layer_grads;
    net_.backward(cache, grad_out, layer_grads);
    grads->clear();
    for (const auto& g : layer_grads) nn::append_layer_gradients(g, *grads);
  }
  return total / n;
}

QuantileNet train_naive_qr(const nn::Batch& train, const nn::Batch& val, double alpha,
                           const QrArchitecture& arch, const nn::TrainConfig& config) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  const auto p = static_cast<int>(train.features.cols());
  const auto d = static_cast<int>(train.targets.cols());
  std::vector<nn::Mlp> nets;
  for (int j = 0; j < d; ++j) {
    Rng init(derive_seed(arch.seed, Stream::kQuantileInit, static_cast<std::uint64_t>(j)));
    nn::Mlp net = nn::Mlp::glorot(p, arch.hidden_sizes, 2, init);
    QuantileObjective objective(net, j, alpha);
    nn::TrainConfig dim_config = config;
    dim_config.seed = derive_seed(config.seed, Stream::kQuantileTrain, static_cast<std::uint64_t>(j));
    const auto result = nn::train(objective, train, val, dim_config, "quantile training");
    spdlog::info("quantile training: dim {} stopped after {} epochs, val pinball {:.4f}", j,
                 result.history.size(), result.best_val_loss);
    nets.push_back(std::move(net));
  }
  return QuantileNet(alpha, std::move(nets));
}

std::vector<double> box_scores(const QuantileNet& model, const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) throw nn::ShapeError("box_scores: x and y row counts differ");
  if (y.cols() != model.response_dim()) throw nn::ShapeError("box_scores: response width");
  Matrix lower, upper;
  model.predict(x, lower, upper);
  std::vector<double> scores(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = -kInfiniteRadius;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      s = std::max({s, lower(i, j) - y(i, j), y(i, j) - upper(i, j)});
    }
    scores[static_cast<std::size_t>(i)] = s;
  }
  return scores;
}

CalibrationResult conformalize_qr(const QuantileNet& model, const Matrix& x, const Matrix& y, double alpha) {
  if (x.rows() == 0) throw std::invalid_argument("conformalize_qr: empty calibration set");
  return calibrate(box_scores(model, x, y), alpha);
}

BoxRegion inflate(const BoxRegion& box, double gamma) {
  return {box.lower.array() - gamma, box.upper.array() + gamma};
}

BoxRegion qr_region(const Vector& x, const QuantileNet& model, double gamma) {
  return inflate(model.predict_box(x), gamma);
}

bool box_contains(const BoxRegion& box, std::span<const double> y) {
  if (static_cast<Eigen::Index>(y.size()) != box.lower.size()) throw nn::ShapeError("box_contains: dimension");
  for (std::size_t j = 0; j < y.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    if (!(y[j] >= box.lower(jj) && y[j] <= box.upper(jj))) return false;
  }
  return true;
}

bool box_contains(const BoxRegion& box, const Vector& y) {
  return box_contains(box, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())));
}

RegionVolume box_volume(const BoxRegion& box, const metrics::VolumeGrid& grid) {
  if (grid.dim() != box.lower.size()) throw nn::ShapeError("box_volume: grid dimension mismatch");
  RegionVolume out;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (box_contains(box, grid.point(g))) ++out.count;
  }
  out.volume = static_cast<double>(out.count) * grid.cell_volume();
  return out;
}

}  // namespace vsps::qr
