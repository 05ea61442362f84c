#include "vsps/nn.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

namespace vsps::nn {

namespace {

void check_mask_shape(const AffineLayer& layer) {
  if (layer.mask && (layer.mask->rows() != layer.weights.rows() ||
                     layer.mask->cols() != layer.weights.cols())) {
    throw ShapeError("affine mask shape does not match weights");
  }
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

AffineLayer AffineLayer::glorot(int in, int out, Rng& rng, std::optional<Matrix> mask) {
  AffineLayer layer = zeros(in, out, std::move(mask));
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  // Column-major fill order is part of the seed contract.
  for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      layer.weights(r, c) = rng.uniform(-bound, bound);
    }
  }
  return layer;
}

AffineLayer AffineLayer::zeros(int in, int out, std::optional<Matrix> mask) {
  AffineLayer layer{Matrix::Zero(out, in), Vector::Zero(out), std::move(mask)};
  check_mask_shape(layer);
  return layer;
}

Matrix AffineLayer::effective_weights() const {
  if (!mask) return weights;
  return weights.cwiseProduct(*mask);
}

Matrix affine_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache) {
  check_mask_shape(layer);
  if (input.cols() != layer.weights.cols()) {
    throw ShapeError("affine_forward: input width " + std::to_string(input.cols()) +
                     " != layer input width " + std::to_string(layer.weights.cols()));
  }
  if (layer.biases.size() != layer.weights.rows()) {
    throw ShapeError("affine_forward: bias length does not match output width");
  }
  Matrix output = input * layer.effective_weights().transpose();
  output.rowwise() += layer.biases.transpose();
  if (cache) cache->input = input;
  return output;
}

AffineGradients affine_backward(const AffineCache& cache, const AffineLayer& layer,
                                const Matrix& grad_output) {
  if (grad_output.rows() != cache.input.rows() || grad_output.cols() != layer.weights.rows()) {
    throw ShapeError("affine_backward: grad_output shape does not match the forward call");
  }
  AffineGradients grads;
  grads.weights = grad_output.transpose() * cache.input;
  if (layer.mask) grads.weights = grads.weights.cwiseProduct(*layer.mask);
  grads.biases = grad_output.colwise().sum().transpose();
  grads.input = grad_output * layer.effective_weights();
  return grads;
}

Matrix leaky_relu(const Matrix& input, double slope) {
  return input.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Matrix leaky_relu_backward(const Matrix& pre_activation, const Matrix& grad_output, double slope) {
  if (pre_activation.rows() != grad_output.rows() || pre_activation.cols() != grad_output.cols()) {
    throw ShapeError("leaky_relu_backward: shape mismatch");
  }
  return grad_output.binaryExpr(pre_activation,
                                [slope](double g, double v) { return v > 0.0 ? g : slope * g; });
}

Mlp::Mlp(std::vector<AffineLayer> layers, double slope) : layers_(std::move(layers)), slope_(slope) {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].in_features() != layers_[i - 1].out_features()) {
      throw ShapeError("Mlp: consecutive layer widths do not chain");
    }
  }
}

Mlp Mlp::glorot(int in, const std::vector<int>& hidden, int out, Rng& rng,
                const std::vector<Matrix>& masks) {
  std::vector<int> widths;
  widths.push_back(in);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  if (!masks.empty() && masks.size() != widths.size() - 1) {
    throw ShapeError("Mlp::glorot: one mask per layer required");
  }
  std::vector<AffineLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    std::optional<Matrix> mask;
    if (!masks.empty()) mask = masks[i];
    layers.push_back(AffineLayer::glorot(widths[i], widths[i + 1], rng, std::move(mask)));
  }
  return Mlp(std::move(layers));
}

Matrix Mlp::forward(const Matrix& input, Cache* cache) const {
  if (cache) {
    cache->affine.assign(layers_.size(), {});
    cache->pre_activations.assign(layers_.size(), {});
  }
  Matrix h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Matrix a = affine_forward(h, layers_[i], cache ? &cache->affine[i] : nullptr);
    if (i + 1 == layers_.size()) return a;
    h = leaky_relu(a, slope_);
    if (cache) cache->pre_activations[i] = std::move(a);
  }
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& grad_output,
                     std::vector<AffineGradients>& layer_grads) const {
  layer_grads.assign(layers_.size(), {});
  Matrix g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 != layers_.size()) g = leaky_relu_backward(cache.pre_activations[i], g, slope_);
    layer_grads[i] = affine_backward(cache.affine[i], layers_[i], g);
    g = layer_grads[i].input;
  }
  return g;
}

void append_layer_parameters(AffineLayer& layer, const std::string& prefix,
                             std::vector<ParameterGroup>& out) {
  out.push_back({prefix + ".weights",
                 std::span<double>(layer.weights.data(), static_cast<std::size_t>(layer.weights.size()))});
  out.push_back({prefix + ".biases",
                 std::span<double>(layer.biases.data(), static_cast<std::size_t>(layer.biases.size()))});
}

void append_layer_gradients(const AffineGradients& grads, GradientSet& out) {
  out.emplace_back(grads.weights.data(), grads.weights.data() + grads.weights.size());
  out.emplace_back(grads.biases.data(), grads.biases.data() + grads.biases.size());
}

Batch Batch::take(std::span<const std::size_t> rows) const {
  Batch out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.targets.resize(static_cast<Eigen::Index>(rows.size()), targets.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    const auto o = static_cast<Eigen::Index>(i);
    if (features.cols() > 0) out.features.row(o) = features.row(r);
    if (targets.cols() > 0) out.targets.row(o) = targets.row(r);
  }
  return out;
}

std::vector<double> snapshot(const std::vector<ParameterGroup>& params) {
  std::vector<double> flat;
  flat.reserve(parameter_count(params));
  for (const auto& group : params) flat.insert(flat.end(), group.values.begin(), group.values.end());
  return flat;
}

void restore(const std::vector<ParameterGroup>& params, std::span<const double> flat) {
  if (flat.size() != parameter_count(params)) throw ShapeError("restore: parameter count mismatch");
  std::size_t offset = 0;
  for (const auto& group : params) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), group.values.size(),
                group.values.begin());
    offset += group.values.size();
  }
}

std::size_t parameter_count(const std::vector<ParameterGroup>& params) {
  std::size_t n = 0;
  for (const auto& group : params) n += group.values.size();
  return n;
}

AdamState::AdamState(const std::vector<ParameterGroup>& params, AdamConfig cfg) : config(cfg) {
  for (const auto& group : params) {
    first_moment.emplace_back(group.values.size(), 0.0);
    second_moment.emplace_back(group.values.size(), 0.0);
  }
}

void adam_step(const std::vector<ParameterGroup>& params, const GradientSet& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state group counts differ");
  }
  for (std::size_t g = 0; g < params.size(); ++g) {
    if (grads[g].size() != params[g].values.size() ||
        state.first_moment[g].size() != params[g].values.size()) {
      throw ShapeError("adam_step: size mismatch in group " + params[g].name);
    }
    if (!all_finite(grads[g])) {
      throw TrainingError("non-finite gradient in parameter group " + params[g].name, -1,
                          params[g].name);
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto& m = state.first_moment[g];
    auto& v = state.second_moment[g];
    auto values = params[g].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double grad = grads[g][i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad * grad;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  if (max_epochs < 0) throw std::invalid_argument("max_epochs must be non-negative");
  if (patience <= 0) throw std::invalid_argument("patience must be positive");
  if (max_epochs > 0 && patience > max_epochs) {
    throw std::invalid_argument("patience must not exceed max_epochs");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
}

TrainResult train(Differentiable& model, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& config, const std::string& log_tag) {
  config.validate();
  if (train_data.rows() == 0 || val_data.rows() == 0) {
    throw std::invalid_argument("train: empty training or validation set");
  }
  const auto params = model.parameters();
  AdamState adam(params, AdamConfig{config.learning_rate});
  Rng rng(config.seed);

  TrainResult result;
  result.best_parameters = snapshot(params);
  result.initial_val_loss = model.loss(val_data, nullptr);
  if (!std::isfinite(result.initial_val_loss)) {
    throw TrainingError(log_tag + ": non-finite validation loss before training", 0);
  }
  result.best_val_loss = result.initial_val_loss;

  const auto n = static_cast<std::size_t>(train_data.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  GradientSet grads;
  int stale_epochs = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      const Batch batch =
          train_data.take(std::span<const std::size_t>(order).subspan(start, stop - start));
      const double loss = model.loss(batch, &grads);
      if (!std::isfinite(loss)) {
        throw TrainingError(log_tag + ": non-finite training loss at epoch " + std::to_string(epoch),
                            epoch);
      }
      try {
        adam_step(params, grads, adam);
      } catch (const TrainingError& e) {
        throw TrainingError(log_tag + ": " + e.what() + " at epoch " + std::to_string(epoch), epoch,
                            e.group());
      }
      loss_sum += loss * static_cast<double>(stop - start);
    }
    const double val_loss = model.loss(val_data, nullptr);
    if (!std::isfinite(val_loss)) {
      throw TrainingError(log_tag + ": non-finite validation loss at epoch " + std::to_string(epoch),
                          epoch);
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(n), val_loss});
    spdlog::debug("{} epoch {} train {:.6f} val {:.6f}", log_tag, epoch, result.history.back().train_loss,
                  val_loss);
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.best_parameters = snapshot(params);
      stale_epochs = 0;
    } else if (++stale_epochs >= config.patience) {
      break;
    }
  }
  restore(params, result.best_parameters);
  return result;
}

double gradient_check(Differentiable& model, const Batch& probe, double step) {
  const auto params = model.parameters();
  GradientSet analytic;
  model.loss(probe, &analytic);
  double worst = 0.0;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto values = params[g].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double plus = model.loss(probe, nullptr);
      values[i] = original - step;
      const double minus = model.loss(probe, nullptr);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[g][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace vsps::nn
