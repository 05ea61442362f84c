#pragma once

// Small dense feedforward engine with hand-written gradients: masked affine
// layers, leaky ReLU, Adam and an early-stopping mini-batch trainer.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vsps/rng.hpp"

namespace vsps::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch = -1, std::string group = {})
      : std::runtime_error(what), epoch_(epoch), group_(std::move(group)) {}
  int epoch() const { return epoch_; }
  const std::string& group() const { return group_; }

 private:
  int epoch_;
  std::string group_;
};

inline constexpr double kLeakySlope = 0.01;

struct AffineLayer {
  Matrix weights;             // [out x in]
  Vector biases;              // [out]
  std::optional<Matrix> mask; // [out x in] of 0/1; absent means all ones

  // Glorot-uniform weights (drawn before masking), zero biases.
  static AffineLayer glorot(int in, int out, Rng& rng, std::optional<Matrix> mask = std::nullopt);
  static AffineLayer zeros(int in, int out, std::optional<Matrix> mask = std::nullopt);

  int in_features() const { return static_cast<int>(weights.cols()); }
  int out_features() const { return static_cast<int>(weights.rows()); }
  Matrix effective_weights() const;
};

struct AffineCache {
  Matrix input;
};

struct AffineGradients {
  Matrix weights;  // already masked
  Vector biases;
  Matrix input;
};

// output = input * (W . mask)^T + b, rows are batch entries.
Matrix affine_forward(const Matrix& input, const AffineLayer& layer, AffineCache* cache = nullptr);
AffineGradients affine_backward(const AffineCache& cache, const AffineLayer& layer,
                                const Matrix& grad_output);

Matrix leaky_relu(const Matrix& input, double slope = kLeakySlope);
// `pre_activation` is the forward input; the subgradient at exactly 0 is the slope.
Matrix leaky_relu_backward(const Matrix& pre_activation, const Matrix& grad_output,
                           double slope = kLeakySlope);

// Affine layers with leaky ReLU between them; the last layer is linear.
class Mlp {
 public:
  struct Cache {
    std::vector<AffineCache> affine;
    std::vector<Matrix> pre_activations;
  };

  Mlp() = default;
  explicit Mlp(std::vector<AffineLayer> layers, double slope = kLeakySlope);

  // Glorot-initialized MLP with optional per-layer masks.
  static Mlp glorot(int in, const std::vector<int>& hidden, int out, Rng& rng,
                    const std::vector<Matrix>& masks = {});

  Matrix forward(const Matrix& input, Cache* cache = nullptr) const;
  // Returns grad w.r.t. the input; per-layer parameter gradients land in `layer_grads`.
  Matrix backward(const Cache& cache, const Matrix& grad_output,
                  std::vector<AffineGradients>& layer_grads) const;

  std::vector<AffineLayer>& layers() { return layers_; }
  const std::vector<AffineLayer>& layers() const { return layers_; }
  double slope() const { return slope_; }

 private:
  std::vector<AffineLayer> layers_;
  double slope_ = kLeakySlope;
};

struct ParameterGroup {
  std::string name;
  std::span<double> values;
};

// One buffer per parameter group, same order and length.
using GradientSet = std::vector<std::vector<double>>;

void append_layer_parameters(AffineLayer& layer, const std::string& prefix,
                             std::vector<ParameterGroup>& out);
void append_layer_gradients(const AffineGradients& grads, GradientSet& out);

struct Batch {
  Matrix features;
  Matrix targets;

  Eigen::Index rows() const { return std::max(features.rows(), targets.rows()); }
  Batch take(std::span<const std::size_t> rows) const;
};

// A model together with its training loss.
class Differentiable {
 public:
  virtual ~Differentiable() = default;
  virtual std::vector<ParameterGroup> parameters() = 0;
  // Mean loss over the batch rows. When `grads` is non-null it is overwritten
  // with the analytic gradient, laid out like parameters().
  virtual double loss(const Batch& batch, GradientSet* grads) = 0;
};

std::vector<double> snapshot(const std::vector<ParameterGroup>& params);
void restore(const std::vector<ParameterGroup>& params, std::span<const double> flat);
std::size_t parameter_count(const std::vector<ParameterGroup>& params);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(const std::vector<ParameterGroup>& params, AdamConfig config);

  GradientSet first_moment;
  GradientSet second_moment;
  std::uint64_t step = 0;
  AdamConfig config;
};

// Bias-corrected Adam update in place. Throws TrainingError naming the group
// if any gradient entry is non-finite.
void adam_step(const std::vector<ParameterGroup>& params, const GradientSet& grads, AdamState& state);

struct TrainConfig {
  int batch_size = 256;
  int max_epochs = 1000;
  int patience = 20;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch;  // 1-based
  double train_loss;
  double val_loss;
};

struct TrainResult {
  std::vector<double> best_parameters;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 means the initial parameters were never beaten
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
};

// Adam over shuffled mini-batches with early stopping on validation loss.
// The model is left holding the best parameters on return.
TrainResult train(Differentiable& model, const Batch& train_data, const Batch& val_data,
                  const TrainConfig& config, const std::string& log_tag = "train");

// Max over all parameters of |a - n| / max(|a|, |n|, 1e-8), where n is the
// central difference with step 1e-5.
double gradient_check(Differentiable& model, const Batch& probe, double step = 1e-5);

}  // namespace vsps::nn
