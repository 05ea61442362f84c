#pragma once

// Conditional masked autoregressive flow z = f(y; x) made of stacked
// conditional MADE blocks. Each block maps
//   z_i = (y_i - mu_i(y_<i, x)) * exp(-s_i(y_<i, x))
// so the density pass is a single network evaluation and sampling
// (the inverse) is sequential over coordinates.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "vsps/nn.hpp"
#include "vsps/rng.hpp"

namespace vsps::cnf {

using nn::Matrix;
using nn::Vector;

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FlowArchitecture {
  int response_dim = 2;  // d
  int feature_dim = 1;   // p
  std::vector<int> hidden_sizes{64, 64, 64};
  int blocks = 5;
  double log_scale_clamp = 7.0;
  std::uint64_t seed = 0;
};

struct MadeMasks {
  std::vector<Matrix> layers;                    // one per affine layer, output layer last
  std::vector<std::vector<int>> hidden_degrees;  // one per hidden layer
};

// `ranks[i]` in 1..d is the autoregressive position of coordinate i.
// Hidden degrees are drawn uniformly from {0, ..., d-1}; a degree-0 unit sees
// only x. Input columns are [y (d) | x (p)]; x columns are unmasked.
MadeMasks build_made_masks(int d, int p, const std::vector<int>& hidden_sizes,
                           const std::vector<int>& ranks, Rng& rng);
// Mask construction from explicit degrees (used when reloading a model).
MadeMasks masks_from_degrees(int d, int p, const std::vector<int>& ranks,
                             const std::vector<std::vector<int>>& hidden_degrees);

class MadeBlock {
 public:
  struct Heads {
    Matrix shift;          // mu   [batch x d]
    Matrix log_scale;      // s after clamping
    Matrix raw_log_scale;  // s before clamping
  };
  struct Cache {
    nn::Mlp::Cache mlp;
    Heads heads;
    Matrix z;
  };

  MadeBlock() = default;
  MadeBlock(std::vector<int> ranks, std::vector<std::vector<int>> hidden_degrees, nn::Mlp net,
            int feature_dim, double clamp);

  Heads heads(const Matrix& y, const Matrix& x, nn::Mlp::Cache* cache = nullptr) const;

  // z and per-row log|det dz/dy| = -sum_i s_i.
  Matrix forward(const Matrix& y, const Matrix& x, Vector& log_det, Cache* cache = nullptr) const;
  Matrix inverse(const Matrix& z, const Matrix& x, Vector& log_det) const;

  // Back-propagates dL/dz and dL/dlog_det (per row); returns dL/dy.
  Matrix backward(const Cache& cache, const Matrix& grad_z, const Vector& grad_log_det,
                  std::vector<nn::AffineGradients>& layer_grads) const;

  const std::vector<int>& ranks() const { return ranks_; }
  const std::vector<std::vector<int>>& hidden_degrees() const { return hidden_degrees_; }
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }
  int response_dim() const { return static_cast<int>(ranks_.size()); }

 private:
  std::vector<int> ranks_;
  std::vector<std::vector<int>> hidden_degrees_;
  nn::Mlp net_;
  int feature_dim_ = 0;
  double clamp_ = 7.0;
};

struct FlowOutput {
  Matrix values;   // z for forward, y for inverse
  Vector log_det;  // log|det df/dy| at the response point, per row
};

class FlowModel {
 public:
  FlowModel() = default;

  // Glorot-initialized parameters; masks from the architecture seed.
  static FlowModel random(const FlowArchitecture& arch);
  // Same masks, every weight and bias zero: the identity map.
  static FlowModel zeros(const FlowArchitecture& arch);

  FlowOutput forward(const Matrix& y, const Matrix& x) const;
  FlowOutput inverse(const Matrix& z, const Matrix& x) const;

  std::pair<Vector, double> forward(const Vector& y, const Vector& x) const;
  std::pair<Vector, double> inverse(const Vector& z, const Vector& x) const;

  std::vector<nn::ParameterGroup> parameters();

  const FlowArchitecture& architecture() const { return arch_; }
  const std::vector<MadeBlock>& blocks() const { return blocks_; }
  std::vector<MadeBlock>& blocks() { return blocks_; }
  int response_dim() const { return arch_.response_dim; }
  int feature_dim() const { return arch_.feature_dim; }

  // Binary format: magic, JSON architecture header, little-endian float64 parameters.
  void save(const std::filesystem::path& path) const;
  static FlowModel load(const std::filesystem::path& path);

 private:
  FlowArchitecture arch_;
  std::vector<MadeBlock> blocks_;
};

// Ranks for block `index`: identity order for even blocks, reversed for odd.
std::vector<int> block_ranks(int d, int index);

struct NllResult {
  double loss = 0.0;
  nn::GradientSet grads;  // empty unless requested
};

// Mean over rows of 0.5 |z|^2 + (d/2) log(2 pi) - log|det dz/dy|.
NllResult nll_loss(const Matrix& y, const Matrix& x, FlowModel& model, bool with_gradients);
// Per-row negative log density.
Vector pointwise_nll(const Matrix& y, const Matrix& x, const FlowModel& model);

class FlowObjective : public nn::Differentiable {
 public:
  explicit FlowObjective(FlowModel& model) : model_(model) {}
  std::vector<nn::ParameterGroup> parameters() override { return model_.parameters(); }
  // batch.features = x, batch.targets = y
  double loss(const nn::Batch& batch, nn::GradientSet* grads) override;

 private:
  FlowModel& model_;
};

// Trains a randomly initialized flow on (x -> features, y -> targets).
FlowModel fit_flow(const nn::Batch& train, const nn::Batch& val, const FlowArchitecture& arch,
                   const nn::TrainConfig& config, nn::TrainResult* result = nullptr);

}  // namespace vsps::cnf
