#include "doctest.h"

#include <cmath>
#include <numeric>

#include "vsps/nn.hpp"

using namespace vsps;
using namespace vsps::nn;

namespace {

// loss = mean over rows of features(r,0) * p + (p - target)^2 * features(r,1)
// Lets one object express both a quadratic and a "val goes up" schedule.
class ScalarModel : public Differentiable {
 public:
  double p = 0.0;
  std::vector<ParameterGroup> parameters() override { return {{"p", std::span<double>(&p, 1)}}; }
  double loss(const Batch& batch, GradientSet* grads) override {
    double l = 0.0, g = 0.0;
    const auto n = static_cast<double>(batch.rows());
    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
      const double lin = batch.features(r, 0), quad = batch.features(r, 1), t = batch.targets(r, 0);
      l += lin * p + quad * (p - t) * (p - t);
      g += lin + 2.0 * quad * (p - t);
    }
    if (grads) *grads = {{g / n}};
    return l / n;
  }
};

Batch constant_batch(int rows, double lin, double quad, double target) {
  Batch b;
  b.features = Matrix::Zero(rows, 2);
  b.features.col(0).setConstant(lin);
  b.features.col(1).setConstant(quad);
  b.targets = Matrix::Constant(rows, 1, target);
  return b;
}

// Single masked affine layer with squared-error loss.
class AffineModel : public Differentiable {
 public:
  explicit AffineModel(AffineLayer l) : layer(std::move(l)) {}
  AffineLayer layer;
  std::vector<ParameterGroup> parameters() override {
    std::vector<ParameterGroup> out;
    append_layer_parameters(layer, "layer", out);
    return out;
  }
  double loss(const Batch& batch, GradientSet* grads) override {
    AffineCache cache;
    const Matrix out = affine_forward(batch.features, layer, &cache);
    const Matrix diff = out - batch.targets;
    const double n = static_cast<double>(batch.rows());
    if (grads) {
      grads->clear();
      append_layer_gradients(affine_backward(cache, layer, diff / n), *grads);
    }
    return 0.5 * diff.squaredNorm() / n;
  }
};

// Two-layer leaky-ReLU net feeding a Gaussian NLL with unit variance.
class TinyNet : public Differentiable {
 public:
  explicit TinyNet(Mlp m) : net(std::move(m)) {}
  Mlp net;
  std::vector<ParameterGroup> parameters() override {
    std::vector<ParameterGroup> out;
    for (std::size_t l = 0; l < net.layers().size(); ++l)
      append_layer_parameters(net.layers()[l], "l" + std::to_string(l), out);
    return out;
  }
  double loss(const Batch& batch, GradientSet* grads) override {
    Mlp::Cache cache;
    const Matrix mu = net.forward(batch.features, &cache);
    const Matrix diff = mu - batch.targets;
    const double n = static_cast<double>(batch.rows());
    if (grads) {
      std::vector<AffineGradients> lg;
      net.backward(cache, diff / n, lg);
      grads->clear();
      for (const auto& g : lg) append_layer_gradients(g, *grads);
    }
    return (0.5 * diff.rowwise().squaredNorm().array() + 0.5 * std::log(2 * M_PI)).mean();
  }
};

class EmptyModel : public Differentiable {
 public:
  std::vector<ParameterGroup> parameters() override { return {}; }
  double loss(const Batch&, GradientSet* grads) override {
    if (grads) grads->clear();
    return 1.0;
  }
};

}  // namespace

TEST_CASE("affine forward") {
  AffineLayer layer = AffineLayer::zeros(3, 2);
  layer.biases << 0.5, -1.5;
  Matrix in = Matrix::Random(4, 3);
  Matrix out = affine_forward(in, layer);
  for (int r = 0; r < 4; ++r) {
    CHECK(out(r, 0) == 0.5);
    CHECK(out(r, 1) == -1.5);
  }

  AffineLayer id = AffineLayer::zeros(3, 3);
  id.weights.setIdentity();
  CHECK(affine_forward(in, id).isApprox(in, 0.0));

  AffineLayer hand = AffineLayer::zeros(2, 2);
  hand.weights << 1, 1, 0, 1;
  Matrix row(1, 2);
  row << 1, 2;
  Matrix got = affine_forward(row, hand);
  CHECK(got(0, 0) == 3.0);
  CHECK(got(0, 1) == 2.0);

  CHECK_THROWS_AS(affine_forward(Matrix::Zero(1, 4), hand), ShapeError);
}

TEST_CASE("masked weights contribute nothing and receive no gradient") {
  Rng rng(5);
  Matrix mask(2, 3);
  mask << 1, 0, 1, 0, 1, 0;
  AffineLayer layer = AffineLayer::glorot(3, 2, rng, mask);
  layer.weights(0, 1) = 100.0;  // hidden behind the mask
  Matrix in = Matrix::Random(5, 3);
  Matrix expected = in * layer.weights.cwiseProduct(mask).transpose();
  CHECK(affine_forward(in, layer).isApprox(expected, 1e-15));

  AffineCache cache;
  affine_forward(in, layer, &cache);
  auto g = affine_backward(cache, layer, Matrix::Ones(5, 2));
  CHECK(g.weights(0, 1) == 0.0);
  CHECK(g.weights(1, 0) == 0.0);
  CHECK(g.weights(1, 2) == 0.0);
  CHECK(g.weights(0, 0) != 0.0);
}

TEST_CASE("affine backward") {
  Rng rng(1);
  AffineLayer layer = AffineLayer::glorot(3, 2, rng);
  AffineCache cache;
  affine_forward(Matrix::Random(4, 3), layer, &cache);
  auto zero = affine_backward(cache, layer, Matrix::Zero(4, 2));
  CHECK(zero.weights.isZero(0.0));
  CHECK(zero.biases.isZero(0.0));
  CHECK(zero.input.isZero(0.0));

  AffineLayer id = AffineLayer::zeros(3, 3);
  id.weights.setIdentity();
  AffineCache c1;
  affine_forward(Matrix::Random(1, 3), id, &c1);
  Matrix go(1, 3);
  go << 0.3, -2.0, 7.0;
  CHECK(affine_backward(c1, id, go).input.isApprox(go, 0.0));

  AffineModel model(AffineLayer::glorot(3, 2, rng));
  Batch b{Matrix::Random(6, 3), Matrix::Random(6, 2)};
  CHECK(gradient_check(model, b) <= 1e-5);
}

TEST_CASE("leaky relu") {
  Matrix in(1, 3);
  in << 2.0, -1.0, 0.0;
  Matrix out = leaky_relu(in, 0.01);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(0, 1) == doctest::Approx(-0.01));
  CHECK(out(0, 2) == 0.0);
  Matrix pre(1, 2);
  pre << -3.0, 4.0;
  Matrix g = leaky_relu_backward(pre, Matrix::Ones(1, 2), 0.01);
  CHECK(g(0, 0) == doctest::Approx(0.01));
  CHECK(g(0, 1) == 1.0);
}

TEST_CASE("adam") {
  double p = 1.0;
  std::vector<ParameterGroup> params{{"p", std::span<double>(&p, 1)}};

  AdamState fresh(params, AdamConfig{0.1});
  adam_step(params, {{0.0}}, fresh);
  CHECK(p == 1.0);
  CHECK(fresh.step == 1);

  AdamState state(params, AdamConfig{0.1});
  adam_step(params, {{1.0}}, state);
  // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
  const double first = 1.0 - p;
  CHECK(first == doctest::Approx(0.1 / (1.0 + 1e-8)).epsilon(1e-12));
  const double before = p;
  adam_step(params, {{1.0}}, state);
  const double second = before - p;
  CHECK(second <= first + 1e-15);
  CHECK(state.step == 2);
  CHECK(state.first_moment[0].size() == 1);
  CHECK(state.second_moment[0].size() == 1);

  SUBCASE("non-finite gradient names the group") {
    try {
      adam_step(params, {{std::nan("")}}, state);
      FAIL("expected TrainingError");
    } catch (const TrainingError& e) {
      CHECK(e.group() == "p");
    }
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.patience = 30;
  c.max_epochs = 10;
  CHECK_THROWS(c.validate());
  c.max_epochs = 0;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("train with zero epochs keeps the initial parameters") {
  ScalarModel m;
  m.p = 0.7;
  TrainConfig c;
  c.max_epochs = 0;
  auto r = train(m, constant_batch(8, 0, 1, 3), constant_batch(8, 0, 1, 3), c);
  CHECK(r.history.empty());
  CHECK(m.p == 0.7);
  CHECK(r.best_epoch == 0);
}

TEST_CASE("train finds the minimizer of a quadratic") {
  ScalarModel m;
  TrainConfig c;
  c.max_epochs = 500;
  c.patience = 500;
  c.learning_rate = 0.05;
  c.batch_size = 4;
  auto r = train(m, constant_batch(8, 0, 1, 3), constant_batch(8, 0, 1, 3), c);
  CHECK(std::abs(m.p - 3.0) < 0.1);
  CHECK(r.history.size() <= 500);
}

TEST_CASE("early stopping after exactly patience epochs") {
  // Training pushes p up (gradient -1); validation loss equals p.
  ScalarModel m;
  TrainConfig c;
  c.patience = 7;
  c.max_epochs = 100;
  auto r = train(m, constant_batch(4, -1, 0, 0), constant_batch(4, 1, 0, 0), c);
  REQUIRE(r.history.size() == 7);
  for (std::size_t i = 1; i < r.history.size(); ++i)
    CHECK(r.history[i].val_loss > r.history[i - 1].val_loss);
  CHECK(r.best_epoch == 0);
  CHECK(m.p == 0.0);  // restored
}

TEST_CASE("gradient check") {
  SUBCASE("linear model, quadratic loss") {
    Rng rng(2);
    AffineModel model(AffineLayer::glorot(4, 3, rng));
    Batch b{Matrix::Random(10, 4), Matrix::Random(10, 3)};
    CHECK(gradient_check(model, b) <= 1e-7);
  }
  SUBCASE("two-layer leaky relu, nll") {
    Rng rng(3);
    TinyNet model(Mlp::glorot(3, {6, 5}, 2, rng));
    Batch b{Matrix::Random(7, 3), Matrix::Random(7, 2)};
    CHECK(gradient_check(model, b) <= 1e-4);
  }
  SUBCASE("no parameters") {
    EmptyModel model;
    CHECK(gradient_check(model, Batch{Matrix::Zero(1, 1), Matrix::Zero(1, 1)}) == 0.0);
  }
}

TEST_CASE("snapshot and restore round trip") {
  Rng rng(4);
  TinyNet model(Mlp::glorot(2, {3}, 1, rng));
  auto params = model.parameters();
  const auto saved = snapshot(params);
  CHECK(saved.size() == parameter_count(params));
  for (auto& g : params) std::fill(g.values.begin(), g.values.end(), 0.0);
  restore(params, saved);
  CHECK(snapshot(params) == saved);
}

TEST_CASE("rng is reproducible and derived seeds differ") {
  Rng a(11), b(11);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  CHECK(derive_seed(1, Stream::kTest, 0) != derive_seed(1, Stream::kTest, 1));
  CHECK(derive_seed(1, Stream::kTest, 0) != derive_seed(1, Stream::kCalibration, 0));
  CHECK(derive_seed(1, Stream::kTest, 0) != derive_seed(2, Stream::kTest, 0));
  Rng u(3);
  double lo = 1, hi = 0;
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
}
