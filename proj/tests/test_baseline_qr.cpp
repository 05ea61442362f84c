#include "doctest.h"

#include <cmath>

#include "oracles.hpp"
#include "vsps/baseline_qr.hpp"
#include "vsps/volume_grid.hpp"

using namespace vsps;
using namespace vsps::qr;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

// A "network" with no hidden layers whose outputs are just biases.
QuantileNet constant_net(const std::vector<std::pair<double, double>>& bounds, int p = 1) {
  std::vector<nn::Mlp> nets;
  for (auto [lo, hi] : bounds) {
    nn::AffineLayer layer = nn::AffineLayer::zeros(p, 2);
    layer.biases << lo, hi;
    nets.emplace_back(std::vector<nn::AffineLayer>{layer});
  }
  return QuantileNet(0.1, std::move(nets));
}

}  // namespace

TEST_CASE("pinball loss") {
  CHECK(pinball_loss(1.0, 1.0, 0.3).loss == 0.0);
  auto a = pinball_loss(0.0, 1.0, 0.9);
  CHECK(a.loss == doctest::Approx(0.9));
  CHECK(a.gradient == doctest::Approx(-0.9));
  auto b = pinball_loss(1.0, 0.0, 0.1);
  CHECK(b.loss == doctest::Approx(0.9));
  CHECK(b.gradient == doctest::Approx(0.9));
}

TEST_CASE("quantile net gradients match central differences") {
  Rng rng(3);
  nn::Mlp net = nn::Mlp::glorot(2, {6, 6}, 2, rng);
  QuantileObjective obj(net, 1, 0.1);
  nn::Batch b{Matrix::Random(9, 2), Matrix::Random(9, 3)};
  CHECK(nn::gradient_check(obj, b) <= 1e-4);
}

TEST_CASE("standard normal responses: learned bounds near +-1.645") {
  Rng rng(8);
  auto make = [&](int n) {
    nn::Batch b{Matrix(n, 1), Matrix(n, 1)};
    for (int i = 0; i < n; ++i) {
      b.features(i, 0) = rng.uniform(-1, 1);
      b.targets(i, 0) = rng.normal();
    }
    return b;
  };
  const auto train = make(4000), val = make(2000);
  nn::TrainConfig c;
  c.max_epochs = 300;
  c.patience = 20;
  c.learning_rate = 3e-3;
  QrArchitecture arch{{16, 16}, 4};
  const auto model = train_naive_qr(train, val, 0.1, arch, c);
  Matrix lower, upper;
  model.predict(val.features, lower, upper);
  CHECK(std::abs(lower.mean() + 1.645) <= 0.15);
  CHECK(std::abs(upper.mean() - 1.645) <= 0.15);

  const auto again = train_naive_qr(train, val, 0.1, arch, c);
  Matrix lower2, upper2;
  again.predict(val.features, lower2, upper2);
  CHECK(lower == lower2);
  CHECK(upper == upper2);
}

TEST_CASE("noise-free y = x: intervals collapse") {
  Rng rng(5);
  auto make = [&](int n) {
    nn::Batch b{Matrix(n, 1), Matrix(n, 1)};
    for (int i = 0; i < n; ++i) b.features(i, 0) = b.targets(i, 0) = rng.uniform(-1, 1);
    return b;
  };
  const auto train = make(2000), val = make(500);
  nn::TrainConfig c;
  c.max_epochs = 400;
  c.patience = 30;
  c.learning_rate = 3e-3;
  const auto model = train_naive_qr(train, val, 0.1, QrArchitecture{{32, 32}, 2}, c);
  Matrix lower, upper;
  model.predict(val.features, lower, upper);
  CHECK((upper - lower).mean() <= 0.1);
}

TEST_CASE("crossed outputs are swapped") {
  const auto net = constant_net({{2.0, -1.0}});
  auto box = net.predict_box(vec({0.0}));
  CHECK(box.lower(0) == -1.0);
  CHECK(box.upper(0) == 2.0);
}

TEST_CASE("box scores and conformalization") {
  const auto net = constant_net({{-1.0, 1.0}, {0.0, 2.0}});
  Matrix x = Matrix::Zero(3, 1), y(3, 2);
  y << 0.0, 1.0,   // inside: max(-1, -1, -1, -1) = -1
       1.5, 1.0,   // sticks out of dim 0 by 0.5
       0.0, -0.25; // below dim 1 by 0.25
  const auto s = box_scores(net, x, y);
  CHECK(s[0] == doctest::Approx(-1.0));
  CHECK(s[1] == doctest::Approx(0.5));
  CHECK(s[2] == doctest::Approx(0.25));

  // d = 1 reduces to the usual CQR score max(lo - y, y - hi)
  const auto one = constant_net({{-1.0, 1.0}});
  Matrix y1(2, 1);
  y1 << 0.3, -1.4;
  const auto s1 = box_scores(one, Matrix::Zero(2, 1), y1);
  CHECK(s1[0] == doctest::Approx(std::max(-1.0 - 0.3, 0.3 - 1.0)));
  CHECK(s1[1] == doctest::Approx(0.4));
}

TEST_CASE("all calibration points inside: negative radius shrinks boxes") {
  const auto net = constant_net({{-1.0, 1.0}});
  Matrix y(19, 1);
  for (int i = 0; i < 19; ++i) y(i, 0) = -0.5 + i / 18.0;
  const auto r = conformalize_qr(net, Matrix::Zero(19, 1), y, 0.1);
  CHECK(r.gamma < 0.0);
  CHECK(r.gamma == oracle::order_statistic(r.scores, 0.1));
  const auto box = qr_region(vec({0.0}), net, r.gamma);
  CHECK(box.upper(0) - box.lower(0) < 2.0);
}

TEST_CASE("nine hand scores give the ninth smallest") {
  const auto net = constant_net({{0.0, 0.0}});
  Matrix y(9, 1);
  y << 0.3, -0.1, 0.9, 0.5, -0.7, 0.2, 0.4, -0.6, 0.8;
  const auto r = conformalize_qr(net, Matrix::Zero(9, 1), y, 0.1);
  CHECK(r.gamma == doctest::Approx(0.9));
}

TEST_CASE("box geometry") {
  BoxRegion unit{vec({0.0, 0.0}), vec({1.0, 1.0})};
  CHECK(box_contains(unit, vec({1.0, 0.5})));
  CHECK(box_contains(unit, vec({0.0, 0.0})));
  CHECK_FALSE(box_contains(unit, vec({1.0000001, 0.5})));

  const auto grid = metrics::VolumeGrid::lattice(vec({-1, -1}), vec({2, 2}), {301, 301});
  CHECK(std::abs(box_volume(unit, grid).volume - 1.0) <= 0.03);

  const auto grown = inflate(unit, 0.25);
  const auto back = inflate(grown, -0.25);
  CHECK(box_volume(back, grid).count == box_volume(unit, grid).count);
  CHECK(box_volume(grown, grid).count > box_volume(unit, grid).count);
}
