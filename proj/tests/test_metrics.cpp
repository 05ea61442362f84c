#include "doctest.h"

#include <cmath>
#include <numbers>

#include "vsps/metrics.hpp"

using namespace vsps;
using namespace vsps::metrics;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

BallUnionRegion ball(double cx, double cy, double r) {
  Matrix c(1, 2);
  c << cx, cy;
  return {c, r};
}

}  // namespace

TEST_CASE("marginal coverage") {
  std::vector<BallUnionRegion> regions{ball(0, 0, 1), ball(0, 0, 1), ball(0, 0, 1), ball(0, 0, 1)};
  Matrix y(4, 2);
  y << 0, 0, 0.5, 0.5, 0, 1, 3, 3;
  CHECK(marginal_coverage(regions, y) == 0.75);
  y.row(3) << 0.1, 0.1;
  CHECK(marginal_coverage(regions, y) == 1.0);
  for (auto& r : regions) r.radius = kInfiniteRadius;
  y.row(3) << 1e6, 1e6;
  CHECK(marginal_coverage(regions, y) == 1.0);

  std::vector<qr::BoxRegion> boxes{{vec({0, 0}), vec({1, 1})}, {vec({0, 0}), vec({1, 1})}};
  Matrix yb(2, 2);
  yb << 0.5, 0.5, 1.5, 0.5;
  CHECK(marginal_coverage(boxes, yb) == 0.5);
  CHECK_THROWS(marginal_coverage(boxes, y));
}

TEST_CASE("mean region size") {
  const auto grid = VolumeGrid::lattice(vec({-2, -2}), vec({2, 2}), {401, 401});
  std::vector<BallUnionRegion> off{ball(0.005, 0.005, 0.0), ball(0.015, -0.005, 0.0)};
  CHECK(mean_region_size(off, grid).mean_count == 0.0);

  std::vector<BallUnionRegion> disk{ball(0, 0, 1)};
  const auto s = mean_region_size(disk, grid);
  CHECK(std::abs(s.mean_count - std::numbers::pi / 1e-4) <= 0.05 * std::numbers::pi / 1e-4);
  CHECK(s.mean_volume == doctest::Approx(s.mean_count * 1e-4));

  std::vector<BallUnionRegion> small{ball(0.3, -0.2, 0.4)}, large{ball(0.3, -0.2, 0.8)};
  CHECK(mean_region_size(large, grid).mean_count >= 0.995 * 4.0 * mean_region_size(small, grid).mean_count);
}

TEST_CASE("conditional coverage") {
  std::vector<bool> covered{true, true, false, true};
  std::vector<double> one_group(4, 2.0);
  auto c = conditional_coverage(covered, one_group);
  CHECK(c.minimum == coverage_fraction(covered));

  // coverages 0.9, 0.8, 1.0 over groups of 10, 5 and 2
  std::vector<bool> flags;
  std::vector<double> labels;
  for (int i = 0; i < 10; ++i) flags.push_back(i != 0), labels.push_back(1.5);
  for (int i = 0; i < 5; ++i) flags.push_back(i != 0), labels.push_back(2.0);
  for (int i = 0; i < 2; ++i) flags.push_back(true), labels.push_back(2.5);
  c = conditional_coverage(flags, labels);
  CHECK(c.per_group.at(1.5) == doctest::Approx(0.9));
  CHECK(c.per_group.at(2.0) == doctest::Approx(0.8));
  CHECK(c.per_group.at(2.5) == 1.0);
  CHECK(c.minimum == doctest::Approx(0.8));

  // a 1-point group that misses dominates the minimum despite its size
  std::vector<bool> skew(100, true);
  std::vector<double> skew_labels(100, 0.0);
  skew[0] = false;
  skew_labels[0] = 1.0;
  c = conditional_coverage(skew, skew_labels);
  CHECK(c.minimum == 0.0);
}

TEST_CASE("aggregate") {
  std::vector<double> same{0.9, 0.9};
  auto a = aggregate(same);
  CHECK(a.mean == doctest::Approx(0.9));
  CHECK(a.std_dev == 0.0);
  std::vector<double> two{0.88, 0.92};
  a = aggregate(two);
  CHECK(a.mean == doctest::Approx(0.90));
  CHECK(a.std_dev == doctest::Approx(0.0283).epsilon(1e-3));
  CHECK(a.count == 2);
  std::vector<double> one{0.7};
  CHECK(aggregate(one).std_dev == 0.0);
}

TEST_CASE("table formatting") {
  CHECK(format_percent(Aggregate{0.9006, 0.0130, 10}) == "90.06 (1.30)");
  CHECK(format_plain(Aggregate{104.34, 2.43, 10}) == "104.34 (2.43)");
}

TEST_CASE("volume grid") {
  const auto g = VolumeGrid::lattice(vec({0, 0}), vec({1, 2}), {3, 5});
  CHECK(g.size() == 15);
  CHECK(g.cell_volume() == doctest::Approx(0.5 * 0.5));
  CHECK(g.token() == VolumeGrid::lattice(vec({0, 0}), vec({1, 2}), {3, 5}).token());
  CHECK(g.token() != VolumeGrid::lattice(vec({0, 0}), vec({1, 2}), {3, 6}).token());
  CHECK_THROWS(VolumeGrid::lattice(vec({0, 0}), vec({1, 2}), {1, 5}));

  Matrix resp(3, 2);
  resp << 0, 0, 1, 2, 0.5, 1;
  GridSettings settings;
  const auto fitted = grid_for_responses(resp, settings);
  CHECK(fitted.lower()(0) == doctest::Approx(-0.1));
  CHECK(fitted.upper()(1) == doctest::Approx(2.2));
  CHECK(fitted.size() == 100 * 100);

  Matrix resp4 = Matrix::Random(10, 4);
  const auto mc = grid_for_responses(resp4, settings);
  CHECK(mc.is_monte_carlo());
  CHECK(mc.size() == settings.mc_probes);
  const double box = (mc.upper() - mc.lower()).prod();
  CHECK(mc.cell_volume() * static_cast<double>(mc.size()) == doctest::Approx(box));
}
