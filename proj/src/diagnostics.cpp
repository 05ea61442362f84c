#include "vsps/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace vsps::diagnostics {

using cnf::Matrix;
using cnf::Vector;

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

}  // namespace

Matrix finite_difference_jacobian(const cnf::FlowModel& flow, const Vector& y, const Vector& x, double step) {
  const auto d = y.size();
  Matrix jac(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Vector plus = y, minus = y;
    plus(j) += step;
    minus(j) -= step;
    jac.col(j) = (flow.forward(plus, x).first - flow.forward(minus, x).first) / (2.0 * step);
  }
  return jac;
}

bool autoregressive_scan(const cnf::MadeBlock& block, int feature_dim, std::uint64_t seed, int probes) {
  const int d = block.response_dim();
  const auto& ranks = block.ranks();
  Rng rng(seed);
  for (int probe = 0; probe < probes; ++probe) {
    const Matrix y = normal_matrix(1, d, rng);
    const Matrix x = normal_matrix(1, feature_dim, rng);
    const auto base = block.heads(y, x);
    for (int j = 0; j < d; ++j) {
      Matrix moved = y;
      moved(0, j) += 1.0 + rng.uniform();
      const auto h = block.heads(moved, x);
      for (int i = 0; i < d; ++i) {
        if (ranks[static_cast<std::size_t>(j)] < ranks[static_cast<std::size_t>(i)]) continue;
        if (h.shift(0, i) != base.shift(0, i) || h.raw_log_scale(0, i) != base.raw_log_scale(0, i)) return false;
      }
    }
  }
  return true;
}

FlowDiagnostics inspect_flow(const cnf::FlowModel& flow, int probes, std::uint64_t seed) {
  Rng rng(seed);
  const int d = flow.response_dim();
  const int p = flow.feature_dim();
  FlowDiagnostics out;
  const Matrix y = normal_matrix(probes, d, rng);
  const Matrix z = normal_matrix(probes, d, rng);
  const Matrix x = normal_matrix(probes, p, rng);

  const auto fwd = flow.forward(y, x);
  const auto back = flow.inverse(fwd.values, x);
  out.round_trip_y = (back.values - y).cwiseAbs().maxCoeff();
  const auto inv = flow.inverse(z, x);
  const auto again = flow.forward(inv.values, x);
  out.round_trip_z = (again.values - z).cwiseAbs().maxCoeff();
  out.log_det_consistency = (inv.log_det - again.log_det).cwiseAbs().maxCoeff();

  const int jac_probes = std::min(probes, 20);
  for (int i = 0; i < jac_probes; ++i) {
    const Vector yi = y.row(i).transpose();
    const Vector xi = x.row(i).transpose();
    const double numeric = std::abs(finite_difference_jacobian(flow, yi, xi).determinant());
    const double analytic = std::exp(flow.forward(yi, xi).second);
    out.jacobian_rel_error = std::max(out.jacobian_rel_error, std::abs(numeric - analytic) / analytic);
  }
  for (std::size_t b = 0; b < flow.blocks().size(); ++b) {
    out.autoregressive = out.autoregressive && autoregressive_scan(flow.blocks()[b], p, seed + b);
  }
  return out;
}

}  // namespace vsps::diagnostics
