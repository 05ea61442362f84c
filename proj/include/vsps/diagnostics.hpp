#pragma once

#include <cstdint>

#include "vsps/cnf.hpp"

namespace vsps::diagnostics {

struct FlowDiagnostics {
  double round_trip_y = 0.0;       // max |f^-1(f(y)) - y|
  double round_trip_z = 0.0;       // max |f(f^-1(z)) - z|
  double log_det_consistency = 0.0;  // max |logdet_inverse - logdet_forward at the recovered y|
  double jacobian_rel_error = 0.0;   // max relative error of exp(logdet) vs finite-difference |det|
  bool autoregressive = true;
};

// Random probes with y, z, x ~ N(0, I).
FlowDiagnostics inspect_flow(const cnf::FlowModel& flow, int probes, std::uint64_t seed);

// Central-difference Jacobian of the forward map at (y, x).
cnf::Matrix finite_difference_jacobian(const cnf::FlowModel& flow, const cnf::Vector& y, const cnf::Vector& x,
                                       double step = 1e-6);

// Perturbs each y_j and checks that the heads of coordinates with rank <= rank(j) do not move.
bool autoregressive_scan(const cnf::MadeBlock& block, int feature_dim, std::uint64_t seed, int probes = 4);

}  // namespace vsps::diagnostics
