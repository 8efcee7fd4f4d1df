#pragma once

#include <Eigen/Dense>

#include "srsm/bound_prop.hpp"
#include "srsm/mlp.hpp"
#include "srsm/noise.hpp"
#include "srsm/policy.hpp"
#include "srsm/system.hpp"

namespace srsm {

/// Sound upper bound on E_w[ V(f(x, pi(x), w)) ] at a single state.
///
/// mass_weighted (default): sum_i P(N_i) * sup_{w in N_i} V(f(..)), sound
/// because the integral over each cell is at most its mass times the cell
/// supremum. maxvol reproduces the volume-weighted literal form
/// sum_i maxvol * sup_i, which is looser; both return >= the true expectation
/// for the bounded triangular disturbances used here. Cell suprema come from
/// interval bound propagation.
inline double expected_upper_bound(const Mlp& v, const SystemModel& sys,
                                   const PolicyHandle& policy, const Eigen::VectorXd& x,
                                   const NoisePartition& part,
                                   BoundMode mode = BoundMode::mass_weighted) {
  const Box state = point_box(x);
  const Box action = policy.bounds(state);
  BoxBatch successors(sys.state_dim(), static_cast<Eigen::Index>(part.size()));
  for (std::size_t i = 0; i < part.size(); ++i) {
    successors.set(static_cast<Eigen::Index>(i), sys.successor_box(state, action, part.cells[i]));
  }
  const BoxBatch out = NetBoundEvaluator(v).bounds(successors);
  double bound = 0.0;
  for (std::size_t i = 0; i < part.size(); ++i) {
    const double weight = mode == BoundMode::mass_weighted ? part.mass[i] : part.maxvol;
    bound += weight * out.hi(0, static_cast<Eigen::Index>(i));
  }
  return bound;
}

}  // namespace srsm
