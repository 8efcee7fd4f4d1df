#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <mutex>
#include <vector>

#include "srsm/grid.hpp"
#include "srsm/noise.hpp"
#include "srsm/parallel.hpp"
#include "srsm/policy.hpp"
#include "srsm/system.hpp"

namespace srsm {

/// Sound upper bound on the maximal one-step L1 displacement
/// sup ||f(x, pi(x), w) - x||_1 over the state space and the disturbance
/// support, computed as a max over (state cell x noise cell) of interval
/// displacement bounds. For systems with additive noise the per-noise-cell
/// contribution is state independent and gets hoisted out of the cell loop.
inline double max_step_size(const SystemModel& sys, const PolicyHandle& policy, const Grid& grid,
                            int noise_cells_per_dim = 8, int workers = 1) {
  const NoisePartition npart = partition(sys.noise(), noise_cells_per_dim);
  const int dim = sys.state_dim();

  // Per-noise-cell offset intervals N * cell for the additive-noise path.
  std::vector<Eigen::VectorXd> off_lo, off_hi;
  Box zero_noise(static_cast<std::size_t>(sys.noise_dim()), Interval::point(0.0));
  if (sys.affine_noise()) {
    const Eigen::MatrixXd& nm = sys.noise_matrix();
    for (const Box& cell : npart.cells) {
      Eigen::VectorXd lo(dim), hi(dim);
      for (int d = 0; d < dim; ++d) {
        const Interval r = detail::row_affine(nm.row(d), cell);
        lo(d) = r.lo;
        hi(d) = r.hi;
      }
      off_lo.push_back(std::move(lo));
      off_hi.push_back(std::move(hi));
    }
  }

  double global_max = 0.0;
  std::mutex mu;
  const std::int64_t chunk = 8192;
  parallel_for_chunks(grid.num_cells(), chunk, workers, [&](std::int64_t begin, std::int64_t end) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i) ids[static_cast<std::size_t>(i - begin)] = i;
    BoxBatch cells;
    grid.fill_cell_boxes(ids.data(), static_cast<Eigen::Index>(ids.size()), cells);
    const BoxBatch actions = policy.bounds(cells);

    double local_max = 0.0;
    for (Eigen::Index c = 0; c < cells.size(); ++c) {
      const Box state = cells.box(c);
      const Box action = actions.box(c);
      if (sys.affine_noise()) {
        const Box base = sys.displacement_box_clamped(state, action, zero_noise);
        for (std::size_t k = 0; k < npart.size(); ++k) {
          double l1 = 0.0;
          for (int d = 0; d < dim; ++d) {
            const double lo = base[static_cast<std::size_t>(d)].lo + off_lo[k](d);
            const double hi = base[static_cast<std::size_t>(d)].hi + off_hi[k](d);
            l1 += std::max(std::abs(lo), std::abs(hi));
          }
          local_max = std::max(local_max, l1);
        }
      } else {
        for (const Box& ncell : npart.cells) {
          const Box disp = sys.displacement_box_clamped(state, action, ncell);
          double l1 = 0.0;
          for (const Interval& di : disp) l1 += di.abs_max();
          local_max = std::max(local_max, l1);
        }
      }
    }
    std::lock_guard<std::mutex> lock(mu);
    global_max = std::max(global_max, local_max);
  });
  return global_max;
}

}  // namespace srsm
