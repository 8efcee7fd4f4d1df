#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "srsm/bound_prop.hpp"
#include "srsm/expected_value.hpp"
#include "srsm/grid.hpp"
#include "srsm/lipschitz.hpp"
#include "srsm/mlp.hpp"
#include "srsm/noise.hpp"
#include "srsm/parallel.hpp"
#include "srsm/policy.hpp"
#include "srsm/step_size.hpp"
#include "srsm/system.hpp"

namespace srsm {

struct VerifierConfig {
  double m_level = 1.0;
  int cells_per_dim = 16;          // noise partition for the expectation bound
  BoundMode mode = BoundMode::mass_weighted;
  int delta_noise_cells = 8;       // noise partition for the step-size bound
  int workers = 1;
  std::int64_t cell_budget = 100'000'000;  // cell checks per verify call
  std::size_t max_counterexamples = 8192;  // reported to the learner, worst first
  std::size_t max_refine_cells = 32768;    // local refinement only below this count
  bool local_refinement = true;
};

enum class VerifyStatus { certified, counterexamples, condition3_failed };

inline const char* verify_status_name(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::certified: return "certified";
    case VerifyStatus::counterexamples: return "counterexamples";
    case VerifyStatus::condition3_failed: return "condition3_failed";
  }
  return "?";
}

struct Counterexample {
  std::int64_t cell = 0;
  Eigen::VectorXd center;
  double gap = 0.0;  // V(center) - tau*K - bound; <= 0 for violations
  bool hard = false; // bound >= V(center): fails even the unstrict inequality
};

struct VerifyOutcome {
  VerifyStatus status = VerifyStatus::counterexamples;
  std::vector<Counterexample> counterexamples;  // sorted by cell index
  double epsilon = 0.0;  // min verified decrease margin (certified only)
  double delta = 0.0;    // min condition-3 slack (certified only)

  // context recorded for certificates and reports
  double l_v = 0.0, l_pi = 0.0, k = 0.0, delta_theta = 0.0;
  std::int64_t num_cells = 0;
  std::int64_t num_ge_m = 0;
  std::int64_t num_violations = 0;
  std::int64_t num_hard = 0;
  std::int64_t num_refined_resolved = 0;
  std::vector<std::int64_t> condition3_failing;  // capped sample
  bool budget_exceeded = false;
  std::int64_t unprocessed_cells = 0;

  nlohmann::json to_json() const {
    nlohmann::json ces = nlohmann::json::array();
    for (const auto& ce : counterexamples) {
      ces.push_back({{"cell", ce.cell},
                     {"center", std::vector<double>(ce.center.data(),
                                                    ce.center.data() + ce.center.size())},
                     {"gap", ce.gap},
                     {"hard", ce.hard}});
    }
    return {{"status", verify_status_name(status)},
            {"epsilon", epsilon},
            {"delta", delta},
            {"L_V", l_v},
            {"L_pi", l_pi},
            {"K", k},
            {"Delta_theta", delta_theta},
            {"num_cells", num_cells},
            {"num_ge_m", num_ge_m},
            {"num_violations", num_violations},
            {"num_hard", num_hard},
            {"counterexamples", ces},
            {"condition3_failing", condition3_failing},
            {"budget_exceeded", budget_exceeded},
            {"unprocessed_cells", unprocessed_cells}};
  }
};

/// Cells that may contain a state with V >= M: included iff the interval
/// upper bound over the cell reaches M, a sound over-approximation.
inline CellSet collect_geM(const Mlp& v, const Grid& grid, double m_level, int workers = 1) {
  const NetBoundEvaluator eval(v);
  std::vector<std::vector<std::int64_t>> found(
      static_cast<std::size_t>((grid.num_cells() + 8191) / 8192));
  parallel_for_chunks(grid.num_cells(), 8192, workers, [&](std::int64_t begin, std::int64_t end) {
    std::vector<std::int64_t> ids(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i) ids[static_cast<std::size_t>(i - begin)] = i;
    BoxBatch cells;
    grid.fill_cell_boxes(ids.data(), static_cast<Eigen::Index>(ids.size()), cells);
    const BoxBatch out = eval.bounds(cells);
    auto& slot = found[static_cast<std::size_t>(begin / 8192)];
    for (Eigen::Index c = 0; c < out.size(); ++c) {
      if (out.hi(0, c) >= m_level) slot.push_back(begin + c);
    }
  });
  CellSet set;
  set.role = CellRole::geM;
  for (const auto& slot : found) set.indices.insert(set.indices.end(), slot.begin(), slot.end());
  return set;
}

namespace detail {

// Interval offsets N * cell per noise cell, plus the full-support hull,
// for systems with additive noise.
struct NoiseOffsets {
  std::vector<Eigen::VectorXd> lo, hi;  // per partition cell
  Eigen::VectorXd full_lo, full_hi;     // over the whole support
  std::vector<double> weight;           // mass or maxvol per cell
};

inline NoiseOffsets make_noise_offsets(const SystemModel& sys, const NoisePartition& part,
                                       BoundMode mode) {
  NoiseOffsets out;
  const Eigen::MatrixXd& nm = sys.noise_matrix();
  const int dim = sys.state_dim();
  for (std::size_t i = 0; i < part.size(); ++i) {
    Eigen::VectorXd lo(dim), hi(dim);
    for (int d = 0; d < dim; ++d) {
      const Interval r = row_affine(nm.row(d), part.cells[i]);
      lo(d) = r.lo;
      hi(d) = r.hi;
    }
    out.lo.push_back(std::move(lo));
    out.hi.push_back(std::move(hi));
    out.weight.push_back(mode == BoundMode::mass_weighted ? part.mass[i] : part.maxvol);
  }
  out.full_lo.resize(dim);
  out.full_hi.resize(dim);
  const Box support = sys.noise().support();
  for (int d = 0; d < dim; ++d) {
    const Interval r = row_affine(nm.row(d), support);
    out.full_lo(d) = r.lo;
    out.full_hi(d) = r.hi;
  }
  return out;
}

// Mass- or volume-weighted expectation bounds for a batch of centers with
// precomputed successor means, one noise-partition sweep per center.
inline void fine_bounds(const SystemModel& sys, const NetBoundEvaluator& eval,
                        const NoiseOffsets& offs, const Eigen::MatrixXd& bases,
                        Eigen::VectorXd& bounds) {
  const Eigen::Index m = bases.cols();
  const auto k = static_cast<Eigen::Index>(offs.lo.size());
  BoxBatch boxes(sys.state_dim(), m * k);
  for (Eigen::Index c = 0; c < m; ++c) {
    for (Eigen::Index i = 0; i < k; ++i) {
      boxes.lo.col(c * k + i) = bases.col(c) + offs.lo[static_cast<std::size_t>(i)];
      boxes.hi.col(c * k + i) = bases.col(c) + offs.hi[static_cast<std::size_t>(i)];
    }
  }
  boxes.clip_rows(sys.state_space());
  const BoxBatch vb = eval.bounds(boxes);
  bounds.resize(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      acc += offs.weight[static_cast<std::size_t>(i)] * vb.hi(0, c * k + i);
    }
    bounds(c) = acc;
  }
}

// Generic fallback without the additive-noise decomposition.
inline double fine_bound_generic(const SystemModel& sys, const PolicyHandle& policy,
                                 const Mlp& v, const Eigen::VectorXd& center,
                                 const NoisePartition& part, BoundMode mode) {
  return expected_upper_bound(v, sys, policy, center, part, mode);
}

}  // namespace detail

struct DecreaseCheckResult {
  std::vector<Counterexample> counterexamples;  // gap <= 0 cells, sorted by cell
  double min_gap = std::numeric_limits<double>::infinity();  // over all checked cells
  std::int64_t num_checked = 0;
};

/// Literal per-cell check of the strict expected-decrease inequality at cell
/// centers: counterexample iff bound >= V(center) - tau*K. Used directly for
/// small cell sets and by tests; `verify` below runs the batched variant with
/// a sound screening fast path.
inline DecreaseCheckResult check_decrease(const Mlp& v, const PolicyHandle& policy,
                                          const SystemModel& sys, const Grid& grid,
                                          const CellSet& cells, double k_const, double tau,
                                          const NoisePartition& part,
                                          BoundMode mode = BoundMode::mass_weighted,
                                          int workers = 1) {
  DecreaseCheckResult result;
  result.num_checked = static_cast<std::int64_t>(cells.indices.size());
  std::vector<double> gaps(cells.indices.size());
  std::vector<char> hard(cells.indices.size());
  parallel_for_chunks(
      static_cast<std::int64_t>(cells.indices.size()), 256, workers,
      [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) {
          const Eigen::VectorXd center = grid.center(cells.indices[static_cast<std::size_t>(i)]);
          const double vc = v.forward(center)(0);
          const double bound = expected_upper_bound(v, sys, policy, center, part, mode);
          gaps[static_cast<std::size_t>(i)] = vc - tau * k_const - bound;
          hard[static_cast<std::size_t>(i)] = bound >= vc ? 1 : 0;
        }
      });
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    result.min_gap = std::min(result.min_gap, gaps[i]);
    if (gaps[i] <= 0.0) {
      result.counterexamples.push_back(Counterexample{cells.indices[i], grid.center(cells.indices[i]),
                                                      gaps[i], hard[i] != 0});
    }
  }
  return result;
}

/// Minimum verified decrease margin over a counterexample-free cell set.
inline double extract_epsilon(const Mlp& v, const PolicyHandle& policy, const SystemModel& sys,
                              const Grid& grid, const CellSet& cells, double k_const, double tau,
                              const NoisePartition& part, BoundMode mode = BoundMode::mass_weighted,
                              int workers = 1) {
  const DecreaseCheckResult r =
      check_decrease(v, policy, sys, grid, cells, k_const, tau, part, mode, workers);
  if (!r.counterexamples.empty()) {
    throw std::logic_error("extract_epsilon requires a counterexample-free cell set");
  }
  return r.min_gap;
}

struct Condition3Result {
  bool ok = false;
  double delta = std::numeric_limits<double>::infinity();
  std::vector<std::int64_t> failing;
};

/// Interval lower bound of V must strictly exceed M + L_V * Delta on every
/// cell intersecting X \ X_s; delta is the smallest slack.
inline Condition3Result check_condition3(const Mlp& v, const Grid& grid, const SystemModel& sys,
                                         double m_level, double l_v, double delta_theta,
                                         int workers = 1, std::size_t max_failing = 4096) {
  const CellSet cells = grid.cells_intersecting(sys.excluded_regions());
  Condition3Result result;
  const double threshold = m_level + l_v * delta_theta;
  const auto n = static_cast<std::int64_t>(cells.indices.size());
  std::vector<double> lows(cells.indices.size());
  const NetBoundEvaluator eval(v);
  parallel_for_chunks(n, 8192, workers, [&](std::int64_t begin, std::int64_t end) {
    BoxBatch boxes;
    grid.fill_cell_boxes(cells.indices.data() + begin, static_cast<Eigen::Index>(end - begin),
                         boxes);
    const BoxBatch out = eval.bounds(boxes);
    for (Eigen::Index c = 0; c < out.size(); ++c) {
      lows[static_cast<std::size_t>(begin + c)] = out.lo(0, c);
    }
  });
  result.ok = true;
  for (std::size_t i = 0; i < lows.size(); ++i) {
    const double slack = lows[i] - threshold;
    result.delta = std::min(result.delta, slack);
    if (!(slack > 0.0)) {
      result.ok = false;
      if (result.failing.size() < max_failing) result.failing.push_back(cells.indices[i]);
    }
  }
  return result;
}

/// Full sRSM verification over the grid: collect the cells where V may reach
/// M, check the strict expected decrease at their centers, then check the
/// condition-3 lower bound over cells meeting X \ X_s and extract (epsilon,
/// delta). Soft violations get one local refinement attempt at mesh tau/2
/// before being declared counterexamples.
///
/// Work is fanned out over fixed cell ranges; every reduction (min for
/// epsilon/delta, index-keyed merges) is order independent, so the outcome is
/// deterministic for any worker count.
inline VerifyOutcome verify(const Mlp& v, const PolicyHandle& policy, const SystemModel& sys,
                            const Grid& grid, const VerifierConfig& cfg) {
  VerifyOutcome out;
  out.num_cells = grid.num_cells();
  out.l_v = network_lipschitz(v);
  out.l_pi = policy.lipschitz();
  out.k = compose_K(out.l_v, sys.lipschitz_f(), out.l_pi);
  const double margin = grid.tau() * out.k;

  const NetBoundEvaluator eval(v);
  const NoisePartition part = partition(sys.noise(), cfg.cells_per_dim);
  const bool affine = sys.affine_noise();
  detail::NoiseOffsets offs;
  if (affine) offs = detail::make_noise_offsets(sys, part, cfg.mode);
  const bool screen = affine && cfg.mode == BoundMode::mass_weighted;

  std::int64_t to_process = grid.num_cells();
  if (to_process > cfg.cell_budget) {
    out.budget_exceeded = true;
    out.unprocessed_cells = to_process - cfg.cell_budget;
    to_process = cfg.cell_budget;
  }

  struct Pending {
    std::int64_t cell;
    Eigen::Vector4d center_storage;  // fits up to 4 state dims without heap
    double vc;
    Eigen::Vector4d base_storage;
  };
  const int sdim = sys.state_dim();
  if (sdim > 4) throw std::runtime_error("verify: state dimension above 4 not supported");

  struct Violation {
    std::int64_t cell;
    Eigen::Vector4d center_storage;
    Eigen::Vector4d base_storage;
    double vc;
    double gap;
    bool hard;
    bool exact;  // gap from the partitioned bound, not the screening bounds
  };

  const std::int64_t chunk = 8192;
  const auto num_chunks = static_cast<std::size_t>((to_process + chunk - 1) / chunk);
  std::vector<std::vector<Pending>> pending_slots(num_chunks);
  std::vector<std::vector<Violation>> certain_slots(num_chunks);
  std::vector<double> chunk_min_gap(num_chunks, std::numeric_limits<double>::infinity());
  std::vector<std::int64_t> chunk_ge_m(num_chunks, 0);

  auto compute_members = [&](const std::int64_t* ids, Eigen::Index n,
                             std::vector<std::int64_t>& members) {
    BoxBatch cells;
    grid.fill_cell_boxes(ids, n, cells);
    const BoxBatch vb = eval.bounds(cells);
    members.clear();
    for (Eigen::Index c = 0; c < n; ++c) {
      if (vb.hi(0, c) >= cfg.m_level) members.push_back(ids[c]);
    }
  };

  // Pass A: membership, point values, and (in mass mode) the full-support
  // screening bound sup_w V(f(x, pi(x), w)), which dominates the partitioned
  // bound; cells passing it need no finer treatment.
  parallel_for_chunks(to_process, chunk, cfg.workers, [&](std::int64_t begin, std::int64_t end) {
    const auto slot = static_cast<std::size_t>(begin / chunk);
    std::vector<std::int64_t> ids(static_cast<std::size_t>(end - begin));
    for (std::int64_t i = begin; i < end; ++i) ids[static_cast<std::size_t>(i - begin)] = i;
    std::vector<std::int64_t> members;
    compute_members(ids.data(), static_cast<Eigen::Index>(ids.size()), members);
    chunk_ge_m[slot] = static_cast<std::int64_t>(members.size());
    if (members.empty()) return;

    Eigen::MatrixXd centers;
    grid.fill_centers(members.data(), static_cast<Eigen::Index>(members.size()), centers);
    const Eigen::MatrixXd vc = v.forward(centers);
    const Eigen::MatrixXd actions = policy.evaluate(centers);
    Eigen::MatrixXd bases(sdim, centers.cols());
    const Eigen::VectorXd zero_noise = Eigen::VectorXd::Zero(sys.noise_dim());
    for (Eigen::Index c = 0; c < centers.cols(); ++c) {
      bases.col(c) = sys.dynamics(centers.col(c), sys.clamp_action(actions.col(c)), zero_noise);
    }

    // The screening pass bounds V over the full noise image in one sweep.
    // Its upper bound dominates the partitioned bound, so a passing gap is
    // final; its lower bound undercuts the partitioned bound, so a failing
    // gap is a confirmed counterexample. Only the shell in between needs the
    // partitioned evaluation.
    BoxBatch screen_bounds;
    if (screen) {
      BoxBatch succ(sdim, centers.cols());
      succ.lo = bases.colwise() + offs.full_lo;
      succ.hi = bases.colwise() + offs.full_hi;
      succ.clip_rows(sys.state_space());
      screen_bounds = eval.bounds(succ);
    }

    auto& pend = pending_slots[slot];
    auto& certain = certain_slots[slot];
    for (Eigen::Index c = 0; c < centers.cols(); ++c) {
      Pending p;
      p.cell = members[static_cast<std::size_t>(c)];
      p.center_storage.setZero();
      p.base_storage.setZero();
      p.center_storage.head(sdim) = centers.col(c);
      p.base_storage.head(sdim) = bases.col(c);
      p.vc = vc(0, c);
      if (screen) {
        const double gap_hi = p.vc - margin - screen_bounds.hi(0, c);
        if (gap_hi > 0.0) {
          chunk_min_gap[slot] = std::min(chunk_min_gap[slot], gap_hi);
          continue;
        }
        const double slo = screen_bounds.lo(0, c);
        const double gap_lo = p.vc - margin - slo;
        if (gap_lo <= 0.0) {
          certain.push_back(Violation{p.cell, p.center_storage, p.base_storage, p.vc, gap_lo,
                                      slo >= p.vc, false});
          continue;
        }
      }
      pend.push_back(p);
    }
  });

  for (std::size_t s = 0; s < num_chunks; ++s) out.num_ge_m += chunk_ge_m[s];
  double min_gap = std::numeric_limits<double>::infinity();
  for (double g : chunk_min_gap) min_gap = std::min(min_gap, g);

  std::vector<Pending> pending;
  for (auto& slot : pending_slots) {
    pending.insert(pending.end(), slot.begin(), slot.end());
    slot.clear();
    slot.shrink_to_fit();
  }
  pending_slots.clear();

  // Pass B: partitioned expectation bound for cells the screen could not
  // discharge (or every member cell in maxvol mode / without additive noise).
  const auto num_pending_chunks = static_cast<std::size_t>(
      (static_cast<std::int64_t>(pending.size()) + 255) / 256);
  std::vector<std::vector<Violation>> violation_slots(num_pending_chunks);
  std::vector<double> pending_min_gap(num_pending_chunks,
                                      std::numeric_limits<double>::infinity());
  parallel_for_chunks(
      static_cast<std::int64_t>(pending.size()), 256, cfg.workers,
      [&](std::int64_t begin, std::int64_t end) {
        const auto slot = static_cast<std::size_t>(begin / 256);
        const auto count = static_cast<Eigen::Index>(end - begin);
        Eigen::VectorXd bounds;
        if (affine) {
          Eigen::MatrixXd bases(sdim, count);
          for (Eigen::Index i = 0; i < count; ++i) {
            bases.col(i) = pending[static_cast<std::size_t>(begin + i)].base_storage.head(sdim);
          }
          detail::fine_bounds(sys, eval, offs, bases, bounds);
        } else {
          bounds.resize(count);
          for (Eigen::Index i = 0; i < count; ++i) {
            bounds(i) = detail::fine_bound_generic(
                sys, policy, v, pending[static_cast<std::size_t>(begin + i)].center_storage.head(sdim),
                part, cfg.mode);
          }
        }
        for (Eigen::Index i = 0; i < count; ++i) {
          const Pending& p = pending[static_cast<std::size_t>(begin + i)];
          const double gap = p.vc - margin - bounds(i);
          if (gap > 0.0) {
            pending_min_gap[slot] = std::min(pending_min_gap[slot], gap);
          } else {
            violation_slots[slot].push_back(
                Violation{p.cell, p.center_storage, p.base_storage, p.vc, gap,
                          bounds(i) >= p.vc, true});
          }
        }
      });
  for (double g : pending_min_gap) min_gap = std::min(min_gap, g);
  std::vector<Violation> violations;
  for (auto& slot : certain_slots) {
    violations.insert(violations.end(), slot.begin(), slot.end());
  }
  certain_slots.clear();
  for (auto& slot : violation_slots) {
    violations.insert(violations.end(), slot.begin(), slot.end());
  }
  violation_slots.clear();
  out.num_violations = static_cast<std::int64_t>(violations.size());
  // Hardness from the screening lower bound is certain when flagged; the
  // reported subset is re-evaluated exactly below, so only the refinement
  // gate sees the conservative count.
  for (const auto& viol : violations) out.num_hard += viol.hard ? 1 : 0;

  // Pass C: one local refinement attempt at mesh tau/2 on soft violations.
  if (!violations.empty() && out.num_hard == 0 && cfg.local_refinement &&
      violations.size() <= cfg.max_refine_cells) {
    const double child_margin = (grid.tau() / 2.0) * out.k;
    std::vector<char> resolved(violations.size(), 0);
    const auto refine_chunks = static_cast<std::size_t>(
        (static_cast<std::int64_t>(violations.size()) + 63) / 64);
    std::vector<double> refine_min_gap(refine_chunks, std::numeric_limits<double>::infinity());
    parallel_for_chunks(
        static_cast<std::int64_t>(violations.size()), 64, cfg.workers,
        [&](std::int64_t begin, std::int64_t end) {
          const auto slot = static_cast<std::size_t>(begin / 64);
          for (std::int64_t idx = begin; idx < end; ++idx) {
            const Violation& viol = violations[static_cast<std::size_t>(idx)];
            bool all_pass = true;
            double local_min = std::numeric_limits<double>::infinity();
            const Eigen::VectorXd zero_noise = Eigen::VectorXd::Zero(sys.noise_dim());
            for (int ch = 0; ch < grid.child_count() && all_pass; ++ch) {
              const Box child = grid.child_box(viol.cell, ch);
              BoxBatch child_batch(sdim, 1);
              child_batch.set(0, child);
              const BoxBatch vb = eval.bounds(child_batch);
              if (vb.hi(0, 0) < cfg.m_level) continue;  // no state with V >= M inside
              const Eigen::VectorXd center = grid.child_center(viol.cell, ch);
              const double vc = v.forward(center)(0);
              double bound;
              if (affine) {
                const Eigen::VectorXd u = sys.clamp_action(policy(center));
                const Eigen::MatrixXd base = sys.dynamics(center, u, zero_noise);
                Eigen::VectorXd bounds1;
                detail::fine_bounds(sys, eval, offs, base, bounds1);
                bound = bounds1(0);
              } else {
                bound = detail::fine_bound_generic(sys, policy, v, center, part, cfg.mode);
              }
              const double gap = vc - child_margin - bound;
              if (gap > 0.0) {
                local_min = std::min(local_min, gap);
              } else {
                all_pass = false;
              }
            }
            if (all_pass) {
              resolved[static_cast<std::size_t>(idx)] = 1;
              refine_min_gap[slot] = std::min(refine_min_gap[slot], local_min);
            }
          }
        });
    for (double g : refine_min_gap) min_gap = std::min(min_gap, g);
    std::vector<Violation> remaining;
    for (std::size_t i = 0; i < violations.size(); ++i) {
      if (resolved[i]) {
        ++out.num_refined_resolved;
      } else {
        remaining.push_back(violations[i]);
      }
    }
    violations = std::move(remaining);
  }

  if (!violations.empty()) {
    // Report the worst-gap subset, deterministically.
    std::sort(violations.begin(), violations.end(), [](const Violation& a, const Violation& b) {
      return a.gap != b.gap ? a.gap < b.gap : a.cell < b.cell;
    });
    if (violations.size() > cfg.max_counterexamples) {
      violations.resize(cfg.max_counterexamples);
    }
    std::sort(violations.begin(), violations.end(),
              [](const Violation& a, const Violation& b) { return a.cell < b.cell; });
    if (affine) {
      // Exact partitioned gaps and hard flags for the reported subset.
      parallel_for_chunks(
          static_cast<std::int64_t>(violations.size()), 256, cfg.workers,
          [&](std::int64_t begin, std::int64_t end) {
            const auto count = static_cast<Eigen::Index>(end - begin);
            Eigen::MatrixXd bases(sdim, count);
            for (Eigen::Index i = 0; i < count; ++i) {
              bases.col(i) = violations[static_cast<std::size_t>(begin + i)].base_storage.head(sdim);
            }
            Eigen::VectorXd bounds;
            detail::fine_bounds(sys, eval, offs, bases, bounds);
            for (Eigen::Index i = 0; i < count; ++i) {
              Violation& viol = violations[static_cast<std::size_t>(begin + i)];
              viol.gap = viol.vc - margin - bounds(i);
              viol.hard = bounds(i) >= viol.vc;
              viol.exact = true;
            }
          });
    }
    for (const auto& viol : violations) {
      out.counterexamples.push_back(Counterexample{
          viol.cell, Eigen::VectorXd(viol.center_storage.head(sdim)), viol.gap, viol.hard});
    }
    out.status = VerifyStatus::counterexamples;
    return out;
  }

  if (out.budget_exceeded) {
    // Unprocessed cells leave the decrease check incomplete; no certificate.
    out.status = VerifyStatus::counterexamples;
    return out;
  }

  // Condition 3 and the certificate margins.
  out.delta_theta = max_step_size(sys, policy, grid, cfg.delta_noise_cells, cfg.workers);
  const Condition3Result c3 =
      check_condition3(v, grid, sys, cfg.m_level, out.l_v, out.delta_theta, cfg.workers);
  out.condition3_failing = c3.failing;
  out.delta = c3.delta;
  if (!c3.ok) {
    out.status = VerifyStatus::condition3_failed;
    return out;
  }
  out.epsilon = min_gap;
  out.status = VerifyStatus::certified;
  return out;
}

}  // namespace srsm
