#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <vector>

#include "srsm/interval.hpp"

namespace srsm {

enum class CellRole { geM, complement_xs, counterexample };

struct CellSet {
  std::vector<std::int64_t> indices;  // sorted, unique
  CellRole role = CellRole::geM;
};

/// Uniform rectangular discretization of the state space with mesh tau:
/// per-dimension spacing h = 2 tau / n makes the L1 half-diagonal of a cell
/// exactly tau, so every state lies within L1 distance tau of some cell
/// center. Cell counts round up and spacings shrink to tile the bounds
/// exactly. Cells are addressed by a linear index with dimension 0 fastest.
///
/// A grid may carry a set of locally refined cells (each split once into 2^n
/// children at mesh tau/2); enumeration helpers expose the children without
/// materializing them.
class Grid {
 public:
  static Grid build(const Box& bounds, double tau, std::int64_t max_cells = kDefaultCellBudget) {
    if (!(tau > 0)) throw std::invalid_argument("grid: tau must be positive");
    Grid g;
    g.bounds_ = bounds;
    g.tau_ = tau;
    const int n = static_cast<int>(bounds.size());
    const double h = 2.0 * tau / n;
    g.counts_.resize(static_cast<std::size_t>(n));
    g.spacing_.resize(static_cast<std::size_t>(n));
    double total_log = 0.0;
    for (int d = 0; d < n; ++d) {
      const double width = bounds[static_cast<std::size_t>(d)].width();
      const auto cells = static_cast<std::int64_t>(std::ceil(width / h - 1e-12));
      g.counts_[static_cast<std::size_t>(d)] = std::max<std::int64_t>(cells, 1);
      g.spacing_[static_cast<std::size_t>(d)] =
          width / static_cast<double>(g.counts_[static_cast<std::size_t>(d)]);
      total_log += std::log2(static_cast<double>(g.counts_[static_cast<std::size_t>(d)]));
    }
    if (total_log > 62.0) throw_budget(g.counts_, max_cells);
    std::int64_t total = 1;
    for (std::int64_t c : g.counts_) total *= c;
    if (total > max_cells) throw_budget(g.counts_, max_cells);
    g.num_cells_ = total;
    return g;
  }

  double tau() const { return tau_; }
  const Box& bounds() const { return bounds_; }
  int dim() const { return static_cast<int>(bounds_.size()); }
  std::int64_t num_cells() const { return num_cells_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  const std::vector<double>& spacing() const { return spacing_; }
  const std::vector<std::int64_t>& refined_cells() const { return refined_; }

  bool is_refined(std::int64_t idx) const {
    return std::binary_search(refined_.begin(), refined_.end(), idx);
  }

  Eigen::VectorXd center(std::int64_t idx) const {
    Eigen::VectorXd x(dim());
    for (int d = 0; d < dim(); ++d) {
      const std::int64_t i = idx % counts_[static_cast<std::size_t>(d)];
      idx /= counts_[static_cast<std::size_t>(d)];
      x(d) = bounds_[static_cast<std::size_t>(d)].lo +
             (static_cast<double>(i) + 0.5) * spacing_[static_cast<std::size_t>(d)];
    }
    return x;
  }

  Box cell_box(std::int64_t idx) const {
    Box b;
    b.reserve(static_cast<std::size_t>(dim()));
    for (int d = 0; d < dim(); ++d) {
      const std::int64_t i = idx % counts_[static_cast<std::size_t>(d)];
      idx /= counts_[static_cast<std::size_t>(d)];
      const double lo = bounds_[static_cast<std::size_t>(d)].lo +
                        static_cast<double>(i) * spacing_[static_cast<std::size_t>(d)];
      b.emplace_back(lo, lo + spacing_[static_cast<std::size_t>(d)]);
    }
    return b;
  }

  /// L1 half-diagonal of a (top-level) cell; <= tau by construction.
  double cell_tau() const {
    double s = 0.0;
    for (double h : spacing_) s += 0.5 * h;
    return s;
  }

  /// Batched accessors used by the verifier hot paths; `idx` may be any list
  /// of valid cell indices.
  void fill_cell_boxes(const std::int64_t* idx, Eigen::Index n, BoxBatch& out) const {
    out.lo.resize(dim(), n);
    out.hi.resize(dim(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
      std::int64_t rest = idx[c];
      for (int d = 0; d < dim(); ++d) {
        const std::int64_t i = rest % counts_[static_cast<std::size_t>(d)];
        rest /= counts_[static_cast<std::size_t>(d)];
        const double lo = bounds_[static_cast<std::size_t>(d)].lo +
                          static_cast<double>(i) * spacing_[static_cast<std::size_t>(d)];
        out.lo(d, c) = lo;
        out.hi(d, c) = lo + spacing_[static_cast<std::size_t>(d)];
      }
    }
  }

  void fill_centers(const std::int64_t* idx, Eigen::Index n, Eigen::MatrixXd& out) const {
    out.resize(dim(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
      std::int64_t rest = idx[c];
      for (int d = 0; d < dim(); ++d) {
        const std::int64_t i = rest % counts_[static_cast<std::size_t>(d)];
        rest /= counts_[static_cast<std::size_t>(d)];
        out(d, c) = bounds_[static_cast<std::size_t>(d)].lo +
                    (static_cast<double>(i) + 0.5) * spacing_[static_cast<std::size_t>(d)];
      }
    }
  }

  int child_count() const { return 1 << dim(); }

  Box child_box(std::int64_t parent, int child) const {
    Box b = cell_box(parent);
    for (int d = 0; d < dim(); ++d) {
      const double mid = b[static_cast<std::size_t>(d)].mid();
      if ((child >> d) & 1) {
        b[static_cast<std::size_t>(d)].lo = mid;
      } else {
        b[static_cast<std::size_t>(d)].hi = mid;
      }
    }
    return b;
  }

  Eigen::VectorXd child_center(std::int64_t parent, int child) const {
    const Box b = child_box(parent, child);
    Eigen::VectorXd x(dim());
    for (int d = 0; d < dim(); ++d) x(d) = b[static_cast<std::size_t>(d)].mid();
    return x;
  }

  /// Centers of a coarser subgrid (spacing multiplied by `factor`), used to
  /// seed the learner's training set. Truncated edge cells keep their own
  /// midpoints so every point stays inside the bounds.
  std::vector<Eigen::VectorXd> seed_training_set(int factor) const {
    if (factor < 1) throw std::invalid_argument("subgrid factor must be >= 1");
    std::vector<std::int64_t> coarse(counts_.size());
    std::int64_t total = 1;
    for (std::size_t d = 0; d < counts_.size(); ++d) {
      coarse[d] = (counts_[d] + factor - 1) / factor;
      total *= coarse[d];
    }
    std::vector<Eigen::VectorXd> pts;
    pts.reserve(static_cast<std::size_t>(total));
    std::vector<std::int64_t> idx(counts_.size(), 0);
    for (std::int64_t c = 0; c < total; ++c) {
      Eigen::VectorXd x(dim());
      for (int d = 0; d < dim(); ++d) {
        const double lo = bounds_[static_cast<std::size_t>(d)].lo +
                          static_cast<double>(idx[static_cast<std::size_t>(d)]) * factor *
                              spacing_[static_cast<std::size_t>(d)];
        const double hi = std::min(lo + factor * spacing_[static_cast<std::size_t>(d)],
                                   bounds_[static_cast<std::size_t>(d)].hi);
        x(d) = 0.5 * (lo + hi);
      }
      pts.push_back(std::move(x));
      for (std::size_t d = 0; d < coarse.size(); ++d) {
        if (++idx[d] < coarse[d]) break;
        idx[d] = 0;
      }
    }
    return pts;
  }

  /// Exactly the cells whose closed box intersects the closed region
  /// (a union of boxes).
  CellSet cells_intersecting(const std::vector<Box>& region) const {
    std::vector<std::int64_t> found;
    for (const Box& rb : region) {
      std::vector<std::int64_t> lo_idx(counts_.size()), hi_idx(counts_.size());
      bool empty = false;
      for (std::size_t d = 0; d < counts_.size(); ++d) {
        const double origin = bounds_[d].lo;
        const double h = spacing_[d];
        // Largest i with origin + i*h <= rb.hi and smallest with
        // origin + (i+1)*h >= rb.lo; then widen by one and test exactly.
        auto lo = static_cast<std::int64_t>(std::floor((rb[d].lo - origin) / h)) - 1;
        auto hi = static_cast<std::int64_t>(std::floor((rb[d].hi - origin) / h)) + 1;
        lo = std::max<std::int64_t>(lo, 0);
        hi = std::min<std::int64_t>(hi, counts_[d] - 1);
        if (lo > hi) {
          empty = true;
          break;
        }
        lo_idx[d] = lo;
        hi_idx[d] = hi;
      }
      if (empty) continue;
      std::vector<std::int64_t> idx = lo_idx;
      for (;;) {
        std::int64_t linear = 0;
        for (std::size_t d = counts_.size(); d-- > 0;) linear = linear * counts_[d] + idx[d];
        if (boxes_intersect(cell_box(linear), rb)) found.push_back(linear);
        std::size_t d = 0;
        for (; d < counts_.size(); ++d) {
          if (++idx[d] <= hi_idx[d]) break;
          idx[d] = lo_idx[d];
        }
        if (d == counts_.size()) break;
      }
    }
    std::sort(found.begin(), found.end());
    found.erase(std::unique(found.begin(), found.end()), found.end());
    return CellSet{std::move(found), CellRole::complement_xs};
  }

  /// Scheduled global refinement: halve tau at iterations 5, 7, 9, ... (1-based)
  /// when the previous verification saw no hard violation. Returns a fresh
  /// grid; any cached cell sets for the old grid are invalid.
  Grid refine(int iteration, bool hard_violation,
              std::int64_t max_cells = kDefaultCellBudget) const {
    if (iteration >= 5 && (iteration - 5) % 2 == 0 && !hard_violation) {
      return build(bounds_, tau_ / 2.0, max_cells);
    }
    return *this;
  }

  /// Splits each listed cell once into 2^n children at mesh tau/2; all other
  /// cells are untouched.
  Grid refine_locally(const CellSet& cells) const {
    Grid g = *this;
    g.refined_.insert(g.refined_.end(), cells.indices.begin(), cells.indices.end());
    std::sort(g.refined_.begin(), g.refined_.end());
    g.refined_.erase(std::unique(g.refined_.begin(), g.refined_.end()), g.refined_.end());
    return g;
  }

  /// (center, value) CSV for contour plots, subsampled by `stride` cells per
  /// dimension.
  template <typename ValueFn>
  void export_values_csv(const std::string& path, ValueFn&& value, std::int64_t stride = 1) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    for (int d = 0; d < dim(); ++d) out << "x" << (d + 1) << ",";
    out << "V\n";
    std::vector<std::int64_t> idx(counts_.size(), 0);
    for (;;) {
      std::int64_t linear = 0;
      for (std::size_t d = counts_.size(); d-- > 0;) linear = linear * counts_[d] + idx[d];
      const Eigen::VectorXd x = center(linear);
      for (int d = 0; d < dim(); ++d) out << x(d) << ",";
      out << value(x) << "\n";
      std::size_t d = 0;
      for (; d < counts_.size(); ++d) {
        idx[d] += stride;
        if (idx[d] < counts_[d]) break;
        idx[d] = 0;
      }
      if (d == counts_.size()) break;
    }
  }

  static constexpr std::int64_t kDefaultCellBudget = 200'000'000;

 private:
  [[noreturn]] static void throw_budget(const std::vector<std::int64_t>& counts,
                                        std::int64_t max_cells) {
    double total = 1.0;
    for (std::int64_t c : counts) total *= static_cast<double>(c);
    const double gib = total * 8.0 / (1024.0 * 1024.0 * 1024.0);
    throw std::runtime_error(
        "grid: cell count " + std::to_string(total) + " exceeds budget " +
        std::to_string(max_cells) + " (one value per cell would need about " +
        std::to_string(gib) + " GiB); increase the budget or coarsen tau");
  }

  Box bounds_;
  double tau_ = 0.0;
  std::vector<std::int64_t> counts_;
  std::vector<double> spacing_;
  std::int64_t num_cells_ = 0;
  std::vector<std::int64_t> refined_;
};

}  // namespace srsm
