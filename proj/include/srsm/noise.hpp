#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "srsm/interval.hpp"

namespace srsm {

/// Zero-mean triangular law on [-1, 1], density 1 - |x|.
/// The disturbance is a product of independent per-dimension copies.
struct TriangularLaw {
  static double pdf(double x) { return (x < -1.0 || x > 1.0) ? 0.0 : 1.0 - std::abs(x); }

  static double cdf(double x) {
    if (x <= -1.0) return 0.0;
    if (x >= 1.0) return 1.0;
    if (x <= 0.0) return 0.5 * (1.0 + x) * (1.0 + x);
    return 1.0 - 0.5 * (1.0 - x) * (1.0 - x);
  }

  static double inverse_cdf(double u) {
    if (u <= 0.5) return -1.0 + std::sqrt(2.0 * u);
    return 1.0 - std::sqrt(2.0 * (1.0 - u));
  }
};

struct NoiseSpec {
  int dim = 0;

  Box support() const {
    Box b;
    for (int i = 0; i < dim; ++i) b.emplace_back(-1.0, 1.0);
    return b;
  }

  Eigen::VectorXd sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd w(dim);
    for (int i = 0; i < dim; ++i) w(i) = TriangularLaw::inverse_cdf(u(rng));
    return w;
  }

  // Columns are independent draws.
  Eigen::MatrixXd sample(Eigen::Index n, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd w(dim, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (int i = 0; i < dim; ++i) w(i, c) = TriangularLaw::inverse_cdf(u(rng));
    }
    return w;
  }
};

/// Uniform rectangular partition of the disturbance support, with exact
/// per-cell probability mass from CDF differences. Cells cover the support
/// with disjoint interiors and their masses telescope to 1.
struct NoisePartition {
  std::vector<Box> cells;
  std::vector<double> mass;
  double maxvol = 0.0;

  std::size_t size() const { return cells.size(); }
};

inline NoisePartition partition(const NoiseSpec& noise, int cells_per_dim) {
  if (cells_per_dim < 1) throw std::invalid_argument("partition: cells_per_dim >= 1");
  const int p = noise.dim;
  const double h = 2.0 / cells_per_dim;

  std::vector<double> edges(static_cast<std::size_t>(cells_per_dim) + 1);
  for (int i = 0; i <= cells_per_dim; ++i) edges[static_cast<std::size_t>(i)] = -1.0 + h * i;
  edges.front() = -1.0;
  edges.back() = 1.0;

  NoisePartition part;
  const std::int64_t total = static_cast<std::int64_t>(std::pow(cells_per_dim, p) + 0.5);
  part.cells.reserve(static_cast<std::size_t>(total));
  part.mass.reserve(static_cast<std::size_t>(total));
  double vol = 1.0;
  for (int d = 0; d < p; ++d) vol *= h;
  part.maxvol = vol;

  std::vector<int> idx(static_cast<std::size_t>(p), 0);
  for (std::int64_t c = 0; c < total; ++c) {
    Box cell;
    double m = 1.0;
    for (int d = 0; d < p; ++d) {
      const double lo = edges[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)])];
      const double hi = edges[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)]) + 1];
      cell.emplace_back(lo, hi);
      m *= TriangularLaw::cdf(hi) - TriangularLaw::cdf(lo);
    }
    part.cells.push_back(std::move(cell));
    part.mass.push_back(m);
    for (int d = 0; d < p; ++d) {
      if (++idx[static_cast<std::size_t>(d)] < cells_per_dim) break;
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
  return part;
}

enum class BoundMode { mass_weighted, maxvol };

inline const char* bound_mode_name(BoundMode m) {
  return m == BoundMode::mass_weighted ? "mass_weighted" : "maxvol";
}

inline BoundMode bound_mode_from_name(const std::string& s) {
  if (s == "mass_weighted" || s == "mass") return BoundMode::mass_weighted;
  if (s == "maxvol") return BoundMode::maxvol;
  throw std::invalid_argument("unknown bound mode: " + s);
}

}  // namespace srsm
