#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace srsm {

/// Closed interval [lo, hi]. Soundness of every operation here is claimed at
/// the real-arithmetic level; no outward rounding of floating-point results
/// is performed. An optional additive slack can be applied by callers that
/// want extra conservatism.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  Interval() = default;
  Interval(double l, double h) : lo(l), hi(h) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw std::invalid_argument("Interval requires finite lo <= hi");
    }
  }
  static Interval point(double x) { return Interval(x, x); }

  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  double radius() const { return 0.5 * (hi - lo); }
  bool contains(double x) const { return lo <= x && x <= hi; }
  double abs_max() const { return std::max(std::abs(lo), std::abs(hi)); }

  Interval operator+(const Interval& o) const { return {lo + o.lo, hi + o.hi}; }
  Interval operator-(const Interval& o) const { return {lo - o.hi, hi - o.lo}; }
  Interval operator+(double c) const { return {lo + c, hi + c}; }
  Interval operator*(double c) const {
    return c >= 0 ? Interval(c * lo, c * hi) : Interval(c * hi, c * lo);
  }
};

using Box = std::vector<Interval>;

inline Box make_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  Box b;
  b.reserve(lo.size());
  for (Eigen::Index i = 0; i < lo.size(); ++i) b.emplace_back(lo(i), hi(i));
  return b;
}

inline Box point_box(const Eigen::VectorXd& x) { return make_box(x, x); }

inline bool box_contains(const Box& b, const Eigen::VectorXd& x) {
  if (static_cast<Eigen::Index>(b.size()) != x.size()) return false;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!b[i].contains(x(i))) return false;
  }
  return true;
}

// Closed boxes intersect iff they overlap (touching counts).
inline bool boxes_intersect(const Box& a, const Box& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].hi < b[i].lo || b[i].hi < a[i].lo) return false;
  }
  return true;
}

inline bool box_subset(const Box& inner, const Box& outer) {
  for (std::size_t i = 0; i < inner.size(); ++i) {
    if (inner[i].lo < outer[i].lo || inner[i].hi > outer[i].hi) return false;
  }
  return true;
}

// --- elementary interval functions ---

inline Interval interval_clamp(const Interval& x, double lo, double hi) {
  auto clip = [&](double v) { return std::min(std::max(v, lo), hi); };
  return {clip(x.lo), clip(x.hi)};
}

inline Interval interval_relu(const Interval& x) {
  return {std::max(x.lo, 0.0), std::max(x.hi, 0.0)};
}

inline Interval interval_tanh(const Interval& x) {
  return {std::tanh(x.lo), std::tanh(x.hi)};
}

inline double softplus(double x) {
  // Stable branch for large |x|: softplus(x) = max(x,0) + log1p(exp(-|x|)).
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_deriv(double x) {
  // Logistic sigmoid, evaluated stably.
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Interval interval_softplus(const Interval& x) {
  return {softplus(x.lo), softplus(x.hi)};
}

namespace detail {
constexpr double kPi = 3.14159265358979323846;

// Does [lo, hi] contain a point congruent to target (mod 2*pi)?
inline bool contains_mod_2pi(double lo, double hi, double target) {
  if (hi - lo >= 2 * kPi) return true;
  const double k = std::ceil((lo - target) / (2 * kPi));
  return target + 2 * kPi * k <= hi;
}
}  // namespace detail

/// Exact range of sin over an interval: endpoint values plus +-1 whenever a
/// critical point pi/2 + k*pi lies inside.
inline Interval interval_sin(const Interval& x) {
  double lo = std::min(std::sin(x.lo), std::sin(x.hi));
  double hi = std::max(std::sin(x.lo), std::sin(x.hi));
  if (detail::contains_mod_2pi(x.lo, x.hi, detail::kPi / 2)) hi = 1.0;
  if (detail::contains_mod_2pi(x.lo, x.hi, -detail::kPi / 2)) lo = -1.0;
  return {lo, hi};
}

inline Interval interval_cos(const Interval& x) {
  return interval_sin(x + detail::kPi / 2);
}

/// Sound enclosure of { W x + b : x in box }. Exact (up to rounding) because
/// the map is affine: each output coordinate is a sum of independent
/// monotone terms.
inline Box affine_prop(const Eigen::MatrixXd& w, const Eigen::VectorXd& b, const Box& box) {
  if (w.cols() != static_cast<Eigen::Index>(box.size())) {
    throw std::invalid_argument("affine_prop: W columns must match box dimension");
  }
  Box out;
  out.reserve(w.rows());
  for (Eigen::Index j = 0; j < w.rows(); ++j) {
    double lo = b(j), hi = b(j);
    for (Eigen::Index i = 0; i < w.cols(); ++i) {
      const double wij = w(j, i);
      if (wij >= 0) {
        lo += wij * box[i].lo;
        hi += wij * box[i].hi;
      } else {
        lo += wij * box[i].hi;
        hi += wij * box[i].lo;
      }
    }
    out.emplace_back(lo, hi);
  }
  return out;
}

/// Batch of axis-aligned boxes, stored as dim x n lower/upper matrices.
/// This is the layout the verifier streams grid cells through.
struct BoxBatch {
  Eigen::MatrixXd lo;
  Eigen::MatrixXd hi;

  BoxBatch() = default;
  BoxBatch(Eigen::Index dim, Eigen::Index n) : lo(dim, n), hi(dim, n) {}

  Eigen::Index dim() const { return lo.rows(); }
  Eigen::Index size() const { return lo.cols(); }

  Box box(Eigen::Index i) const { return make_box(lo.col(i), hi.col(i)); }
  void set(Eigen::Index i, const Box& b) {
    for (std::size_t d = 0; d < b.size(); ++d) {
      lo(static_cast<Eigen::Index>(d), i) = b[d].lo;
      hi(static_cast<Eigen::Index>(d), i) = b[d].hi;
    }
  }

  void clip_rows(const Box& bounds) {
    for (Eigen::Index d = 0; d < dim(); ++d) {
      lo.row(d) = lo.row(d).cwiseMax(bounds[d].lo).cwiseMin(bounds[d].hi);
      hi.row(d) = hi.row(d).cwiseMax(bounds[d].lo).cwiseMin(bounds[d].hi);
    }
  }
};

}  // namespace srsm
