#pragma once

#include <stdexcept>

#include "srsm/mlp.hpp"

namespace srsm {

/// L1 Lipschitz upper bound of a network: product over layers of the induced
/// L1 operator norm (max absolute column sum, with rows indexing outputs).
/// Valid because every supported activation is 1-Lipschitz.
inline double network_lipschitz(const Mlp& net) {
  double product = 1.0;
  for (const Layer& l : net.layers()) {
    switch (l.act) {
      case Activation::identity:
      case Activation::relu:
      case Activation::tanh:
      case Activation::softplus:
        break;
      default:
        throw std::invalid_argument("network_lipschitz: activation is not 1-Lipschitz");
    }
    double factor = 0.0;
    for (Eigen::Index c = 0; c < l.w.cols(); ++c) {
      factor = std::max(factor, l.w.col(c).cwiseAbs().sum());
    }
    product *= factor;
  }
  return product;
}

/// K = L_V * (L_f * (L_pi + 1) + 1): converts the verified margin at cell
/// centers into a guarantee over whole cells.
inline double compose_K(double l_v, double l_f, double l_pi) {
  if (l_v < 0 || l_f < 0 || l_pi < 0) {
    throw std::invalid_argument("compose_K: constants must be nonnegative");
  }
  return l_v * (l_f * (l_pi + 1.0) + 1.0);
}

struct LipschitzReport {
  double l_pi = 0.0;
  double l_v = 0.0;
  double l_f = 0.0;
  double k = 0.0;
  double delta_theta = 0.0;
};

}  // namespace srsm
