#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "srsm/interval.hpp"
#include "srsm/mlp.hpp"

namespace srsm {

namespace detail {
inline void activation_bounds(Activation act, Eigen::MatrixXd& lo, Eigen::MatrixXd& hi) {
  // All supported activations are monotone, so endpoint images are exact.
  switch (act) {
    case Activation::identity:
      return;
    case Activation::relu:
      lo = lo.cwiseMax(0.0);
      hi = hi.cwiseMax(0.0);
      return;
    case Activation::tanh:
      lo = lo.array().tanh().matrix();
      hi = hi.array().tanh().matrix();
      return;
    case Activation::softplus:
      lo = lo.unaryExpr([](double v) { return softplus(v); });
      hi = hi.unaryExpr([](double v) { return softplus(v); });
      return;
  }
}
}  // namespace detail

/// Interval bound propagation through a network, batched over boxes.
/// The affine step uses the center/radius form c' = W c + b, r' = |W| r,
/// which equals the sign-split interval sum in real arithmetic and runs as
/// two matrix products. Caches |W| per layer, so build one evaluator per
/// network and reuse it across batches.
class NetBoundEvaluator {
 public:
  explicit NetBoundEvaluator(const Mlp& net) : net_(&net) {
    wabs_.reserve(net.layers().size());
    for (const Layer& l : net.layers()) wabs_.push_back(l.w.cwiseAbs());
  }

  BoxBatch bounds(const BoxBatch& boxes) const {
    if (boxes.dim() != net_->input_dim()) {
      throw std::invalid_argument("net bounds: box dimension mismatch");
    }
    Eigen::MatrixXd c = 0.5 * (boxes.lo + boxes.hi);
    Eigen::MatrixXd r = 0.5 * (boxes.hi - boxes.lo);
    BoxBatch out;
    const auto& layers = net_->layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const Layer& l = layers[k];
      Eigen::MatrixXd c2 = (l.w * c).colwise() + l.b;
      Eigen::MatrixXd r2 = wabs_[k] * r;
      Eigen::MatrixXd lo = c2 - r2;
      Eigen::MatrixXd hi = c2 + r2;
      detail::activation_bounds(l.act, lo, hi);
      if (k + 1 < layers.size()) {
        c = 0.5 * (lo + hi);
        r = 0.5 * (hi - lo);
      } else {
        out.lo = std::move(lo);
        out.hi = std::move(hi);
      }
    }
    return out;
  }

 private:
  const Mlp* net_;
  std::vector<Eigen::MatrixXd> wabs_;
};

/// Per-output-dimension enclosure of {forward(net, x) : x in box}.
inline Box net_bounds(const Mlp& net, const Box& box) {
  BoxBatch batch(static_cast<Eigen::Index>(box.size()), 1);
  batch.set(0, box);
  BoxBatch out = NetBoundEvaluator(net).bounds(batch);
  return out.box(0);
}

/// Sound range of a monotone (or sin/cos/clamp) activation over a box.
inline Box activation_prop(const std::string& act, const Box& box) {
  Box out;
  out.reserve(box.size());
  for (const Interval& x : box) {
    if (act == "relu") {
      out.push_back(interval_relu(x));
    } else if (act == "tanh") {
      out.push_back(interval_tanh(x));
    } else if (act == "softplus") {
      out.push_back(interval_softplus(x));
    } else if (act == "identity") {
      out.push_back(x);
    } else if (act == "sin") {
      out.push_back(interval_sin(x));
    } else if (act == "cos") {
      out.push_back(interval_cos(x));
    } else if (act == "clamp") {
      out.push_back(interval_clamp(x, -1.0, 1.0));
    } else {
      throw std::invalid_argument("activation_prop: unsupported activation " + act);
    }
  }
  return out;
}

}  // namespace srsm
