#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>

#include "srsm/bound_prop.hpp"
#include "srsm/interval.hpp"
#include "srsm/lipschitz.hpp"
#include "srsm/mlp.hpp"
#include "srsm/system.hpp"

namespace srsm {

/// Control policy as seen by the verifier: either a network (interval bounds
/// via bound propagation, Lipschitz constant from the layer-norm product) or
/// an arbitrary map with a user-supplied Lipschitz constant, whose range over
/// a box is enclosed by the center value +- L_pi * radius per output.
class PolicyHandle {
 public:
  static PolicyHandle from_mlp(const Mlp& net) {
    PolicyHandle p;
    p.net_ = std::make_shared<Mlp>(net);
    p.evaluator_ = std::make_shared<NetBoundEvaluator>(*p.net_);
    return p;
  }

  static PolicyHandle from_function(std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn,
                                    int input_dim, int output_dim,
                                    std::optional<double> lipschitz) {
    if (!lipschitz.has_value()) {
      throw std::invalid_argument(
          "non-network policies require a user-supplied Lipschitz constant");
    }
    PolicyHandle p;
    p.fn_ = std::move(fn);
    p.fn_in_ = input_dim;
    p.fn_out_ = output_dim;
    p.fn_lipschitz_ = *lipschitz;
    return p;
  }

  bool is_mlp() const { return net_ != nullptr; }
  const Mlp& mlp() const {
    if (!net_) throw std::logic_error("policy is not a network");
    return *net_;
  }

  int input_dim() const { return net_ ? net_->input_dim() : fn_in_; }
  int output_dim() const { return net_ ? net_->output_dim() : fn_out_; }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    return net_ ? net_->forward(x) : fn_(x);
  }

  Eigen::MatrixXd evaluate(const Eigen::MatrixXd& xs) const {
    if (net_) return net_->forward(xs);
    Eigen::MatrixXd out(fn_out_, xs.cols());
    for (Eigen::Index c = 0; c < xs.cols(); ++c) out.col(c) = fn_(xs.col(c));
    return out;
  }

  double lipschitz() const { return net_ ? network_lipschitz(*net_) : fn_lipschitz_; }

  /// Sound enclosure of the raw (pre-clamp) action over a state box.
  Box bounds(const Box& state_box) const {
    if (net_) return net_bounds(*net_, state_box);
    Eigen::VectorXd center(state_box.size());
    double radius = 0.0;
    for (std::size_t d = 0; d < state_box.size(); ++d) {
      center(static_cast<Eigen::Index>(d)) = state_box[d].mid();
      radius += state_box[d].radius();  // L1 radius of the box
    }
    const Eigen::VectorXd u = fn_(center);
    Box out;
    out.reserve(static_cast<std::size_t>(fn_out_));
    const double slack = fn_lipschitz_ * radius;
    for (Eigen::Index i = 0; i < u.size(); ++i) out.emplace_back(u(i) - slack, u(i) + slack);
    return out;
  }

  BoxBatch bounds(const BoxBatch& boxes) const {
    if (net_) return evaluator_->bounds(boxes);
    BoxBatch out(fn_out_, boxes.size());
    for (Eigen::Index i = 0; i < boxes.size(); ++i) out.set(i, bounds(boxes.box(i)));
    return out;
  }

 private:
  std::shared_ptr<Mlp> net_;
  std::shared_ptr<NetBoundEvaluator> evaluator_;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn_;
  int fn_in_ = 0;
  int fn_out_ = 0;
  double fn_lipschitz_ = 0.0;
};

/// Enclosure of {f(x, g(pi(x)), w) : x in state_box, w in noise_box} for an
/// interval-evaluable system.
inline Box dynamics_bounds(const SystemModel& sys, const PolicyHandle& policy,
                           const Box& state_box, const Box& noise_box) {
  return sys.successor_box(state_box, policy.bounds(state_box), noise_box);
}

}  // namespace srsm
