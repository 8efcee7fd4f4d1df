#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "srsm/interval.hpp"
#include "srsm/noise.hpp"

namespace srsm {

enum class RewardMode { indicator, pendulum_quadratic };

struct Membership {
  bool in_x = false;
  bool in_xs = false;
  bool in_t = false;
};

/// Discrete-time stochastic system x' = f(x, g(u), w), with the action clamp
/// g(u) = max(min(u, 1), -1) applied before the dynamics and the successor
/// clipped componentwise back into the state space. The clip keeps every
/// verified quantity well defined on the compact state space.
///
/// Subclasses supply the raw dynamics, its action Jacobian, and interval
/// forms. Instances are immutable and safe to share across threads.
class SystemModel {
 public:
  virtual ~SystemModel() = default;

  const std::string& id() const { return id_; }
  int state_dim() const { return static_cast<int>(state_space_.size()); }
  virtual int action_dim() const = 0;
  int noise_dim() const { return noise_.dim; }

  const Box& state_space() const { return state_space_; }
  const std::vector<Box>& excluded_regions() const { return excluded_; }
  const Box& target_box() const { return target_; }
  const NoiseSpec& noise() const { return noise_; }
  RewardMode default_reward_mode() const { return reward_mode_; }

  /// Analytic L1 Lipschitz constant of (x, u) -> f(x, g(u), w).
  double lipschitz_f() const { return lipschitz_f_; }

  Eigen::VectorXd clamp_action(const Eigen::VectorXd& u) const {
    return u.cwiseMax(-1.0).cwiseMin(1.0);
  }

  Eigen::VectorXd clip_state(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = x;
    for (int d = 0; d < state_dim(); ++d) {
      y(d) = std::min(std::max(y(d), state_space_[static_cast<std::size_t>(d)].lo),
                      state_space_[static_cast<std::size_t>(d)].hi);
    }
    return y;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& w) const {
    if (!x.allFinite()) throw std::invalid_argument("step: non-finite state");
    return clip_state(dynamics(x, clamp_action(u), w));
  }

  /// d(step)/du at raw action u: dynamics Jacobian masked by the clamp g and
  /// by the state-space clip of the unclipped successor.
  Eigen::MatrixXd step_jacobian_action(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& w) const {
    const Eigen::VectorXd uc = clamp_action(u);
    Eigen::MatrixXd jac = dynamics_jacobian_u(x, uc);
    for (int a = 0; a < action_dim(); ++a) {
      if (u(a) < -1.0 || u(a) > 1.0) jac.col(a).setZero();
    }
    const Eigen::VectorXd y = dynamics(x, uc, w);
    for (int d = 0; d < state_dim(); ++d) {
      const auto& bound = state_space_[static_cast<std::size_t>(d)];
      if (y(d) < bound.lo || y(d) > bound.hi) jac.row(d).setZero();
    }
    return jac;
  }

  Membership membership(const Eigen::VectorXd& x) const {
    Membership m;
    m.in_x = box_contains(state_space_, x);
    m.in_t = box_contains(target_, x);
    bool excluded = false;
    for (const Box& b : excluded_) {
      if (box_contains(b, x)) {
        excluded = true;
        break;
      }
    }
    m.in_xs = m.in_x && !excluded;
    return m;
  }

  double reward(const Eigen::VectorXd& x, RewardMode mode) const {
    switch (mode) {
      case RewardMode::indicator:
        return membership(x).in_xs ? 1.0 : 0.0;
      case RewardMode::pendulum_quadratic:
        return 1.0 - x(0) * x(0) - 0.1 * x(1) * x(1);
    }
    throw std::logic_error("unknown reward mode");
  }

  /// Sound enclosure of the clipped successor over state/action/noise boxes.
  /// The action box is in raw units; the clamp is applied here.
  Box successor_box(const Box& state, const Box& action, const Box& noise_box) const {
    Box a;
    a.reserve(action.size());
    for (const Interval& ai : action) a.push_back(interval_clamp(ai, -1.0, 1.0));
    Box img = dynamics_box(state, a, noise_box);
    for (std::size_t d = 0; d < img.size(); ++d) {
      img[d] = interval_clamp(img[d], state_space_[d].lo, state_space_[d].hi);
    }
    return img;
  }

  /// Enclosure of f(x, g(u), w) - x (without the final clip; the clip only
  /// shrinks displacements for states inside the state space). Uses the
  /// subclass's structural form so the x-dependence does not get decorrelated.
  Box displacement_box_clamped(const Box& state, const Box& action, const Box& noise_box) const {
    Box a;
    a.reserve(action.size());
    for (const Interval& ai : action) a.push_back(interval_clamp(ai, -1.0, 1.0));
    return displacement_box(state, a, noise_box);
  }

  /// True when f(x, u, w) = f(x, u, 0) + N w with constant N; both benchmark
  /// systems have this form and the verifier exploits it.
  virtual bool affine_noise() const { return false; }
  virtual const Eigen::MatrixXd& noise_matrix() const {
    throw std::logic_error("system has no affine noise decomposition");
  }

  /// Zero-noise successors for a batch of (state, raw action) columns; the
  /// verifier's hot path. Subclasses override with vectorized forms.
  virtual Eigen::MatrixXd successor_mean_batch(const Eigen::MatrixXd& states,
                                               const Eigen::MatrixXd& actions) const {
    Eigen::MatrixXd out(state_dim(), states.cols());
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(noise_dim());
    for (Eigen::Index c = 0; c < states.cols(); ++c) {
      out.col(c) = dynamics(states.col(c), clamp_action(actions.col(c)), zero);
    }
    return out;
  }

  /// Raw dynamics with the action already clamped; no state clip.
  virtual Eigen::VectorXd dynamics(const Eigen::VectorXd& x, const Eigen::VectorXd& uc,
                                   const Eigen::VectorXd& w) const = 0;
  virtual Eigen::MatrixXd dynamics_jacobian_u(const Eigen::VectorXd& x,
                                              const Eigen::VectorXd& uc) const = 0;
  virtual Box dynamics_box(const Box& state, const Box& action_clamped,
                           const Box& noise_box) const = 0;
  virtual Box displacement_box(const Box& state, const Box& action_clamped,
                               const Box& noise_box) const = 0;

  virtual nlohmann::json spec_json() const = 0;

 protected:
  std::string id_;
  Box state_space_;
  std::vector<Box> excluded_;
  Box target_;
  NoiseSpec noise_;
  RewardMode reward_mode_ = RewardMode::indicator;
  double lipschitz_f_ = 0.0;
};

namespace detail {
inline Interval row_affine(const Eigen::RowVectorXd& coeffs, const Box& box, double offset = 0.0) {
  Interval acc = Interval::point(offset);
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
    acc = acc + box[static_cast<std::size_t>(i)] * coeffs(i);
  }
  return acc;
}

inline Box matrix_box(const Eigen::MatrixXd& m, const Box& box) {
  Box out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(row_affine(m.row(r), box));
  return out;
}

inline Box box_sum(const Box& a, const Box& b) {
  Box out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a[i] + b[i]);
  return out;
}

inline double max_abs_col_sum(const Eigen::MatrixXd& m) {
  double best = 0.0;
  for (Eigen::Index c = 0; c < m.cols(); ++c) best = std::max(best, m.col(c).cwiseAbs().sum());
  return best;
}

inline nlohmann::json box_to_json(const Box& b) {
  nlohmann::json j = nlohmann::json::array();
  for (const Interval& i : b) j.push_back({i.lo, i.hi});
  return j;
}

inline Box box_from_json(const nlohmann::json& j) {
  Box b;
  for (const auto& pair : j) b.emplace_back(pair.at(0).get<double>(), pair.at(1).get<double>());
  return b;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}
}  // namespace detail

/// x' = A x + B g(u) + C w with triangular disturbances. The Lipschitz
/// constant in (x, u) under L1 is the larger of the induced L1 norms of A
/// and B (max absolute column sum), since g is 1-Lipschitz; a sampling test
/// cross-checks this.
class AffineSystem : public SystemModel {
 public:
  AffineSystem(std::string name, Eigen::MatrixXd a, Eigen::MatrixXd b, Eigen::MatrixXd c,
               Box state_space, std::vector<Box> excluded, Box target,
               RewardMode reward_mode)
      : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), a_minus_i_(a_) {
    id_ = std::move(name);
    state_space_ = std::move(state_space);
    excluded_ = std::move(excluded);
    target_ = std::move(target);
    noise_.dim = static_cast<int>(c_.cols());
    reward_mode_ = reward_mode;
    a_minus_i_.diagonal().array() -= 1.0;
    lipschitz_f_ = std::max(detail::max_abs_col_sum(a_), detail::max_abs_col_sum(b_));
    if (a_.rows() != a_.cols() || a_.rows() != static_cast<Eigen::Index>(state_space_.size()) ||
        b_.rows() != a_.rows() || c_.rows() != a_.rows()) {
      throw std::invalid_argument("AffineSystem: inconsistent matrix shapes");
    }
  }

  int action_dim() const override { return static_cast<int>(b_.cols()); }

  bool affine_noise() const override { return true; }
  const Eigen::MatrixXd& noise_matrix() const override { return c_; }

  Eigen::MatrixXd successor_mean_batch(const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& actions) const override {
    return a_ * states + b_ * actions.cwiseMax(-1.0).cwiseMin(1.0);
  }

  Eigen::VectorXd dynamics(const Eigen::VectorXd& x, const Eigen::VectorXd& uc,
                           const Eigen::VectorXd& w) const override {
    return a_ * x + b_ * uc + c_ * w;
  }

  Eigen::MatrixXd dynamics_jacobian_u(const Eigen::VectorXd&,
                                      const Eigen::VectorXd&) const override {
    return b_;
  }

  Box dynamics_box(const Box& state, const Box& action, const Box& noise_box) const override {
    return detail::box_sum(detail::box_sum(detail::matrix_box(a_, state),
                                           detail::matrix_box(b_, action)),
                           detail::matrix_box(c_, noise_box));
  }

  Box displacement_box(const Box& state, const Box& action, const Box& noise_box) const override {
    // (A - I) x + B u + C w, so a narrow state box yields a narrow bound.
    return detail::box_sum(detail::box_sum(detail::matrix_box(a_minus_i_, state),
                                           detail::matrix_box(b_, action)),
                           detail::matrix_box(c_, noise_box));
  }

  nlohmann::json spec_json() const override {
    return {{"name", id_},
            {"A", detail::matrix_to_json(a_)},
            {"B", detail::matrix_to_json(b_)},
            {"noise_scale", detail::matrix_to_json(c_)},
            {"bounds", detail::box_to_json(state_space_)},
            {"excluded_boxes",
             [this] {
               nlohmann::json arr = nlohmann::json::array();
               for (const Box& b : excluded_) arr.push_back(detail::box_to_json(b));
               return arr;
             }()},
            {"target_box", detail::box_to_json(target_)},
            {"noise", "triangular"},
            {"reward", reward_mode_ == RewardMode::indicator ? "indicator" : "pendulum_quadratic"}};
  }

 private:
  Eigen::MatrixXd a_, b_, c_;
  Eigen::MatrixXd a_minus_i_;
};

/// Inverted pendulum with triangular noise:
///   x2' = (1-b) x2 + d * (-1.5 G sin(x1 + pi) / (2 l) + (3 / (m l^2)) 2 g(u)) + 0.002 w1
///   x1' = x1 + d x2' + 0.005 w2
/// Parameters d=0.05, G=10, m=0.15, l=0.5, b=0.1. No angle wrapping is
/// applied; the state space [-3,3]^2 stays within one revolution.
class PendulumSystem : public SystemModel {
 public:
  PendulumSystem() {
    id_ = "pendulum";
    state_space_ = {{-3.0, 3.0}, {-3.0, 3.0}};
    excluded_ = {Box{{-3.0, -2.9}, {-3.0, 0.0}}, Box{{2.9, 3.0}, {0.0, 3.0}}};
    target_ = {{-0.2, 0.2}, {-0.2, 0.2}};
    noise_.dim = 2;
    reward_mode_ = RewardMode::pendulum_quadratic;
    // w1 enters x2' scaled by 0.002 and x1' through d * x2'; w2 enters x1'.
    noise_mat_.resize(2, 2);
    noise_mat_ << kD * 0.002, 0.005,
                  0.002, 0.0;
    // Induced L1 bound of the (x, u) Jacobian via per-entry sup:
    //   |d f2/d x1| <= d * 1.5 G / (2 l) = 0.75,  d f2/d x2 = 1 - b = 0.9,
    //   |d f2/d u|  <= d * (3/(m l^2)) * 2 = 8,
    //   f1 rows add 1 + d * (df2/dx1), d * (df2/dx2), d * (df2/du).
    // Max column sum = max(1.7875, 0.945, 8.4) = 8.4.
    const double df2_dx1 = kD * 1.5 * kG / (2 * kL);
    const double df2_du = kD * (3.0 / (kM * kL * kL)) * 2.0;
    lipschitz_f_ = std::max({df2_dx1 + (1.0 + kD * df2_dx1),
                             (1.0 - kB) + kD * (1.0 - kB),
                             df2_du + kD * df2_du});
  }

  int action_dim() const override { return 1; }

  bool affine_noise() const override { return true; }
  const Eigen::MatrixXd& noise_matrix() const override { return noise_mat_; }

  Eigen::MatrixXd successor_mean_batch(const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& actions) const override {
    const Eigen::ArrayXd uc = actions.row(0).transpose().array().max(-1.0).min(1.0);
    const Eigen::ArrayXd x1 = states.row(0).transpose().array();
    const Eigen::ArrayXd x2 = states.row(1).transpose().array();
    const Eigen::ArrayXd x2p =
        x2 * (1.0 - kB) +
        ((x1 + detail::kPi).sin() * (-1.5 * kG / (2 * kL)) +
         uc * ((3.0 / (kM * kL * kL)) * 2.0)) *
            kD;
    Eigen::MatrixXd out(2, states.cols());
    out.row(0) = (x1 + x2p * kD).matrix().transpose();
    out.row(1) = x2p.matrix().transpose();
    return out;
  }

  Eigen::VectorXd dynamics(const Eigen::VectorXd& x, const Eigen::VectorXd& uc,
                           const Eigen::VectorXd& w) const override {
    // Mirrors x2_next term for term so interval bounds of degenerate boxes
    // reproduce the pointwise value exactly.
    const double x2p = x(1) * (1.0 - kB) +
                       (std::sin(x(0) + detail::kPi) * (-1.5 * kG / (2 * kL)) +
                        uc(0) * ((3.0 / (kM * kL * kL)) * 2.0)) *
                           kD +
                       w(0) * 0.002;
    const double x1p = x(0) + x2p * kD + w(1) * 0.005;
    Eigen::VectorXd out(2);
    out << x1p, x2p;
    return out;
  }

  Eigen::MatrixXd dynamics_jacobian_u(const Eigen::VectorXd&,
                                      const Eigen::VectorXd&) const override {
    Eigen::MatrixXd jac(2, 1);
    const double df2 = kD * (3.0 / (kM * kL * kL)) * 2.0;
    jac << kD * df2, df2;
    return jac;
  }

  Box dynamics_box(const Box& state, const Box& action, const Box& noise_box) const override {
    const Interval x2p = x2_next(state, action, noise_box);
    const Interval x1p = state[0] + x2p * kD + noise_box[1] * 0.005;
    return {x1p, x2p};
  }

  Box displacement_box(const Box& state, const Box& action, const Box& noise_box) const override {
    const Interval x2p = x2_next(state, action, noise_box);
    const Interval d2 = x2p - state[1];
    const Interval d1 = x2p * kD + noise_box[1] * 0.005;  // x1' - x1 directly
    return {d1, d2};
  }

  nlohmann::json spec_json() const override { return {{"name", id_}}; }

 private:
  Interval x2_next(const Box& state, const Box& action, const Box& noise_box) const {
    const Interval s = interval_sin(state[0] + detail::kPi);
    return state[1] * (1.0 - kB) +
           (s * (-1.5 * kG / (2 * kL)) + action[0] * ((3.0 / (kM * kL * kL)) * 2.0)) * kD +
           noise_box[0] * 0.002;
  }

  static constexpr double kD = 0.05;
  static constexpr double kG = 10.0;
  static constexpr double kM = 0.15;
  static constexpr double kL = 0.5;
  static constexpr double kB = 0.1;
  Eigen::MatrixXd noise_mat_;
};

inline std::shared_ptr<SystemModel> make_lds2d() {
  Eigen::MatrixXd a(2, 2), b(2, 1), c(2, 2);
  a << 1.0, 0.0196,
       0.0, 0.98;
  b << 0.002,
       0.1;
  c << 0.002, 0.0,
       0.0, 0.001;
  Box state{{-0.7, 0.7}, {-0.7, 0.7}};
  std::vector<Box> excluded{Box{{-0.7, -0.6}, {-0.7, -0.4}}, Box{{0.6, 0.7}, {0.4, 0.7}}};
  Box target{{-0.2, 0.2}, {-0.2, 0.2}};
  return std::make_shared<AffineSystem>("lds2d", a, b, c, state, excluded, target,
                                        RewardMode::indicator);
}

inline std::shared_ptr<SystemModel> system_from_spec(const nlohmann::json& j) {
  if (j.value("noise", "triangular") != std::string("triangular")) {
    throw std::invalid_argument("system spec: only bounded triangular noise is supported");
  }
  std::vector<Box> excluded;
  for (const auto& bj : j.at("excluded_boxes")) excluded.push_back(detail::box_from_json(bj));
  const std::string reward = j.value("reward", "indicator");
  return std::make_shared<AffineSystem>(
      j.value("name", "custom"), detail::matrix_from_json(j.at("A")),
      detail::matrix_from_json(j.at("B")), detail::matrix_from_json(j.at("noise_scale")),
      detail::box_from_json(j.at("bounds")), std::move(excluded),
      detail::box_from_json(j.at("target_box")),
      reward == "indicator" ? RewardMode::indicator : RewardMode::pendulum_quadratic);
}

inline std::shared_ptr<SystemModel> make_system(const std::string& id) {
  if (id == "lds2d") return make_lds2d();
  if (id == "pendulum") return std::make_shared<PendulumSystem>();
  throw std::invalid_argument("unknown environment id: " + id);
}

}  // namespace srsm
