#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "srsm/grid.hpp"
#include "srsm/lipschitz.hpp"
#include "srsm/mlp.hpp"
#include "srsm/policy.hpp"
#include "srsm/rng.hpp"
#include "srsm/step_size.hpp"
#include "srsm/system.hpp"

namespace srsm {

struct TrainConfig {
  double lr = 5e-4;
  double lambda = 1e-3;   // weight of the Lipschitz hinge terms
  double alpha = 10.0;    // weight of the Lipschitz lower-floor term
  double rho_theta = 4.0;
  double rho_nu = 8.0;
  double rho_prime = 0.01;
  double delta_train = 0.1;
  double eps_train = 0.1;
  int n_cond2 = 16;
  int n_cond3 = 256;
  int n3 = 256;
  int n4 = 512;
  int freeze_policy_iters = 3;
  bool use_lprime_cond2 = false;
  int batch_size = 256;
  int epochs_per_iter = 50;
  int subgrid_factor = 50;
  int hidden_layers = 2;
  int hidden_units = 128;

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"lambda", lambda},
            {"alpha", alpha},
            {"rho_theta", rho_theta},
            {"rho_nu", rho_nu},
            {"rho_prime", rho_prime},
            {"delta_train", delta_train},
            {"eps_train", eps_train},
            {"n_cond2", n_cond2},
            {"n_cond3", n_cond3},
            {"n3", n3},
            {"n4", n4},
            {"freeze_policy_iters", freeze_policy_iters},
            {"use_lprime_cond2", use_lprime_cond2},
            {"batch_size", batch_size},
            {"epochs_per_iter", epochs_per_iter},
            {"subgrid_factor", subgrid_factor},
            {"hidden_layers", hidden_layers},
            {"hidden_units", hidden_units}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.lambda = j.value("lambda", c.lambda);
    c.alpha = j.value("alpha", c.alpha);
    c.rho_theta = j.value("rho_theta", c.rho_theta);
    c.rho_nu = j.value("rho_nu", c.rho_nu);
    c.rho_prime = j.value("rho_prime", c.rho_prime);
    c.delta_train = j.value("delta_train", c.delta_train);
    c.eps_train = j.value("eps_train", c.eps_train);
    c.n_cond2 = j.value("n_cond2", c.n_cond2);
    c.n_cond3 = j.value("n_cond3", c.n_cond3);
    c.n3 = j.value("n3", c.n3);
    c.n4 = j.value("n4", c.n4);
    c.freeze_policy_iters = j.value("freeze_policy_iters", c.freeze_policy_iters);
    c.use_lprime_cond2 = j.value("use_lprime_cond2", c.use_lprime_cond2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs_per_iter = j.value("epochs_per_iter", c.epochs_per_iter);
    c.subgrid_factor = j.value("subgrid_factor", c.subgrid_factor);
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    c.hidden_units = j.value("hidden_units", c.hidden_units);
    return c;
  }
};

struct LossBreakdown {
  double cond2 = 0.0;
  double cond3 = 0.0;
  double lt_m = 0.0;
  double lipschitz = 0.0;
  double total() const { return cond2 + cond3 + lt_m + lipschitz; }
};

// --- sampling helpers ---

inline Eigen::MatrixXd sample_uniform_box(const Box& box, Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(box.size()), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (std::size_t d = 0; d < box.size(); ++d) {
      out(static_cast<Eigen::Index>(d), c) = box[d].lo + box[d].width() * u(rng);
    }
  }
  return out;
}

/// Uniform samples from X \ X_s, drawn directly from the excluded union with
/// volume-proportional box selection (no rejection loop).
inline Eigen::MatrixXd sample_complement(const SystemModel& sys, Eigen::Index n,
                                         std::mt19937_64& rng) {
  const auto& regions = sys.excluded_regions();
  if (regions.empty()) {
    throw std::invalid_argument("sample_complement: X \\ X_s is empty for this system");
  }
  std::vector<double> vols;
  double total = 0.0;
  for (const Box& b : regions) {
    double v = 1.0;
    for (const Interval& iv : b) v *= iv.width();
    vols.push_back(v);
    total += v;
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd out(sys.state_dim(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    double pick = u(rng) * total;
    std::size_t r = 0;
    while (r + 1 < regions.size() && pick > vols[r]) {
      pick -= vols[r];
      ++r;
    }
    for (int d = 0; d < sys.state_dim(); ++d) {
      const Interval& iv = regions[r][static_cast<std::size_t>(d)];
      out(d, c) = iv.lo + iv.width() * u(rng);
    }
  }
  return out;
}

// --- loss terms ---

/// Hinge on the sampled expected decrease at every training point:
/// (1/|B|) sum_x max{ mean_i V(f(x, pi(x), w_i)) - V(x) + margin, 0 }.
/// `noise` holds n_samples columns per point, in point order. Gradients flow
/// into the value tape and, when `policy_tape` is given, through the
/// dynamics' action Jacobian into the policy tape.
inline double loss_cond2(const Mlp& policy, const Mlp& v, const SystemModel& sys,
                         const Eigen::MatrixXd& points, const Eigen::MatrixXd& noise,
                         int n_samples, double margin, GradientTape* policy_tape,
                         GradientTape* v_tape) {
  const Eigen::Index m = points.cols();
  if (m == 0) throw std::invalid_argument("loss_cond2: empty training batch");
  if (noise.cols() != m * n_samples) {
    throw std::invalid_argument("loss_cond2: need n_samples noise columns per point");
  }

  Mlp::Trace policy_trace;
  const Eigen::MatrixXd actions = policy_tape != nullptr
                                      ? policy.forward(points, policy_trace)
                                      : policy.forward(points);

  Eigen::MatrixXd successors(sys.state_dim(), m * n_samples);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (int j = 0; j < n_samples; ++j) {
      successors.col(i * n_samples + j) =
          sys.step(points.col(i), actions.col(i), noise.col(i * n_samples + j));
    }
  }

  Mlp::Trace vx_trace, vs_trace;
  const Eigen::MatrixXd v_x = v.forward(points, vx_trace);
  const Eigen::MatrixXd v_succ = v.forward(successors, vs_trace);

  double loss = 0.0;
  Eigen::VectorXd active(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int j = 0; j < n_samples; ++j) mean += v_succ(0, i * n_samples + j);
    mean /= n_samples;
    const double term = mean - v_x(0, i) + margin;
    active(i) = term > 0.0 ? 1.0 : 0.0;
    loss += std::max(term, 0.0);
  }
  loss /= static_cast<double>(m);

  if (v_tape == nullptr && policy_tape == nullptr) return loss;

  GradientTape scratch;
  GradientTape& vt = v_tape != nullptr ? *v_tape : scratch;
  if (v_tape == nullptr) scratch.reset(v);

  Eigen::MatrixXd up_x(1, m);
  for (Eigen::Index i = 0; i < m; ++i) up_x(0, i) = -active(i) / static_cast<double>(m);
  mlp_backward(v, vx_trace, up_x, vt);

  Eigen::MatrixXd up_succ(1, m * n_samples);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double w = active(i) / static_cast<double>(m * n_samples);
    for (int j = 0; j < n_samples; ++j) up_succ(0, i * n_samples + j) = w;
  }
  Eigen::MatrixXd succ_grad;  // dLoss/d successor, needed for the policy chain
  mlp_backward(v, vs_trace, up_succ, vt, policy_tape != nullptr ? &succ_grad : nullptr);

  if (policy_tape != nullptr) {
    Eigen::MatrixXd up_u = Eigen::MatrixXd::Zero(policy.output_dim(), m);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (active(i) == 0.0) continue;
      for (int j = 0; j < n_samples; ++j) {
        const Eigen::MatrixXd jac =
            sys.step_jacobian_action(points.col(i), actions.col(i), noise.col(i * n_samples + j));
        up_u.col(i) += jac.transpose() * succ_grad.col(i * n_samples + j);
      }
    }
    mlp_backward(policy, policy_trace, up_u, *policy_tape);
  }
  return loss;
}

/// Same term under a fixed non-network policy (verification-only mode).
inline double loss_cond2(const PolicyHandle& policy, const Mlp& v, const SystemModel& sys,
                         const Eigen::MatrixXd& points, const Eigen::MatrixXd& noise,
                         int n_samples, double margin, GradientTape* v_tape) {
  if (policy.is_mlp()) {
    return loss_cond2(policy.mlp(), v, sys, points, noise, n_samples, margin, nullptr, v_tape);
  }
  const Eigen::Index m = points.cols();
  Eigen::MatrixXd successors(sys.state_dim(), m * n_samples);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::VectorXd u = policy(points.col(i));
    for (int j = 0; j < n_samples; ++j) {
      successors.col(i * n_samples + j) = sys.step(points.col(i), u, noise.col(i * n_samples + j));
    }
  }
  Mlp::Trace vx_trace, vs_trace;
  const Eigen::MatrixXd v_x = v.forward(points, vx_trace);
  const Eigen::MatrixXd v_succ = v.forward(successors, vs_trace);
  double loss = 0.0;
  Eigen::VectorXd active(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double mean = 0.0;
    for (int j = 0; j < n_samples; ++j) mean += v_succ(0, i * n_samples + j);
    mean /= n_samples;
    const double term = mean - v_x(0, i) + margin;
    active(i) = term > 0.0 ? 1.0 : 0.0;
    loss += std::max(term, 0.0);
  }
  loss /= static_cast<double>(m);
  if (v_tape != nullptr) {
    Eigen::MatrixXd up_x(1, m);
    for (Eigen::Index i = 0; i < m; ++i) up_x(0, i) = -active(i) / static_cast<double>(m);
    mlp_backward(v, vx_trace, up_x, *v_tape);
    Eigen::MatrixXd up_succ(1, m * n_samples);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double w = active(i) / static_cast<double>(m * n_samples);
      for (int j = 0; j < n_samples; ++j) up_succ(0, i * n_samples + j) = w;
    }
    mlp_backward(v, vs_trace, up_succ, *v_tape);
  }
  return loss;
}

/// Hinge pushing V above `threshold` on sampled states outside X_s:
/// max{ threshold - min_i V(x_i), 0 }.
inline double loss_cond3(const Mlp& v, const Eigen::MatrixXd& samples, double threshold,
                         GradientTape* v_tape) {
  Mlp::Trace trace;
  const Eigen::MatrixXd vals = v.forward(samples, trace);
  Eigen::Index argmin = 0;
  double vmin = vals(0, 0);
  for (Eigen::Index i = 1; i < vals.cols(); ++i) {
    if (vals(0, i) < vmin) {
      vmin = vals(0, i);
      argmin = i;
    }
  }
  const double loss = std::max(threshold - vmin, 0.0);
  if (v_tape != nullptr && loss > 0.0) {
    Eigen::MatrixXd up = Eigen::MatrixXd::Zero(1, vals.cols());
    up(0, argmin) = -1.0;
    mlp_backward(v, trace, up, *v_tape);
  }
  return loss;
}

/// Two-hinge regularizer keeping V's global minimum inside the region where
/// V < M: max{max_D V - M, 0} + max{min_X V - min_D V, 0}.
inline double loss_lt_m(const Mlp& v, const Eigen::MatrixXd& d_samples,
                        const Eigen::MatrixXd& x_samples, double m_level, GradientTape* v_tape) {
  Mlp::Trace d_trace, x_trace;
  const Eigen::MatrixXd vd = v.forward(d_samples, d_trace);
  const Eigen::MatrixXd vx = v.forward(x_samples, x_trace);

  Eigen::Index d_argmax = 0, d_argmin = 0, x_argmin = 0;
  for (Eigen::Index i = 1; i < vd.cols(); ++i) {
    if (vd(0, i) > vd(0, d_argmax)) d_argmax = i;
    if (vd(0, i) < vd(0, d_argmin)) d_argmin = i;
  }
  for (Eigen::Index i = 1; i < vx.cols(); ++i) {
    if (vx(0, i) < vx(0, x_argmin)) x_argmin = i;
  }
  const double hinge1 = std::max(vd(0, d_argmax) - m_level, 0.0);
  const double hinge2 = std::max(vx(0, x_argmin) - vd(0, d_argmin), 0.0);

  if (v_tape != nullptr) {
    Eigen::MatrixXd up_d = Eigen::MatrixXd::Zero(1, vd.cols());
    if (hinge1 > 0.0) up_d(0, d_argmax) += 1.0;
    if (hinge2 > 0.0) up_d(0, d_argmin) -= 1.0;
    if (hinge1 > 0.0 || hinge2 > 0.0) mlp_backward(v, d_trace, up_d, *v_tape);
    if (hinge2 > 0.0) {
      Eigen::MatrixXd up_x = Eigen::MatrixXd::Zero(1, vx.cols());
      up_x(0, x_argmin) = 1.0;
      mlp_backward(v, x_trace, up_x, *v_tape);
    }
  }
  return hinge1 + hinge2;
}

namespace detail {
// Adds coeff * d(layer-norm product)/d(params) to the tape, treating the
// argmax column of each layer as locally constant.
inline void lipschitz_product_grad(const Mlp& net, double coeff, GradientTape& tape) {
  const auto& layers = net.layers();
  std::vector<double> factors(layers.size());
  std::vector<Eigen::Index> argmax(layers.size());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    double best = -1.0;
    for (Eigen::Index c = 0; c < layers[k].w.cols(); ++c) {
      const double s = layers[k].w.col(c).cwiseAbs().sum();
      if (s > best) {
        best = s;
        argmax[k] = c;
      }
    }
    factors[k] = best;
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    double rest = 1.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (l != k) rest *= factors[l];
    }
    const Eigen::Index c = argmax[k];
    for (Eigen::Index r = 0; r < layers[k].w.rows(); ++r) {
      const double wrc = layers[k].w(r, c);
      const double s = wrc > 0 ? 1.0 : (wrc < 0 ? -1.0 : 0.0);
      tape.dw[k](r, c) += coeff * rest * s;
    }
  }
}
}  // namespace detail

/// lambda * (hinge(L(pi) - rho_theta) + hinge(L(V) - rho_nu))
///   + alpha * min{L(V) - rho_prime, 0}.
inline double loss_lipschitz(const Mlp& policy, const Mlp& v, const TrainConfig& cfg,
                             GradientTape* policy_tape, GradientTape* v_tape) {
  const double l_pi = network_lipschitz(policy);
  const double l_v = network_lipschitz(v);
  const double hinge_pi = std::max(l_pi - cfg.rho_theta, 0.0);
  const double hinge_v = std::max(l_v - cfg.rho_nu, 0.0);
  const double floor_v = std::min(l_v - cfg.rho_prime, 0.0);
  if (policy_tape != nullptr && hinge_pi > 0.0) {
    detail::lipschitz_product_grad(policy, cfg.lambda, *policy_tape);
  }
  if (v_tape != nullptr) {
    double coeff = 0.0;
    if (hinge_v > 0.0) coeff += cfg.lambda;
    if (floor_v < 0.0) coeff += cfg.alpha;
    if (coeff != 0.0) detail::lipschitz_product_grad(v, coeff, *v_tape);
  }
  return cfg.lambda * (hinge_pi + hinge_v) + cfg.alpha * floor_v;
}

/// Certificate-network-only variant, used when the policy is a fixed
/// external map with no trainable parameters.
inline double loss_lipschitz(const Mlp& v, const TrainConfig& cfg, GradientTape* v_tape) {
  const double l_v = network_lipschitz(v);
  const double hinge_v = std::max(l_v - cfg.rho_nu, 0.0);
  const double floor_v = std::min(l_v - cfg.rho_prime, 0.0);
  if (v_tape != nullptr) {
    double coeff = 0.0;
    if (hinge_v > 0.0) coeff += cfg.lambda;
    if (floor_v < 0.0) coeff += cfg.alpha;
    if (coeff != 0.0) detail::lipschitz_product_grad(v, coeff, *v_tape);
  }
  return cfg.lambda * hinge_v + cfg.alpha * floor_v;
}

/// Joint training of the policy and the certificate candidate on the
/// counterexample buffer, one learner iteration per verifier round.
class Learner {
 public:
  Learner(std::shared_ptr<const SystemModel> sys, TrainConfig cfg, PolicyHandle policy,
          Mlp value, std::vector<Eigen::VectorXd> seed_points, std::uint64_t seed,
          bool policy_trainable = true)
      : sys_(std::move(sys)),
        cfg_(cfg),
        policy_handle_(std::move(policy)),
        value_(std::move(value)),
        buffer_(std::move(seed_points)),
        rng_(make_rng(seed, kStreamLearner)),
        policy_trainable_(policy_trainable) {
    if (policy_trainable_ && !policy_handle_.is_mlp()) {
      throw std::invalid_argument("a trainable policy must be a network");
    }
    if (policy_handle_.is_mlp()) {
      policy_net_ = policy_handle_.mlp();
      policy_opt_ = AdamState(policy_net_, cfg_.lr);
    }
    value_opt_ = AdamState(value_, cfg_.lr);
    if (buffer_.empty()) throw std::invalid_argument("learner: empty seed buffer");
  }

  const Mlp& policy() const {
    if (!policy_handle_.is_mlp()) throw std::logic_error("policy is not a network");
    return policy_net_;
  }
  PolicyHandle policy_handle() const {
    return policy_handle_.is_mlp() ? PolicyHandle::from_mlp(policy_net_) : policy_handle_;
  }
  const Mlp& value() const { return value_; }
  const std::vector<Eigen::VectorXd>& buffer() const { return buffer_; }
  double last_delta_estimate() const { return delta_estimate_; }

  /// One pass of Table-2 training: epochs of minibatch descent on
  /// cond2 + cond3 + lt_M + Lipschitz losses. The policy stays frozen for
  /// the first `freeze_policy_iters` iterations (0-based `iter_index`).
  LossBreakdown train_iteration(int iter_index, double tau) {
    const bool train_policy = policy_trainable_ && iter_index >= cfg_.freeze_policy_iters;
    refresh_delta_estimate();
    refresh_d_lt_m(iter_index);

    LossBreakdown first_epoch;
    for (int epoch = 0; epoch < cfg_.epochs_per_iter; ++epoch) {
      // Margin constants are snapshots per epoch; gradients do not flow
      // through the Lipschitz products inside them.
      const double l_v = network_lipschitz(value_);
      const double l_pi = policy_handle_lipschitz();
      const double k = compose_K(l_v, sys_->lipschitz_f(), l_pi);
      const double margin2 = cfg_.use_lprime_cond2 ? k * tau : cfg_.eps_train;
      const double threshold3 = m_level_ + l_v * delta_estimate_ + cfg_.delta_train;

      std::vector<Eigen::Index> order(buffer_.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng_);

      LossBreakdown epoch_loss;
      int batches = 0;
      for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t count = std::min<std::size_t>(cfg_.batch_size, order.size() - start);
        Eigen::MatrixXd pts(sys_->state_dim(), static_cast<Eigen::Index>(count));
        for (std::size_t i = 0; i < count; ++i) {
          pts.col(static_cast<Eigen::Index>(i)) = buffer_[static_cast<std::size_t>(
              order[start + i])];
        }
        const LossBreakdown batch =
            step_on_batch(pts, margin2, threshold3, train_policy, true);
        epoch_loss.cond2 += batch.cond2;
        epoch_loss.cond3 += batch.cond3;
        epoch_loss.lt_m += batch.lt_m;
        epoch_loss.lipschitz += batch.lipschitz;
        ++batches;
        if (!std::isfinite(batch.total()) || batch.total() > 1e6) {
          throw std::runtime_error("learner: training diverged (loss " +
                                   std::to_string(batch.total()) + ")");
        }
      }
      epoch_loss.cond2 /= batches;
      epoch_loss.cond3 /= batches;
      epoch_loss.lt_m /= batches;
      epoch_loss.lipschitz /= batches;
      if (epoch == 0) first_epoch = epoch_loss;
      last_loss_ = epoch_loss;
    }
    return last_loss_;
  }

  /// Total loss (all four terms) at the current parameters, without updating
  /// anything; optional tapes receive the gradients.
  LossBreakdown evaluate_loss(double tau, GradientTape* policy_tape, GradientTape* v_tape) {
    refresh_delta_estimate();
    if (d_lt_m_.cols() == 0) refresh_d_lt_m(0);
    const double l_v = network_lipschitz(value_);
    const double l_pi = policy_handle_lipschitz();
    const double k = compose_K(l_v, sys_->lipschitz_f(), l_pi);
    const double margin2 = cfg_.use_lprime_cond2 ? k * tau : cfg_.eps_train;
    const double threshold3 = m_level_ + l_v * delta_estimate_ + cfg_.delta_train;
    Eigen::MatrixXd pts(sys_->state_dim(), static_cast<Eigen::Index>(buffer_.size()));
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
      pts.col(static_cast<Eigen::Index>(i)) = buffer_[i];
    }
    return compute_losses(pts, margin2, threshold3, policy_tape, v_tape);
  }

  /// B <- (B \ {x in B : V(x) < M}) union counterexamples, deduplicated by
  /// grid cell; reseeds from the coarse subgrid if the result comes up empty.
  void update_buffer(const std::vector<Eigen::VectorXd>& counterexamples, const Grid& grid) {
    std::vector<Eigen::VectorXd> kept;
    kept.reserve(buffer_.size() + counterexamples.size());
    for (const auto& x : buffer_) {
      if (value_.forward(x)(0) >= m_level_) kept.push_back(x);
    }
    kept.insert(kept.end(), counterexamples.begin(), counterexamples.end());

    std::unordered_set<std::int64_t> seen;
    std::vector<Eigen::VectorXd> dedup;
    dedup.reserve(kept.size());
    for (const auto& x : kept) {
      if (seen.insert(cell_of(grid, x)).second) dedup.push_back(x);
    }
    if (dedup.empty()) {
      dedup = grid.seed_training_set(cfg_.subgrid_factor);
    }
    buffer_ = std::move(dedup);
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  double policy_handle_lipschitz() const {
    return policy_handle_.is_mlp() ? network_lipschitz(policy_net_) : policy_handle_.lipschitz();
  }

  static std::int64_t cell_of(const Grid& grid, const Eigen::VectorXd& x) {
    std::int64_t linear = 0;
    for (int d = grid.dim() - 1; d >= 0; --d) {
      const double h = grid.spacing()[static_cast<std::size_t>(d)];
      auto i = static_cast<std::int64_t>((x(d) - grid.bounds()[static_cast<std::size_t>(d)].lo) / h);
      i = std::clamp<std::int64_t>(i, 0, grid.counts()[static_cast<std::size_t>(d)] - 1);
      linear = linear * grid.counts()[static_cast<std::size_t>(d)] + i;
    }
    return linear;
  }

  // Cheap sound displacement bound for the training thresholds, computed on
  // a coarse grid; the verifier recomputes the tight value on the real grid.
  void refresh_delta_estimate() {
    double max_width = 0.0;
    for (const Interval& iv : sys_->state_space()) max_width = std::max(max_width, iv.width());
    const double tau_coarse = max_width * sys_->state_dim() / (2.0 * 64.0);
    const Grid coarse = Grid::build(sys_->state_space(), tau_coarse);
    delta_estimate_ = max_step_size(*sys_, policy_handle(), coarse, 4, 1);
  }

  void refresh_d_lt_m(int iter_index) {
    if (iter_index == 0 || d_lt_m_.cols() == 0) {
      d_lt_m_ = sample_uniform_box(sys_->target_box(), cfg_.n3, rng_);
      return;
    }
    // Resample points where the previous iteration's candidate sits below M.
    const Eigen::MatrixXd candidates =
        sample_uniform_box(sys_->state_space(), 8 * cfg_.n3, rng_);
    const Eigen::MatrixXd vals = value_.forward(candidates);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < candidates.cols() &&
                             keep.size() < static_cast<std::size_t>(cfg_.n3);
         ++i) {
      if (vals(0, i) < m_level_) keep.push_back(i);
    }
    Eigen::MatrixXd d(sys_->state_dim(), cfg_.n3);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      d.col(static_cast<Eigen::Index>(i)) = candidates.col(keep[i]);
    }
    if (keep.size() < static_cast<std::size_t>(cfg_.n3)) {
      // Top up from the target set when the sublevel region is scarce.
      const Eigen::MatrixXd extra = sample_uniform_box(
          sys_->target_box(), cfg_.n3 - static_cast<Eigen::Index>(keep.size()), rng_);
      d.rightCols(extra.cols()) = extra;
    }
    d_lt_m_ = std::move(d);
  }

  LossBreakdown compute_losses(const Eigen::MatrixXd& pts, double margin2, double threshold3,
                               GradientTape* policy_tape, GradientTape* v_tape) {
    LossBreakdown out;
    const Eigen::MatrixXd noise =
        sys_->noise().sample(pts.cols() * cfg_.n_cond2, rng_);
    if (policy_handle_.is_mlp()) {
      out.cond2 = loss_cond2(policy_net_, value_, *sys_, pts, noise, cfg_.n_cond2, margin2,
                             policy_tape, v_tape);
    } else {
      out.cond2 = loss_cond2(policy_handle_, value_, *sys_, pts, noise, cfg_.n_cond2, margin2,
                             v_tape);
    }
    if (!std::isfinite(out.cond2)) throw std::runtime_error("learner: cond2 loss non-finite");
    out.cond3 = loss_cond3(value_, sample_complement(*sys_, cfg_.n_cond3, rng_), threshold3,
                           v_tape);
    if (!std::isfinite(out.cond3)) throw std::runtime_error("learner: cond3 loss non-finite");
    out.lt_m = loss_lt_m(value_, d_lt_m_, sample_uniform_box(sys_->state_space(), cfg_.n4, rng_),
                         m_level_, v_tape);
    if (!std::isfinite(out.lt_m)) throw std::runtime_error("learner: lt_M loss non-finite");
    out.lipschitz = policy_handle_.is_mlp()
                        ? loss_lipschitz(policy_net_, value_, cfg_, policy_tape, v_tape)
                        : loss_lipschitz(value_, cfg_, v_tape);
    if (!std::isfinite(out.lipschitz)) {
      throw std::runtime_error("learner: lipschitz loss non-finite");
    }
    return out;
  }

  LossBreakdown step_on_batch(const Eigen::MatrixXd& pts, double margin2, double threshold3,
                              bool train_policy, bool apply) {
    GradientTape policy_tape, v_tape;
    v_tape.reset(value_);
    if (train_policy) policy_tape.reset(policy_net_);
    const LossBreakdown out = compute_losses(pts, margin2, threshold3,
                                             train_policy ? &policy_tape : nullptr, &v_tape);
    if (apply) {
      optimizer_step(value_opt_, value_, v_tape);
      if (train_policy) optimizer_step(policy_opt_, policy_net_, policy_tape);
    }
    return out;
  }

  std::shared_ptr<const SystemModel> sys_;
  TrainConfig cfg_;
  PolicyHandle policy_handle_;
  Mlp policy_net_;
  Mlp value_;
  AdamState policy_opt_, value_opt_;
  std::vector<Eigen::VectorXd> buffer_;
  Eigen::MatrixXd d_lt_m_;
  std::mt19937_64 rng_;
  bool policy_trainable_ = true;
  double m_level_ = 1.0;
  double delta_estimate_ = 0.0;
  LossBreakdown last_loss_;
};

}  // namespace srsm
