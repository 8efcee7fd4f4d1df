#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "srsm/learner.hpp"
#include "srsm/mlp.hpp"
#include "srsm/rng.hpp"
#include "srsm/system.hpp"

namespace srsm {

struct PpoConfig {
  int iterations = 50;
  int episodes_per_iter = 30;
  int episode_len = 200;
  double clip = 0.2;
  double gamma = 0.99;
  double std_start = 0.5;
  double std_end = 0.05;
  int std_decay_iters = 50;
  int policy_epochs = 10;
  int policy_epochs_first = 30;
  int value_epochs = 5;
  int value_epochs_first = 10;
  int minibatch = 1024;
  double lr = 5e-4;

  nlohmann::json to_json() const {
    return {{"iterations", iterations},
            {"episodes_per_iter", episodes_per_iter},
            {"episode_len", episode_len},
            {"clip", clip},
            {"gamma", gamma},
            {"std_start", std_start},
            {"std_end", std_end},
            {"std_decay_iters", std_decay_iters},
            {"policy_epochs", policy_epochs},
            {"policy_epochs_first", policy_epochs_first},
            {"value_epochs", value_epochs},
            {"value_epochs_first", value_epochs_first},
            {"minibatch", minibatch},
            {"lr", lr}};
  }

  static PpoConfig from_json(const nlohmann::json& j) {
    PpoConfig c;
    c.iterations = j.value("iterations", c.iterations);
    c.episodes_per_iter = j.value("episodes_per_iter", c.episodes_per_iter);
    c.episode_len = j.value("episode_len", c.episode_len);
    c.clip = j.value("clip", c.clip);
    c.gamma = j.value("gamma", c.gamma);
    c.std_start = j.value("std_start", c.std_start);
    c.std_end = j.value("std_end", c.std_end);
    c.std_decay_iters = j.value("std_decay_iters", c.std_decay_iters);
    c.policy_epochs = j.value("policy_epochs", c.policy_epochs);
    c.policy_epochs_first = j.value("policy_epochs_first", c.policy_epochs_first);
    c.value_epochs = j.value("value_epochs", c.value_epochs);
    c.value_epochs_first = j.value("value_epochs_first", c.value_epochs_first);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.lr = j.value("lr", c.lr);
    return c;
  }
};

/// Exploration noise schedule: linear from std_start at iteration 1 down to
/// std_end at iteration std_decay_iters, constant afterwards.
inline double ppo_gaussian_std(const PpoConfig& cfg, int iteration) {
  const int clamped = std::clamp(iteration, 1, cfg.std_decay_iters);
  const double t = static_cast<double>(clamped - 1) / (cfg.std_decay_iters - 1);
  return cfg.std_start + (cfg.std_end - cfg.std_start) * t;
}

/// Buffer-wide advantage normalization; a zero-variance buffer maps to the
/// zero vector through the epsilon guard.
inline Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv) {
  const double mean = adv.mean();
  const double stddev = std::sqrt((adv.array() - mean).square().sum() / adv.size()) + 1e-8;
  return ((adv.array() - mean) / stddev).matrix();
}

struct PpoResult {
  Mlp policy;
  Mlp value;
  std::vector<double> mean_episode_reward;  // per iteration
};

/// Mean episodic reward of a deterministic policy, for before/after checks.
inline double ppo_evaluate_policy(const SystemModel& sys, const Mlp& policy, RewardMode mode,
                                  int episodes, int episode_len, std::mt19937_64& rng) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Eigen::VectorXd x = sample_uniform_box(sys.state_space(), 1, rng).col(0);
    for (int t = 0; t < episode_len; ++t) {
      x = sys.step(x, policy.forward(x), sys.noise().sample(rng));
      total += sys.reward(x, mode);
    }
  }
  return total / episodes;
}

/// Clipped-surrogate policy gradient pretraining. The policy network predicts
/// the mean of a Gaussian whose standard deviation follows the decay
/// schedule; advantages are plain discounted returns minus the value
/// baseline, normalized over the iteration buffer. Lipschitz regularization
/// (the hinge at rho_theta) is applied to the policy throughout.
inline PpoResult ppo_pretrain(const SystemModel& sys, RewardMode reward_mode,
                              const PpoConfig& cfg, const TrainConfig& reg,
                              std::uint64_t seed) {
  auto rng = make_rng(seed, kStreamPpo);
  Mlp policy = Mlp::make_standard(sys.state_dim(), sys.action_dim(), reg.hidden_layers,
                                  reg.hidden_units, Activation::identity, rng);
  Mlp value = Mlp::make_standard(sys.state_dim(), 1, reg.hidden_layers, reg.hidden_units,
                                 Activation::identity, rng);
  AdamState policy_opt(policy, cfg.lr);
  AdamState value_opt(value, cfg.lr);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PpoResult result{policy, value, {}};
  const int steps = cfg.episodes_per_iter * cfg.episode_len;
  const int adim = sys.action_dim();

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    const double sigma = ppo_gaussian_std(cfg, iter);

    // --- rollout ---
    Eigen::MatrixXd obs(sys.state_dim(), steps);
    Eigen::MatrixXd acts(adim, steps);
    Eigen::VectorXd rewards(steps);
    double episode_reward_sum = 0.0;
    int col = 0;
    for (int e = 0; e < cfg.episodes_per_iter; ++e) {
      Eigen::VectorXd x = sample_uniform_box(sys.state_space(), 1, rng).col(0);
      for (int t = 0; t < cfg.episode_len; ++t, ++col) {
        obs.col(col) = x;
        Eigen::VectorXd mean = policy.forward(x);
        Eigen::VectorXd a(adim);
        for (int k = 0; k < adim; ++k) a(k) = mean(k) + sigma * gauss(rng);
        acts.col(col) = a;
        x = sys.step(x, a, sys.noise().sample(rng));
        const double r = sys.reward(x, reward_mode);
        rewards(col) = r;
        episode_reward_sum += r;
      }
    }
    result.mean_episode_reward.push_back(episode_reward_sum / cfg.episodes_per_iter);

    // --- discounted returns and normalized advantages ---
    Eigen::VectorXd returns(steps);
    for (int e = 0; e < cfg.episodes_per_iter; ++e) {
      double g = 0.0;
      for (int t = cfg.episode_len - 1; t >= 0; --t) {
        const int i = e * cfg.episode_len + t;
        g = rewards(i) + cfg.gamma * g;
        returns(i) = g;
      }
    }
    const Eigen::VectorXd baseline = value.forward(obs).row(0);
    const Eigen::VectorXd adv = normalize_advantages(returns - baseline);

    // log-prob of the taken action under the rollout policy (constant terms
    // cancel in the ratio)
    const Eigen::MatrixXd rollout_mean = policy.forward(obs);
    Eigen::VectorXd logp_old(steps);
    for (int i = 0; i < steps; ++i) {
      logp_old(i) = -(acts.col(i) - rollout_mean.col(i)).squaredNorm() / (2 * sigma * sigma);
    }

    // --- policy epochs ---
    const int pe = iter == 1 ? cfg.policy_epochs_first : cfg.policy_epochs;
    std::vector<int> order(static_cast<std::size_t>(steps));
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < pe; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int start = 0; start < steps; start += cfg.minibatch) {
        const int count = std::min(cfg.minibatch, steps - start);
        Eigen::MatrixXd mb_obs(sys.state_dim(), count);
        Eigen::MatrixXd mb_act(adim, count);
        Eigen::VectorXd mb_adv(count), mb_logp(count);
        for (int i = 0; i < count; ++i) {
          const int src = order[static_cast<std::size_t>(start + i)];
          mb_obs.col(i) = obs.col(src);
          mb_act.col(i) = acts.col(src);
          mb_adv(i) = adv(src);
          mb_logp(i) = logp_old(src);
        }
        Mlp::Trace trace;
        const Eigen::MatrixXd mean = policy.forward(mb_obs, trace);
        Eigen::MatrixXd up = Eigen::MatrixXd::Zero(adim, count);
        for (int i = 0; i < count; ++i) {
          const double logp = -(mb_act.col(i) - mean.col(i)).squaredNorm() / (2 * sigma * sigma);
          const double ratio = std::exp(logp - mb_logp(i));
          const double clipped = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
          if (ratio * mb_adv(i) <= clipped * mb_adv(i)) {
            // unclipped branch active: d(-ratio*A)/dmean
            up.col(i) = -mb_adv(i) * ratio * (mb_act.col(i) - mean.col(i)) /
                        (sigma * sigma * count);
          }
        }
        GradientTape tape(policy);
        mlp_backward(policy, trace, up, tape);
        loss_lipschitz(policy, value, reg, &tape, nullptr);
        optimizer_step(policy_opt, policy, tape);
      }
    }

    // --- value epochs ---
    const int ve = iter == 1 ? cfg.value_epochs_first : cfg.value_epochs;
    for (int epoch = 0; epoch < ve; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      for (int start = 0; start < steps; start += cfg.minibatch) {
        const int count = std::min(cfg.minibatch, steps - start);
        Eigen::MatrixXd mb_obs(sys.state_dim(), count);
        Eigen::VectorXd mb_ret(count);
        for (int i = 0; i < count; ++i) {
          const int src = order[static_cast<std::size_t>(start + i)];
          mb_obs.col(i) = obs.col(src);
          mb_ret(i) = returns(src);
        }
        Mlp::Trace trace;
        const Eigen::MatrixXd pred = value.forward(mb_obs, trace);
        Eigen::MatrixXd up(1, count);
        for (int i = 0; i < count; ++i) up(0, i) = (pred(0, i) - mb_ret(i)) / count;
        GradientTape tape(value);
        mlp_backward(value, trace, up, tape);
        optimizer_step(value_opt, value, tape);
      }
    }
  }
  result.policy = policy;
  result.value = value;
  return result;
}

}  // namespace srsm
