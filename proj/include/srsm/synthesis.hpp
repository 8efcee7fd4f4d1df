#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "srsm/certificate.hpp"
#include "srsm/grid.hpp"
#include "srsm/learner.hpp"
#include "srsm/parallel.hpp"
#include "srsm/ppo.hpp"
#include "srsm/rng.hpp"
#include "srsm/verifier.hpp"

namespace srsm {

struct RunConfig {
  std::string env_id = "lds2d";
  nlohmann::json env_spec;  // non-null: custom affine system
  double tau = 0.0007;
  TrainConfig train;
  PpoConfig ppo;
  int cells_per_dim = 16;
  BoundMode mode = BoundMode::mass_weighted;
  int delta_noise_cells = 8;
  double timeout_s = 14400.0;
  int max_iterations = 12;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: hardware concurrency
  std::int64_t cell_budget = 100'000'000;
  std::string out_dir = "srsm_out";
  bool quiet = false;

  int effective_workers() const { return workers > 0 ? workers : default_worker_count(); }

  nlohmann::json to_json() const {
    return {{"env", env_id},
            {"env_spec", env_spec},
            {"tau", tau},
            {"train", train.to_json()},
            {"ppo", ppo.to_json()},
            {"cells_per_dim", cells_per_dim},
            {"mode", bound_mode_name(mode)},
            {"delta_noise_cells", delta_noise_cells},
            {"timeout_s", timeout_s},
            {"max_iterations", max_iterations},
            {"seed", seed},
            {"workers", workers},
            {"cell_budget", cell_budget}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.env_id = j.value("env", c.env_id);
    c.env_spec = j.value("env_spec", nlohmann::json());
    c.tau = j.value("tau", c.tau);
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("ppo")) c.ppo = PpoConfig::from_json(j.at("ppo"));
    c.cells_per_dim = j.value("cells_per_dim", c.cells_per_dim);
    if (j.contains("mode")) c.mode = bound_mode_from_name(j.at("mode").get<std::string>());
    c.delta_noise_cells = j.value("delta_noise_cells", c.delta_noise_cells);
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_iterations = j.value("max_iterations", c.max_iterations);
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.cell_budget = j.value("cell_budget", c.cell_budget);
    return c;
  }

  std::shared_ptr<SystemModel> make_env() const {
    if (!env_spec.is_null() && env_spec.is_object()) return system_from_spec(env_spec);
    return make_system(env_id);
  }

  VerifierConfig verifier_config() const {
    VerifierConfig v;
    v.cells_per_dim = cells_per_dim;
    v.mode = mode;
    v.delta_noise_cells = delta_noise_cells;
    v.workers = effective_workers();
    v.cell_budget = cell_budget;
    return v;
  }
};

enum class SynthesisStatus { certified, unknown };

struct SynthesisResult {
  SynthesisStatus status = SynthesisStatus::unknown;
  std::optional<Certificate> certificate;
  int iterations = 0;
  double elapsed_s = 0.0;
  double final_tau = 0.0;
  std::string certificate_path;
};

namespace detail {

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

inline Certificate assemble_certificate(const RunConfig& cfg, const SystemModel& sys,
                                        const Mlp& policy, const Mlp& v, const Grid& grid,
                                        const VerifyOutcome& out, int workers) {
  Certificate cert;
  cert.env_id = cfg.env_id;
  if (!cfg.env_spec.is_null() && cfg.env_spec.is_object()) cert.env_spec = cfg.env_spec;
  cert.policy = policy;
  cert.v = v;
  cert.tau = grid.tau();
  cert.l_v = out.l_v;
  cert.l_pi = out.l_pi;
  cert.l_f = sys.lipschitz_f();
  cert.k = out.k;
  cert.delta_theta = out.delta_theta;
  cert.epsilon = out.epsilon;
  cert.delta = out.delta;
  cert.p = escape_probability(cert.m_level, out.l_v, out.delta_theta, out.delta);
  cert.gamma = gamma_sup(v, sys, grid, workers);
  cert.cells_per_dim = cfg.cells_per_dim;
  cert.mode = cfg.mode;
  cert.delta_noise_cells = cfg.delta_noise_cells;
  cert.config_hash = config_fingerprint(cfg.to_json());
  return cert;
}

inline void write_checkpoint(const std::string& dir, int iteration, const Learner& learner,
                             double tau) {
  nlohmann::json buffer = nlohmann::json::array();
  for (const auto& x : learner.buffer()) {
    buffer.push_back(std::vector<double>(x.data(), x.data() + x.size()));
  }
  nlohmann::json j = {{"iteration", iteration},
                      {"tau", tau},
                      {"V", learner.value().to_json()},
                      {"buffer", buffer}};
  try {
    j["policy"] = learner.policy().to_json();
  } catch (const std::logic_error&) {
    // fixed non-network policy: nothing to checkpoint
  }
  write_json(dir + "/checkpoint_" + std::to_string(iteration) + ".json", j);
}

struct LoopDeps {
  std::shared_ptr<SystemModel> sys;
  PolicyHandle policy;
  std::optional<Mlp> initial_v;
  bool policy_trainable = true;
};

/// Shared learner-verifier loop behind both synthesis and the
/// verification-only mode.
inline SynthesisResult run_loop(const RunConfig& cfg, LoopDeps deps) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const int workers = cfg.effective_workers();
  fs::create_directories(cfg.out_dir);

  SynthesisResult result;
  auto& sys = *deps.sys;
  Grid grid = Grid::build(sys.state_space(), cfg.tau, cfg.cell_budget);
  VerifierConfig vcfg = cfg.verifier_config();

  auto log = [&](const std::string& line) {
    if (!cfg.quiet) std::cerr << "[srsm] " << line << "\n";
  };

  // Verification-only runs that already carry a candidate get one verify
  // pass before any training.
  if (deps.initial_v.has_value()) {
    const VerifyOutcome out = verify(*deps.initial_v, deps.policy, sys, grid, vcfg);
    log("initial candidate: " + std::string(verify_status_name(out.status)));
    if (out.status == VerifyStatus::certified) {
      result.status = SynthesisStatus::certified;
      result.final_tau = grid.tau();
      result.elapsed_s = elapsed();
      if (deps.policy.is_mlp()) {
        Certificate cert = assemble_certificate(cfg, sys, deps.policy.mlp(), *deps.initial_v,
                                                grid, out, workers);
        result.certificate = cert;
        result.certificate_path = cfg.out_dir + "/certificate.json";
        write_json(result.certificate_path, cert.to_json());
      } else {
        write_json(cfg.out_dir + "/verify_report.json",
                   {{"outcome", out.to_json()}, {"V", deps.initial_v->to_json()}});
      }
      return result;
    }
  }

  auto rng = make_rng(cfg.seed, kStreamInit);
  Mlp v_net = deps.initial_v.has_value()
                  ? *deps.initial_v
                  : Mlp::make_standard(sys.state_dim(), 1, cfg.train.hidden_layers,
                                       cfg.train.hidden_units, Activation::softplus, rng);

  Learner learner(deps.sys, cfg.train, deps.policy, v_net,
                  grid.seed_training_set(cfg.train.subgrid_factor), cfg.seed,
                  deps.policy_trainable);
  log("seeded training set with " + std::to_string(learner.buffer().size()) + " points");

  bool hard_prev = false;
  for (int iteration = 1; iteration <= cfg.max_iterations; ++iteration) {
    if (elapsed() > cfg.timeout_s) break;
    try {
      Grid refined = grid.refine(iteration, hard_prev, cfg.cell_budget);
      if (refined.tau() != grid.tau()) {
        log("mesh refined to tau = " + std::to_string(refined.tau()));
        grid = refined;
      }
    } catch (const std::runtime_error& e) {
      log(std::string("refinement skipped: ") + e.what());
    }

    const LossBreakdown loss = learner.train_iteration(iteration - 1, grid.tau());
    log("iteration " + std::to_string(iteration) + ": loss " + std::to_string(loss.total()) +
        " (cond2 " + std::to_string(loss.cond2) + ", cond3 " + std::to_string(loss.cond3) +
        ", ltM " + std::to_string(loss.lt_m) + ", lip " + std::to_string(loss.lipschitz) + ")");
    write_checkpoint(cfg.out_dir, iteration, learner, grid.tau());
    if (elapsed() > cfg.timeout_s) {
      result.iterations = iteration;
      break;
    }

    const PolicyHandle policy = learner.policy_handle();
    const VerifyOutcome out = verify(learner.value(), policy, sys, grid, vcfg);
    result.iterations = iteration;
    log("iteration " + std::to_string(iteration) + ": verify " +
        verify_status_name(out.status) + ", |X>=M| = " + std::to_string(out.num_ge_m) +
        ", violations = " + std::to_string(out.num_violations) + " (hard " +
        std::to_string(out.num_hard) + ", refinement resolved " +
        std::to_string(out.num_refined_resolved) + "), L_V = " + std::to_string(out.l_v) +
        ", L_pi = " + std::to_string(out.l_pi) + ", tau*K = " +
        std::to_string(grid.tau() * out.k));

    if (out.status == VerifyStatus::certified) {
      result.status = SynthesisStatus::certified;
      result.final_tau = grid.tau();
      result.elapsed_s = elapsed();
      if (policy.is_mlp()) {
        Certificate cert =
            assemble_certificate(cfg, sys, policy.mlp(), learner.value(), grid, out, workers);
        result.certificate = cert;
        result.certificate_path = cfg.out_dir + "/certificate.json";
        write_json(result.certificate_path, cert.to_json());
      } else {
        // Non-network policies cannot be serialized into a certificate;
        // record the verified outcome and the learned network instead.
        write_json(cfg.out_dir + "/verify_report.json",
                   {{"outcome", out.to_json()}, {"V", learner.value().to_json()}});
      }
      grid.export_values_csv(
          cfg.out_dir + "/value_grid.csv",
          [&](const Eigen::VectorXd& x) { return learner.value().forward(x)(0); },
          std::max<std::int64_t>(grid.counts()[0] / 200, 1));
      return result;
    }
    if (out.status == VerifyStatus::counterexamples) {
      std::vector<Eigen::VectorXd> points;
      points.reserve(out.counterexamples.size());
      for (const auto& ce : out.counterexamples) points.push_back(ce.center);
      learner.update_buffer(points, grid);
      hard_prev = out.num_hard > 0;
      log("buffer now " + std::to_string(learner.buffer().size()) + " points");
    } else {
      hard_prev = false;
    }
  }

  result.status = SynthesisStatus::unknown;
  result.elapsed_s = elapsed();
  result.final_tau = grid.tau();
  write_checkpoint(cfg.out_dir, result.iterations + 1000, learner, grid.tau());
  return result;
}

}  // namespace detail

/// Algorithm: PPO policy initialization, then the learner-verifier loop
/// until certification or timeout.
inline SynthesisResult synthesize(const RunConfig& cfg) {
  auto sys = cfg.make_env();
  const auto t0 = std::chrono::steady_clock::now();
  const PpoResult ppo = ppo_pretrain(*sys, sys->default_reward_mode(), cfg.ppo, cfg.train,
                                     cfg.seed);
  if (!cfg.quiet) {
    std::cerr << "[srsm] ppo pretraining done, mean episodic reward "
              << (ppo.mean_episode_reward.empty() ? 0.0 : ppo.mean_episode_reward.back())
              << "\n";
  }
  detail::LoopDeps deps;
  deps.sys = sys;
  deps.policy = PolicyHandle::from_mlp(ppo.policy);
  deps.policy_trainable = true;
  RunConfig adjusted = cfg;
  adjusted.timeout_s =
      cfg.timeout_s -
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  SynthesisResult result = detail::run_loop(adjusted, std::move(deps));
  result.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

/// Verification-only mode: the policy is fixed (a network, or any map with a
/// user-supplied Lipschitz constant); only the certificate network is
/// learned. An optional initial candidate is verified before any training.
inline SynthesisResult verify_fixed_policy(const RunConfig& cfg, PolicyHandle policy,
                                           std::optional<Mlp> initial_v = std::nullopt) {
  detail::LoopDeps deps;
  deps.sys = cfg.make_env();
  deps.policy = std::move(policy);
  deps.initial_v = std::move(initial_v);
  deps.policy_trainable = false;
  return detail::run_loop(cfg, std::move(deps));
}

}  // namespace srsm
