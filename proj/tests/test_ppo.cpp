#include <catch2/catch_amalgamated.hpp>

#include "srsm/ppo.hpp"
#include "srsm/rng.hpp"
#include "srsm/system.hpp"

using namespace srsm;

TEST_CASE("exploration std decays linearly between the published endpoints", "[ppo]") {
  PpoConfig cfg;
  CHECK(ppo_gaussian_std(cfg, 1) == 0.5);
  CHECK(ppo_gaussian_std(cfg, 50) == Catch::Approx(0.05).margin(1e-15));
  CHECK(ppo_gaussian_std(cfg, 80) == Catch::Approx(0.05).margin(1e-15));
  // linear interpolation between (1, 0.5) and (50, 0.05)
  const double expected25 = 0.5 + (0.05 - 0.5) * (25.0 - 1.0) / (50.0 - 1.0);
  CHECK(ppo_gaussian_std(cfg, 25) == Catch::Approx(expected25).margin(1e-15));
  // midpoints of neighbors average to the midpoint value
  CHECK(0.5 * (ppo_gaussian_std(cfg, 10) + ppo_gaussian_std(cfg, 12)) ==
        Catch::Approx(ppo_gaussian_std(cfg, 11)).margin(1e-12));
}

TEST_CASE("constant advantages normalize to zero", "[ppo]") {
  const Eigen::VectorXd adv = Eigen::VectorXd::Constant(64, 3.7);
  const Eigen::VectorXd out = normalize_advantages(adv);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);

  const Eigen::VectorXd two = (Eigen::VectorXd(4) << 1.0, -1.0, 1.0, -1.0).finished();
  const Eigen::VectorXd norm = normalize_advantages(two);
  CHECK(norm.mean() == Catch::Approx(0.0).margin(1e-12));
  CHECK(norm(0) == Catch::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ppo improves the indicator reward on lds2d", "[ppo][slow]") {
  auto sys = make_lds2d();
  PpoConfig cfg;
  TrainConfig reg;
  reg.hidden_units = 64;  // smaller nets keep the oracle run quick

  auto eval_rng = make_rng(0, kStreamTest);
  auto init_rng = make_rng(0, kStreamPpo);
  const Mlp untrained = Mlp::make_standard(sys->state_dim(), sys->action_dim(),
                                           reg.hidden_layers, reg.hidden_units,
                                           Activation::identity, init_rng);
  const double before =
      ppo_evaluate_policy(*sys, untrained, RewardMode::indicator, 50, 200, eval_rng);

  const PpoResult result = ppo_pretrain(*sys, RewardMode::indicator, cfg, reg, 0);
  const double after =
      ppo_evaluate_policy(*sys, result.policy, RewardMode::indicator, 50, 200, eval_rng);
  INFO("mean episodic reward before " << before << " after " << after);
  CHECK(after > before);

  // the trained policy respects the published Lipschitz target region
  CHECK(network_lipschitz(result.policy) < 10.0 * reg.rho_theta);
}
