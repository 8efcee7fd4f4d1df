#include <catch2/catch_amalgamated.hpp>

#include "srsm/rng.hpp"
#include "srsm/system.hpp"
#include "srsm/verifier.hpp"

using namespace srsm;

namespace {

Mlp constant_net(int input_dim, double value) {
  Layer l;
  l.w = Eigen::MatrixXd::Zero(1, input_dim);
  l.b = Eigen::VectorXd::Constant(1, value);
  l.act = Activation::identity;
  return Mlp({l});
}

// V(x) = relu(2x - 0.5) + relu(-2x - 0.5) + 0.1, roughly 2|x| - 0.4 away from
// the origin and 0.1 near it.
Mlp vee_net() {
  Layer l1;
  l1.w = Eigen::MatrixXd(2, 1);
  l1.w << 2.0, -2.0;
  l1.b = Eigen::VectorXd::Constant(2, -0.5);
  l1.act = Activation::relu;
  Layer l2;
  l2.w = Eigen::MatrixXd(1, 2);
  l2.w << 1.0, 1.0;
  l2.b = Eigen::VectorXd::Constant(1, 0.1);
  l2.act = Activation::identity;
  return Mlp({l1, l2});
}

// 1-D contraction x' = x/2 + 0.01 w with a tiny action channel.
std::shared_ptr<SystemModel> contraction_system() {
  Eigen::MatrixXd a(1, 1), b(1, 1), c(1, 1);
  a << 0.5;
  b << 0.0;
  c << 0.01;
  return std::make_shared<AffineSystem>("contraction", a, b, c, Box{{-1.0, 1.0}},
                                        std::vector<Box>{}, Box{{-0.1, 0.1}},
                                        RewardMode::indicator);
}

PolicyHandle zero_policy(int state_dim, int action_dim) {
  Layer l;
  l.w = Eigen::MatrixXd::Zero(action_dim, state_dim);
  l.b = Eigen::VectorXd::Zero(action_dim);
  l.act = Activation::identity;
  return PolicyHandle::from_mlp(Mlp({l}));
}

}  // namespace

TEST_CASE("collect_geM on constant candidates", "[verifier]") {
  const Grid grid = Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 0.05);
  CHECK(static_cast<std::int64_t>(collect_geM(constant_net(2, 2.0), grid, 1.0).indices.size()) ==
        grid.num_cells());
  CHECK(collect_geM(constant_net(2, 0.5), grid, 1.0).indices.empty());
}

TEST_CASE("collect_geM over-approximates the sampled sublevel boundary", "[verifier]") {
  auto rng = make_rng(301, kStreamTest);
  const Mlp v = Mlp::make_standard(2, 1, 2, 16, Activation::softplus, rng);
  const Grid grid = Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 0.02);
  const CellSet set = collect_geM(v, grid, 1.0);
  std::vector<char> member(static_cast<std::size_t>(grid.num_cells()), 0);
  for (std::int64_t idx : set.indices) member[static_cast<std::size_t>(idx)] = 1;

  std::uniform_real_distribution<double> u(-0.7, 0.7);
  for (int t = 0; t < 100000; ++t) {
    Eigen::VectorXd x(2);
    x << u(rng), u(rng);
    if (v.forward(x)(0) >= 1.0) {
      std::int64_t linear = 0;
      for (int d = 1; d >= 0; --d) {
        const double h = grid.spacing()[static_cast<std::size_t>(d)];
        auto i = static_cast<std::int64_t>((x(d) + 0.7) / h);
        i = std::min(i, grid.counts()[static_cast<std::size_t>(d)] - 1);
        linear = linear * grid.counts()[static_cast<std::size_t>(d)] + i;
      }
      REQUIRE(member[static_cast<std::size_t>(linear)] == 1);
    }
  }
}

TEST_CASE("constant V makes every checked center a counterexample", "[verifier]") {
  auto sys = contraction_system();
  const Grid grid = Grid::build(sys->state_space(), 0.05);
  const Mlp v = constant_net(1, 2.0);
  const CellSet cells = collect_geM(v, grid, 1.0);
  const NoisePartition part = partition(sys->noise(), 4);
  const DecreaseCheckResult r =
      check_decrease(v, zero_policy(1, 1), *sys, grid, cells, 1.0, grid.tau(), part);
  CHECK(r.counterexamples.size() == cells.indices.size());
  for (const auto& ce : r.counterexamples) CHECK(ce.hard);  // bound = V exactly
}

TEST_CASE("contraction system verifies away from the origin", "[verifier]") {
  auto sys = contraction_system();
  const Grid grid = Grid::build(sys->state_space(), 0.005);
  const Mlp v = vee_net();
  const PolicyHandle policy = zero_policy(1, 1);
  const double l_v = network_lipschitz(v);
  const double k = compose_K(l_v, sys->lipschitz_f(), policy.lipschitz());
  const NoisePartition part = partition(sys->noise(), 8);

  const CellSet cells = collect_geM(v, grid, 1.0);
  REQUIRE_FALSE(cells.indices.empty());
  const DecreaseCheckResult r =
      check_decrease(v, policy, *sys, grid, cells, k, grid.tau(), part);
  CHECK(r.counterexamples.empty());
  CHECK(r.min_gap > 0.0);

  const double eps =
      extract_epsilon(v, policy, *sys, grid, cells, k, grid.tau(), part);
  CHECK(eps == Catch::Approx(r.min_gap).margin(1e-15));

  // Monte Carlo cross-check of the expectation bound at one checked center.
  auto rng = make_rng(303, kStreamTest);
  const Eigen::VectorXd center = grid.center(cells.indices.front());
  const double bound = expected_upper_bound(v, *sys, policy, center, part);
  double mc = 0.0;
  const int n = 200000;
  const Eigen::VectorXd u = policy(center);
  for (int i = 0; i < n; ++i) {
    mc += v.forward(sys->step(center, u, sys->noise().sample(rng)))(0);
  }
  mc /= n;
  CHECK(bound >= mc - 1e-3);
  // and the center's gap is consistent with the bound
  CHECK(v.forward(center)(0) - grid.tau() * k - bound > 0.0);
}

TEST_CASE("epsilon extraction demands a clean cell set", "[verifier]") {
  auto sys = contraction_system();
  const Grid grid = Grid::build(sys->state_space(), 0.05);
  const Mlp v = constant_net(1, 2.0);
  const CellSet cells = collect_geM(v, grid, 1.0);
  const NoisePartition part = partition(sys->noise(), 4);
  CHECK_THROWS(extract_epsilon(v, zero_policy(1, 1), *sys, grid, cells, 1.0, grid.tau(), part));
}

TEST_CASE("epsilon grows under noise partition refinement", "[verifier]") {
  auto sys = contraction_system();
  const Grid grid = Grid::build(sys->state_space(), 0.005);
  const Mlp v = vee_net();
  const PolicyHandle policy = zero_policy(1, 1);
  const double k = compose_K(network_lipschitz(v), sys->lipschitz_f(), policy.lipschitz());
  const CellSet cells = collect_geM(v, grid, 1.0);
  double prev = -1.0;
  for (int cells_per_dim : {2, 4, 8, 16}) {
    const double eps = extract_epsilon(v, policy, *sys, grid, cells, k, grid.tau(),
                                       partition(sys->noise(), cells_per_dim));
    CHECK(eps >= prev - 1e-9);
    prev = eps;
  }
}

TEST_CASE("condition 3 checks and delta extraction", "[verifier]") {
  auto sys = make_lds2d();
  const Grid grid = Grid::build(sys->state_space(), 0.01);

  // V constant at M + L_V * Delta + 1 passes with slack exactly 1.
  const Condition3Result good =
      check_condition3(constant_net(2, 1.0 + 2.0 * 0.1 + 1.0), grid, *sys, 1.0, 2.0, 0.1);
  CHECK(good.ok);
  CHECK(good.delta == Catch::Approx(1.0).margin(1e-12));

  const Condition3Result bad = check_condition3(constant_net(2, 0.0), grid, *sys, 1.0, 2.0, 0.1);
  CHECK_FALSE(bad.ok);
  CHECK_FALSE(bad.failing.empty());
  const CellSet complement = grid.cells_intersecting(sys->excluded_regions());
  CHECK(bad.failing.size() == std::min<std::size_t>(complement.indices.size(), 4096));
  // both benchmarks have a nonempty complement, so a vacuous pass is impossible
  CHECK_FALSE(complement.indices.empty());
}

TEST_CASE("verify traces the V=0 candidate to condition3_failed", "[verifier]") {
  auto sys = make_lds2d();
  const Grid grid = Grid::build(sys->state_space(), 0.05);
  VerifierConfig cfg;
  cfg.workers = 2;
  const VerifyOutcome out = verify(constant_net(2, 0.0), zero_policy(2, 1), *sys, grid, cfg);
  CHECK(out.status == VerifyStatus::condition3_failed);
  CHECK(out.num_ge_m == 0);  // empty decrease set passes vacuously
  CHECK_FALSE(out.condition3_failing.empty());
}

TEST_CASE("verify agrees with the literal operation composition", "[verifier]") {
  auto sys = contraction_system();
  const Grid grid = Grid::build(sys->state_space(), 0.005);
  const Mlp v = vee_net();
  const PolicyHandle policy = zero_policy(1, 1);
  VerifierConfig cfg;
  cfg.cells_per_dim = 8;
  const VerifyOutcome fast = verify(v, policy, *sys, grid, cfg);
  // no excluded regions: condition 3 is vacuous, so this certifies
  REQUIRE(fast.status == VerifyStatus::certified);

  const CellSet cells = collect_geM(v, grid, 1.0);
  const double literal_eps = extract_epsilon(v, policy, *sys, grid, cells, fast.k, grid.tau(),
                                             partition(sys->noise(), cfg.cells_per_dim));
  CHECK(fast.epsilon > 0.0);
  // the screened fast path may only under-report the margin
  CHECK(fast.epsilon <= literal_eps + 1e-12);
}

TEST_CASE("verify is deterministic across repeated runs and worker counts", "[verifier]") {
  auto rng = make_rng(307, kStreamTest);
  auto sys = make_lds2d();
  const Grid grid = Grid::build(sys->state_space(), 0.02);
  const Mlp v = Mlp::make_standard(2, 1, 2, 32, Activation::softplus, rng);
  const Mlp pi = Mlp::make_standard(2, 1, 2, 32, Activation::identity, rng);
  VerifierConfig cfg1;
  cfg1.workers = 1;
  VerifierConfig cfg4 = cfg1;
  cfg4.workers = 4;
  const VerifyOutcome a = verify(v, PolicyHandle::from_mlp(pi), *sys, grid, cfg1);
  const VerifyOutcome b = verify(v, PolicyHandle::from_mlp(pi), *sys, grid, cfg4);
  CHECK(a.to_json().dump() == b.to_json().dump());
}

TEST_CASE("non-network policies need a Lipschitz constant", "[verifier]") {
  CHECK_THROWS(PolicyHandle::from_function(
      [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x); }, 2, 2, std::nullopt));
  const PolicyHandle linear = PolicyHandle::from_function(
      [](const Eigen::VectorXd& x) { return Eigen::VectorXd(-x.head(1)); }, 2, 1, 1.0);
  CHECK(linear.lipschitz() == 1.0);
  Eigen::VectorXd x(2);
  x << 0.4, 0.1;
  CHECK(linear(x)(0) == -0.4);
  // interval form: center +- L * radius
  const Box b = linear.bounds(Box{{0.0, 0.2}, {0.0, 0.2}});
  CHECK(b[0].lo == Catch::Approx(-0.1 - 0.2).margin(1e-12));
  CHECK(b[0].hi == Catch::Approx(-0.1 + 0.2).margin(1e-12));
}
