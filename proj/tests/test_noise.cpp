#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "srsm/expected_value.hpp"
#include "srsm/noise.hpp"
#include "srsm/rng.hpp"
#include "srsm/system.hpp"

using namespace srsm;

TEST_CASE("triangular law basics", "[noise]") {
  CHECK(TriangularLaw::pdf(0.0) == 1.0);
  CHECK(TriangularLaw::pdf(1.5) == 0.0);
  CHECK(TriangularLaw::cdf(0.0) == 0.5);
  CHECK(TriangularLaw::cdf(-0.5) == Catch::Approx(0.125).margin(1e-15));
  CHECK(TriangularLaw::cdf(0.5) == Catch::Approx(0.875).margin(1e-15));
}

TEST_CASE("sampling matches triangular moments", "[noise][slow]") {
  NoiseSpec noise{1};
  auto rng = make_rng(71, kStreamTest);
  const int n = 1000000;
  double sum = 0.0, below_zero = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = noise.sample(rng)(0);
    REQUIRE(w >= -1.0);
    REQUIRE(w <= 1.0);
    sum += w;
    if (w <= 0.0) below_zero += 1.0;
  }
  const double sigma = std::sqrt(1.0 / 6.0);
  CHECK(std::abs(sum / n) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(below_zero / n - 0.5) <= 3.0 * 0.5 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("partition masses", "[noise]") {
  NoiseSpec noise{1};
  const NoisePartition two = partition(noise, 2);
  REQUIRE(two.size() == 2);
  CHECK(two.mass[0] == Catch::Approx(0.5).margin(1e-15));
  CHECK(two.mass[1] == Catch::Approx(0.5).margin(1e-15));

  const NoisePartition four = partition(noise, 4);
  const double expected[] = {0.125, 0.375, 0.375, 0.125};
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(four.mass[static_cast<std::size_t>(i)] - expected[i]) < 1e-12);
  }

  for (int k : {1, 3, 7, 16, 33}) {
    const NoisePartition part = partition(noise, k);
    double total = 0.0;
    for (double m : part.mass) total += m;
    CHECK(std::abs(total - 1.0) < 1e-12);
  }

  NoiseSpec noise2{2};
  const NoisePartition part2 = partition(noise2, 5);
  REQUIRE(part2.size() == 25);
  double total = 0.0;
  for (double m : part2.mass) total += m;
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(part2.maxvol == Catch::Approx(0.16).margin(1e-15));
}

namespace {
Mlp constant_net(int input_dim, double value) {
  Layer l;
  l.w = Eigen::MatrixXd::Zero(1, input_dim);
  l.b = Eigen::VectorXd::Constant(1, value);
  l.act = Activation::identity;
  return Mlp({l});
}
}  // namespace

TEST_CASE("expected bound on constant compositions", "[noise]") {
  auto sys = make_lds2d();
  auto rng = make_rng(73, kStreamTest);
  const PolicyHandle policy =
      PolicyHandle::from_mlp(Mlp::make_standard(2, 1, 1, 8, Activation::identity, rng));
  const Mlp v_const = constant_net(2, 4.5);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(2);

  const NoisePartition part = partition(sys->noise(), 4);
  CHECK(expected_upper_bound(v_const, *sys, policy, x, part, BoundMode::mass_weighted) ==
        Catch::Approx(4.5).margin(1e-12));

  // 2-D support: maxvol mode multiplies the constant by vol([-1,1]^2) = 4.
  CHECK(expected_upper_bound(v_const, *sys, policy, x, part, BoundMode::maxvol) ==
        Catch::Approx(4.0 * 4.5).margin(1e-12));
}

TEST_CASE("expected bound dominates Monte Carlo estimates", "[noise][slow]") {
  auto sys = make_lds2d();
  auto rng = make_rng(79, kStreamTest);
  const NoisePartition part = partition(sys->noise(), 16);
  for (int trial = 0; trial < 10; ++trial) {
    const Mlp v = Mlp::make_standard(2, 1, 2, 8, Activation::softplus, rng);
    const Mlp pi = Mlp::make_standard(2, 1, 2, 8, Activation::identity, rng);
    const PolicyHandle policy = PolicyHandle::from_mlp(pi);
    Eigen::VectorXd x(2);
    std::uniform_real_distribution<double> ux(-0.7, 0.7);
    x << ux(rng), ux(rng);
    const double bound = expected_upper_bound(v, *sys, policy, x, part);

    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    const Eigen::VectorXd u = policy(x);
    for (int i = 0; i < n; ++i) {
      const double val = v.forward(sys->step(x, u, sys->noise().sample(rng)))(0);
      sum += val;
      sumsq += val * val;
    }
    const double mean = sum / n;
    const double se = std::sqrt(std::max(sumsq / n - mean * mean, 0.0) / n);
    REQUIRE(bound >= mean - 4.0 * se);
  }
}

TEST_CASE("mass-weighted bound refines monotonically", "[noise]") {
  auto sys = make_lds2d();
  auto rng = make_rng(83, kStreamTest);
  const Mlp v = Mlp::make_standard(2, 1, 2, 16, Activation::softplus, rng);
  const PolicyHandle policy =
      PolicyHandle::from_mlp(Mlp::make_standard(2, 1, 2, 16, Activation::identity, rng));
  Eigen::VectorXd x(2);
  x << 0.3, -0.2;
  for (int k : {2, 4, 8}) {
    const double coarse =
        expected_upper_bound(v, *sys, policy, x, partition(sys->noise(), k));
    const double fine =
        expected_upper_bound(v, *sys, policy, x, partition(sys->noise(), 2 * k));
    REQUIRE(fine <= coarse + 1e-9);
  }
  // mass-weighted never exceeds the paper-literal volume-weighted form
  const NoisePartition part = partition(sys->noise(), 8);
  CHECK(expected_upper_bound(v, *sys, policy, x, part, BoundMode::mass_weighted) <=
        expected_upper_bound(v, *sys, policy, x, part, BoundMode::maxvol) + 1e-12);
}
