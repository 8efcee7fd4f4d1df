#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "srsm/bound_prop.hpp"
#include "srsm/rng.hpp"

using namespace srsm;

namespace {
Box random_box(int dim, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Box b;
  for (int i = 0; i < dim; ++i) {
    double a = u(rng), c = u(rng);
    if (a > c) std::swap(a, c);
    b.emplace_back(a, c);
  }
  return b;
}
}  // namespace

TEST_CASE("net bounds on simple nets", "[bound_prop]") {
  Layer l;
  l.w = Eigen::MatrixXd::Identity(1, 1);
  l.b = Eigen::VectorXd::Zero(1);
  l.act = Activation::identity;
  const Mlp ident({l});
  const Box out = net_bounds(ident, Box{{-1.0, 1.0}});
  CHECK(out[0].lo == Catch::Approx(-1.0).margin(1e-15));
  CHECK(out[0].hi == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("softplus-output nets have nonnegative lower bounds", "[bound_prop]") {
  auto rng = make_rng(31, kStreamTest);
  for (int t = 0; t < 20; ++t) {
    const Mlp v = Mlp::make_standard(2, 1, 2, 8, Activation::softplus, rng);
    const Box out = net_bounds(v, random_box(2, 5.0, rng));
    REQUIRE(out[0].lo >= 0.0);
  }
}

TEST_CASE("bounds contain grid-sampled extrema", "[bound_prop]") {
  auto rng = make_rng(37, kStreamTest);
  for (int t = 0; t < 50; ++t) {
    const Mlp net = Mlp::make_standard(2, 1, 2, 8,
                                       t % 2 ? Activation::identity : Activation::softplus, rng);
    const Box box = random_box(2, 2.0, rng);
    const Box out = net_bounds(net, box);
    for (int i = 0; i <= 20; ++i) {
      for (int j = 0; j <= 20; ++j) {
        Eigen::VectorXd x(2);
        x << box[0].lo + box[0].width() * i / 20.0, box[1].lo + box[1].width() * j / 20.0;
        const double y = net.forward(x)(0);
        REQUIRE(y >= out[0].lo - 1e-9);
        REQUIRE(y <= out[0].hi + 1e-9);
      }
    }
  }
}

TEST_CASE("bounds are monotone in the box", "[bound_prop]") {
  auto rng = make_rng(41, kStreamTest);
  for (int t = 0; t < 30; ++t) {
    const Mlp net = Mlp::make_standard(3, 2, 2, 8, Activation::identity, rng);
    const Box outer = random_box(3, 2.0, rng);
    Box inner = outer;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& iv : inner) {
      const double a = iv.lo + iv.width() * 0.25 * u(rng);
      const double b = iv.hi - iv.width() * 0.25 * u(rng);
      iv = Interval(a, b);
    }
    const Box big = net_bounds(net, outer);
    const Box small = net_bounds(net, inner);
    for (std::size_t d = 0; d < big.size(); ++d) {
      REQUIRE(small[d].lo >= big[d].lo - 1e-12);
      REQUIRE(small[d].hi <= big[d].hi + 1e-12);
    }
  }
}

TEST_CASE("degenerate boxes stay thin through wide nets", "[bound_prop]") {
  auto rng = make_rng(43, kStreamTest);
  const Mlp net = Mlp::make_standard(2, 1, 2, 128, Activation::softplus, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd x(2);
    x << u(rng), u(rng);
    const Box out = net_bounds(net, point_box(x));
    REQUIRE(out[0].width() <= 1e-9);
    const double y = net.forward(x)(0);
    REQUIRE(y >= out[0].lo - 1e-9);
    REQUIRE(y <= out[0].hi + 1e-9);
  }
}

TEST_CASE("batched evaluator agrees with the scalar path", "[bound_prop]") {
  auto rng = make_rng(47, kStreamTest);
  const Mlp net = Mlp::make_standard(2, 1, 2, 16, Activation::softplus, rng);
  const NetBoundEvaluator eval(net);
  BoxBatch batch(2, 64);
  std::vector<Box> boxes;
  for (Eigen::Index i = 0; i < 64; ++i) {
    boxes.push_back(random_box(2, 3.0, rng));
    batch.set(i, boxes.back());
  }
  const BoxBatch out = eval.bounds(batch);
  for (Eigen::Index i = 0; i < 64; ++i) {
    const Box single = net_bounds(net, boxes[static_cast<std::size_t>(i)]);
    REQUIRE(out.lo(0, i) == Catch::Approx(single[0].lo).margin(1e-12));
    REQUIRE(out.hi(0, i) == Catch::Approx(single[0].hi).margin(1e-12));
  }
}

TEST_CASE("activation_prop handles the nonstandard activations", "[bound_prop]") {
  const Box s = activation_prop("sin", Box{{0.0, detail::kPi}});
  CHECK(s[0].hi == 1.0);
  const Box c = activation_prop("clamp", Box{{-4.0, 0.25}});
  CHECK(c[0].lo == -1.0);
  CHECK(c[0].hi == 0.25);
  CHECK_THROWS(activation_prop("gelu", Box{{0.0, 1.0}}));
}
