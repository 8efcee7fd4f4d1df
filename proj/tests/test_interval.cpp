#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "srsm/interval.hpp"
#include "srsm/rng.hpp"

using namespace srsm;

TEST_CASE("affine propagation matches hand results", "[interval]") {
  Eigen::MatrixXd w(1, 1);
  w << 2.0;
  Eigen::VectorXd b(1);
  b << 1.0;
  Box out = affine_prop(w, b, Box{{0.0, 1.0}});
  CHECK(out[0].lo == Catch::Approx(1.0).margin(1e-15));
  CHECK(out[0].hi == Catch::Approx(3.0).margin(1e-15));

  Eigen::MatrixXd w2(1, 2);
  w2 << 1.0, -1.0;
  Eigen::VectorXd b2 = Eigen::VectorXd::Zero(1);
  Box out2 = affine_prop(w2, b2, Box{{0.0, 1.0}, {0.0, 1.0}});
  CHECK(out2[0].lo == Catch::Approx(-1.0).margin(1e-15));
  CHECK(out2[0].hi == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("affine propagation sound under sampling", "[interval]") {
  auto rng = make_rng(7, kStreamTest);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    const int in = 1 + static_cast<int>(rng() % 4);
    const int out = 1 + static_cast<int>(rng() % 4);
    Eigen::MatrixXd w(out, in);
    Eigen::VectorXd b(out);
    for (int j = 0; j < out; ++j) {
      for (int i = 0; i < in; ++i) w(j, i) = u(rng);
      b(j) = u(rng);
    }
    Box box;
    for (int i = 0; i < in; ++i) {
      double a = u(rng), c = u(rng);
      box.emplace_back(std::min(a, c), std::max(a, c));
    }
    const Box img = affine_prop(w, b, box);
    for (int s = 0; s < 50; ++s) {
      Eigen::VectorXd x(in);
      for (int i = 0; i < in; ++i) {
        std::uniform_real_distribution<double> ux(box[i].lo, box[i].hi);
        x(i) = ux(rng);
      }
      const Eigen::VectorXd y = w * x + b;
      for (int j = 0; j < out; ++j) {
        REQUIRE(y(j) >= img[j].lo - 1e-9);
        REQUIRE(y(j) <= img[j].hi + 1e-9);
      }
    }
  }
}

TEST_CASE("activation ranges", "[interval]") {
  CHECK(interval_relu({-1.0, 2.0}).lo == 0.0);
  CHECK(interval_relu({-1.0, 2.0}).hi == 2.0);

  const Interval s = interval_sin({0.0, detail::kPi});
  CHECK(s.lo == Catch::Approx(0.0).margin(1e-12));
  CHECK(s.hi == 1.0);  // interior maximum at pi/2

  const Interval sp = interval_softplus({0.0, 0.0});
  CHECK(sp.lo == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(sp.width() == 0.0);

  const Interval c = interval_clamp({-3.0, 0.5}, -1.0, 1.0);
  CHECK(c.lo == -1.0);
  CHECK(c.hi == 0.5);
}

TEST_CASE("interval sin sound over random ranges", "[interval]") {
  auto rng = make_rng(11, kStreamTest);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 500; ++trial) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const Interval r = interval_sin({a, b});
    for (int s = 0; s <= 64; ++s) {
      const double x = a + (b - a) * s / 64.0;
      REQUIRE(std::sin(x) >= r.lo - 1e-12);
      REQUIRE(std::sin(x) <= r.hi + 1e-12);
    }
  }
}

TEST_CASE("interval invariants enforced", "[interval]") {
  CHECK_THROWS(Interval(1.0, 0.0));
  CHECK_THROWS(Interval(0.0, std::numeric_limits<double>::infinity()));
}
