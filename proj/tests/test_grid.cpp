#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "srsm/grid.hpp"
#include "srsm/rng.hpp"
#include "srsm/system.hpp"

using namespace srsm;

TEST_CASE("1-D grid arithmetic", "[grid]") {
  const Grid g = Grid::build(Box{{0.0, 1.0}}, 0.25);
  REQUIRE(g.num_cells() == 2);
  CHECK(g.center(0)(0) == Catch::Approx(0.25).margin(1e-15));
  CHECK(g.center(1)(0) == Catch::Approx(0.75).margin(1e-15));
  CHECK(g.spacing()[0] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("paper-scale cell counts", "[grid]") {
  const Grid g = Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 0.0007);
  CHECK(g.counts()[0] == 2000);
  CHECK(g.counts()[1] == 2000);
  CHECK(g.num_cells() == 4000000);
}

TEST_CASE("mesh property on random points", "[grid]") {
  const Box bounds{{-0.7, 0.7}, {-0.7, 0.7}};
  const double tau = 0.013;
  const Grid g = Grid::build(bounds, tau);
  auto rng = make_rng(101, kStreamTest);
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  for (int t = 0; t < 100000; ++t) {
    Eigen::VectorXd x(2);
    x << u(rng), u(rng);
    // nearest center via per-dimension cell lookup
    double dist = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double h = g.spacing()[static_cast<std::size_t>(d)];
      auto i = static_cast<std::int64_t>((x(d) - bounds[static_cast<std::size_t>(d)].lo) / h);
      i = std::min(i, g.counts()[static_cast<std::size_t>(d)] - 1);
      const double center = bounds[static_cast<std::size_t>(d)].lo + (i + 0.5) * h;
      dist += std::abs(x(d) - center);
    }
    REQUIRE(dist < tau);
  }
}

TEST_CASE("tiling covers the volume", "[grid]") {
  const Grid g = Grid::build(Box{{-1.0, 1.0}, {-0.5, 0.5}}, 0.07);
  double total = 0.0;
  for (std::int64_t i = 0; i < g.num_cells(); ++i) {
    const Box b = g.cell_box(i);
    total += b[0].width() * b[1].width();
  }
  CHECK(total == Catch::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("training subgrid", "[grid]") {
  const Grid g = Grid::build(Box{{0.0, 1.0}}, 0.05);  // 10 cells
  REQUIRE(g.num_cells() == 10);
  CHECK(g.seed_training_set(1).size() == 10);
  CHECK(g.seed_training_set(2).size() == 5);
  CHECK(g.seed_training_set(3).size() == 4);  // ceil(10 / 3)

  const Grid g2 = Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 0.07);
  for (const auto& p : g2.seed_training_set(3)) {
    REQUIRE(box_contains(g2.bounds(), p));
  }
}

TEST_CASE("cells_intersecting regions", "[grid]") {
  const Grid g = Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 0.014);  // 100x100
  const CellSet all = g.cells_intersecting({g.bounds()});
  CHECK(static_cast<std::int64_t>(all.indices.size()) == g.num_cells());

  const CellSet none = g.cells_intersecting({});
  CHECK(none.indices.empty());

  // the published excluded rectangle is fully covered by the returned cells
  const Box rect{{-0.7, -0.6}, {-0.7, -0.4}};
  const CellSet cover = g.cells_intersecting({rect});
  REQUIRE_FALSE(cover.indices.empty());
  std::set<std::int64_t> covered(cover.indices.begin(), cover.indices.end());
  auto rng = make_rng(103, kStreamTest);
  std::uniform_real_distribution<double> u1(rect[0].lo, rect[0].hi);
  std::uniform_real_distribution<double> u2(rect[1].lo, rect[1].hi);
  for (int t = 0; t < 20000; ++t) {
    Eigen::VectorXd x(2);
    x << u1(rng), u2(rng);
    // locate the cell containing x and require it to be in the set
    std::int64_t linear = 0;
    for (int d = 1; d >= 0; --d) {
      const double h = g.spacing()[static_cast<std::size_t>(d)];
      auto i = static_cast<std::int64_t>((x(d) - g.bounds()[static_cast<std::size_t>(d)].lo) / h);
      i = std::min(i, g.counts()[static_cast<std::size_t>(d)] - 1);
      linear = linear * g.counts()[static_cast<std::size_t>(d)] + i;
    }
    REQUIRE(covered.count(linear) == 1);
  }
}

TEST_CASE("scheduled refinement", "[grid]") {
  const Grid g = Grid::build(Box{{0.0, 1.0}}, 0.1);
  CHECK(g.refine(4, false).tau() == 0.1);
  CHECK(g.refine(5, false).tau() == 0.05);
  CHECK(g.refine(5, true).tau() == 0.1);
  CHECK(g.refine(6, false).tau() == 0.1);
  CHECK(g.refine(7, false).tau() == 0.05);
}

TEST_CASE("local refinement produces exact children", "[grid]") {
  const Grid g = Grid::build(Box{{-1.0, 1.0}, {-1.0, 1.0}}, 0.2);
  const Grid g2 = g.refine_locally(CellSet{{3}, CellRole::counterexample});
  REQUIRE(g2.is_refined(3));
  CHECK_FALSE(g2.is_refined(2));

  const Box parent = g.cell_box(3);
  double vol = 0.0;
  for (int c = 0; c < g.child_count(); ++c) {
    const Box child = g2.child_box(3, c);
    REQUIRE(box_subset(child, parent));
    vol += child[0].width() * child[1].width();
    // children meet the mesh property at tau/2
    double half_diag = 0.0;
    for (const auto& iv : child) half_diag += iv.radius();
    REQUIRE(half_diag <= g.tau() / 2 + 1e-12);
  }
  CHECK(vol == Catch::Approx(parent[0].width() * parent[1].width()).epsilon(1e-12));

  const Grid unchanged = g.refine_locally(CellSet{});
  CHECK(unchanged.refined_cells().empty());
}

TEST_CASE("budget error reports the problem", "[grid]") {
  CHECK_THROWS_WITH(Grid::build(Box{{-0.7, 0.7}, {-0.7, 0.7}}, 1e-6),
                    Catch::Matchers::ContainsSubstring("budget"));
}
