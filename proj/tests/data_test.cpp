#include <gtest/gtest.h>

#include <sstream>

#include "amalgam/data/dataset.hpp"
#include "amalgam/data/metrics.hpp"
#include "test_support.hpp"

namespace amalgam {
namespace {

TEST(TwoMoons, NoiselessPointsLieOnArcs) {
  const Dataset ds = gen_two_moons(40, 0.0, 1);
  ds.validate();
  EXPECT_EQ(ds.num_classes(), 2u);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    // Undo the affine map and check the circle equations directly.
    const double x = ds.features(r, 0) * 3.0 - 1.0, y = ds.features(r, 1) * 3.0 - 1.25;
    if (ds.labels[r] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-12);
      EXPECT_GE(y, -1e-12);
    } else {
      EXPECT_NEAR((x - 1) * (x - 1) + (y - 0.5) * (y - 0.5), 1.0, 1e-12);
      EXPECT_LE(y, 0.5 + 1e-12);
    }
  }
  EXPECT_EQ(ds.features.row_vector(0), moon_point(0, 0.0));
}

TEST(TwoMoons, DeterministicAndSeeded) {
  EXPECT_EQ(gen_two_moons(100, 0.1, 7).features, gen_two_moons(100, 0.1, 7).features);
  EXPECT_NE(gen_two_moons(100, 0.1, 7).features, gen_two_moons(100, 0.1, 8).features);
  const Dataset ds = gen_two_moons(100, 0.3, 7);
  ds.validate();
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0u), 50);
}

TEST(TwoMoons, RejectsBadArguments) {
  EXPECT_THROW(gen_two_moons(0, 0.1, 1), InvalidArgument);
  EXPECT_THROW(gen_two_moons(7, 0.1, 1), InvalidArgument);
  EXPECT_THROW(gen_two_moons(8, -0.1, 1), InvalidArgument);
}

TEST(Spirals, NoiselessPointsFollowParametrization) {
  const Dataset ds = gen_spirals(20, 1.5, 0.0, 1);
  ds.validate();
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const double dx = ds.features(r, 0) - 0.5, dy = ds.features(r, 1) - 0.5;
    const double s = static_cast<double>(r % 10) / 9.0;
    EXPECT_NEAR(std::hypot(dx, dy), 0.05 + 0.4 * s, 1e-12);
    const double angle = s * 1.5 * 2 * std::numbers::pi + (ds.labels[r] ? std::numbers::pi : 0.0);
    EXPECT_NEAR(dx, (0.05 + 0.4 * s) * std::cos(angle), 1e-12);
  }
  EXPECT_EQ(gen_spirals(20, 1.5, 0.1, 3).features, gen_spirals(20, 1.5, 0.1, 3).features);
  EXPECT_THROW(gen_spirals(20, 0.0, 0.1, 3), InvalidArgument);
}

TEST(DatasetCsv, RoundTrip) {
  const Dataset ds = gen_two_moons(20, 0.2, 4);
  std::stringstream ss;
  write_dataset_csv(ss, ds);
  const Dataset back = read_dataset_csv(ss, 0.0, 1.0);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
}

void expect_parse_error(const std::string& text, const std::string& fragment) {
  std::istringstream is(text);
  try {
    read_dataset_csv(is, 0.0, 1.0);
    FAIL() << "expected a parse error for: " << text;
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(DatasetCsv, ErrorsNameTheLine) {
  expect_parse_error("f1,f2,label\n0.1,0.2\n", "line 2");
  expect_parse_error("0.1,abc,0\n", "line 1");
  expect_parse_error("0.1,0.2,0\n0.1,0.2,x\n", "line 2");
  expect_parse_error("0.1,1.5,1\n", "line 1");
  expect_parse_error("f1,f2,label\n", "no data rows");
}

TEST(Diversity, Examples) {
  const Vector losses{1.0, 3.0};
  const auto two = diversity_report({{0.0, 0.0}, {0.3, 0.1}}, losses);
  EXPECT_NEAR(two.dist, 0.3, 1e-15);
  EXPECT_EQ(two.avg_ce, 2.0);
  EXPECT_EQ(two.std_ce, 1.0);
  EXPECT_EQ(two.max_ce, 3.0);
  EXPECT_EQ(diversity_report({{0.2, 0.2}, {0.2, 0.2}, {0.2, 0.2}}, Vector{1, 1, 1}).dist, 0.0);
  // Pairs: 0.5, 0.2, 0.4
  const auto three = diversity_report({{0.0, 0.0}, {0.5, 0.1}, {0.1, 0.2}}, Vector{0, 0, 0});
  EXPECT_NEAR(three.dist, (0.5 + 0.2 + 0.4) / 3, 1e-15);
  EXPECT_THROW(diversity_report({{0.0}}, Vector{1}), InvalidArgument);
}

TEST(Diversity, TranslationInvariantDistance) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<Vector> pts, shifted;
    const double dx = uniform(rng, -1, 1), dy = uniform(rng, -1, 1);
    for (int k = 0; k < 5; ++k) {
      pts.push_back({uniform(rng, 0, 1), uniform(rng, 0, 1)});
      shifted.push_back({pts.back()[0] + dx, pts.back()[1] + dy});
    }
    EXPECT_NEAR(mean_pairwise_linf(pts), mean_pairwise_linf(shifted), 1e-12);
  }
}

TEST(Diversity, NetworkLossesUseLabel) {
  const Network net = testing::random_network(2, {4, 2}, Activation::relu, 5);
  const std::vector<Vector> pts{{0.1, 0.2}, {0.7, 0.4}};
  const auto rep = diversity_report(pts, net, 1);
  EXPECT_NEAR(rep.max_ce, std::max(cross_entropy(softmax(forward(net, pts[0])), 1), cross_entropy(softmax(forward(net, pts[1])), 1)), 1e-15);
}

std::vector<AttackSpec> attacks(double eps) {
  const Domain unit = Domain::uniform(2, 0, 1);
  return {{"fgsm", AttackKind::fgsm, {eps, 0, 1, unit}, false, 0},
          {"pgd", AttackKind::pgd, {eps, eps / 4, 10, unit}, true, 3}};
}

TEST(Evaluate, ZeroBudgetEqualsClean) {
  const Dataset ds = gen_two_moons(100, 0.2, 2);
  const Network net = testing::random_network(2, {8, 2}, Activation::relu, 3);
  const auto rep = evaluate(net, ds, attacks(0.0));
  EXPECT_EQ(rep.robust_acc("fgsm"), rep.clean_acc);
  EXPECT_EQ(rep.robust_acc("pgd"), rep.clean_acc);
  EXPECT_EQ(rep.samples, 100u);
  EXPECT_THROW(rep.robust_acc("cw"), InvalidArgument);
}

TEST(Evaluate, ConstantNetworkIsUnattackable) {
  Network net = init_network({2, {2}, Activation::relu, 1});
  std::fill(net.layers[0].weight.data().begin(), net.layers[0].weight.data().end(), 0.0);
  net.layers[0].bias = {0.0, 1.0};
  const Dataset ds = gen_two_moons(60, 0.1, 2);
  const auto rep = evaluate(net, ds, attacks(0.2));
  EXPECT_EQ(rep.clean_acc, 0.5);
  EXPECT_EQ(rep.robust_acc("fgsm"), 0.5);
  EXPECT_EQ(rep.robust_acc("pgd"), 0.5);
}

TEST(Evaluate, RobustNeverExceedsCleanOnSurvivors) {
  const Dataset ds = gen_two_moons(200, 0.1, 2);
  const Network net = testing::random_network(2, {16, 2}, Activation::tanh, 8);
  const auto one = evaluate(net, ds, attacks(0.1), 1);
  const auto many = evaluate(net, ds, attacks(0.1), 4);
  EXPECT_EQ(one.robust, many.robust);
  for (const auto& [name, acc] : one.robust) {
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
  }
}

TEST(BoundaryGrid, CornersAndLayout) {
  const Network net = testing::random_network(2, {4, 3}, Activation::relu, 5);
  const auto grid = boundary_grid(net, {0, 0}, {1, 2}, 2);
  ASSERT_EQ(grid.size(), 4u);
  const double corners[4][2] = {{0, 0}, {1, 0}, {0, 2}, {1, 2}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(grid[i].x1, corners[i][0]);
    EXPECT_EQ(grid[i].x2, corners[i][1]);
    const Vector p = softmax(forward(net, Vector{corners[i][0], corners[i][1]}));
    EXPECT_EQ(grid[i].cls, argmax(p));
    EXPECT_EQ(grid[i].conf, p[grid[i].cls]);
  }
  EXPECT_THROW(boundary_grid(net, {0, 0}, {1, 1}, 1), InvalidArgument);
  EXPECT_THROW(boundary_grid(testing::random_network(3, {2}, Activation::relu, 1), {0, 0}, {1, 1}, 4),
               InvalidArgument);
}

TEST(BoundaryGrid, ZeroNetworkTiesToFirstClass) {
  Network net = init_network({2, {2}, Activation::relu, 1});
  std::fill(net.layers[0].weight.data().begin(), net.layers[0].weight.data().end(), 0.0);
  for (const auto& c : boundary_grid(net, {0, 0}, {1, 1}, 5)) {
    EXPECT_EQ(c.cls, 0u);
    EXPECT_EQ(c.conf, 0.5);
  }
}

TEST(BoundaryGrid, LinearNetworkSplitsAlongLine) {
  // Logit difference x1 - x2: class 0 wins strictly above the diagonal.
  Network net = init_network({2, {2}, Activation::relu, 1});
  net.layers[0].weight(0, 0) = -1;
  net.layers[0].weight(1, 0) = 1;
  net.layers[0].weight(0, 1) = 1;
  net.layers[0].weight(1, 1) = -1;
  for (const auto& c : boundary_grid(net, {0, 0}, {1, 1}, 21)) EXPECT_EQ(c.cls, c.x2 >= c.x1 ? 0u : 1u);
}

TEST(MetricCsv, RoundTrips) {
  const std::vector<GridCell> grid{{0.0, 0.5, 1, 0.75}, {1.0, 0.5, 0, 0.625}};
  std::stringstream gs;
  write_grid_csv(gs, grid, "seed=1");
  const auto back = read_grid_csv(gs);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].conf, 0.625);
  EXPECT_EQ(back[0].cls, 1u);

  EvalReport rep{0.9, {{"pgd", 0.5}}, 10, {{"pgd", 0}}};
  std::stringstream es;
  write_eval_csv(es, rep);
  const auto rows = read_metric_csv(es);
  ASSERT_GE(rows.size(), 2u);
  EXPECT_EQ(rows[0].first, "clean");
  EXPECT_EQ(rows[1], (std::pair<std::string, std::string>{"pgd", "0.5"}));

  ParticleSet ps{{0.5, 0.5}, {{0.4, 0.6}, {0.55, 0.45}}, {0.1, 0.2}};
  std::stringstream ss;
  write_particles_csv(ss, ps);
  const auto [pts, losses] = read_particles_csv(ss);
  EXPECT_EQ(pts, ps.particles);
  EXPECT_EQ(losses, ps.per_particle_loss);
}

}  // namespace
}  // namespace amalgam
