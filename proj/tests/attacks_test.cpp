#include <gtest/gtest.h>

#include "amalgam/attacks/svgd.hpp"
#include "test_support.hpp"

namespace amalgam {
namespace {

using testing::random_network;

const Domain kUnit = Domain::uniform(2, 0.0, 1.0);

// Two-class linear net whose logits are (s, -s) with s = x . w.
Network antisymmetric_linear(const Vector& w) {
  Network net = init_network({w.size(), {2}, Activation::relu, 1});
  for (std::size_t k = 0; k < w.size(); ++k) {
    net.layers[0].weight(k, 0) = w[k];
    net.layers[0].weight(k, 1) = -w[k];
  }
  return net;
}

// Closed-form input gradient of CE(softmax(x W + b), y) for a single linear layer.
Vector linear_ce_gradient(const Network& net, const Vector& x, std::size_t y) {
  const Vector p = softmax(forward(net, x));
  Vector g(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t c = 0; c < p.size(); ++c) g[k] += net.layers[0].weight(k, c) * (p[c] - (c == y ? 1.0 : 0.0));
  return g;
}

TEST(ProjectLinf, Examples) {
  EXPECT_EQ(project_linf(Vector{0.4, 0.6}, Vector{0.5, 0.5}, 0.2, kUnit), (Vector{0.4, 0.6}));
  EXPECT_EQ(project_linf(Vector{1.5}, Vector{1.0}, 0.2, Vector{0.0}, Vector{2.0}), (Vector{1.2}));
  EXPECT_EQ(project_linf(Vector{-0.5}, Vector{0.05}, 0.2, Vector{0.0}, Vector{1.0}), (Vector{0.0}));
}

TEST(ProjectLinf, IdempotentAndExact) {
  Rng rng(1);
  for (int t = 0; t < 2000; ++t) {
    const double eps = uniform(rng, 0.0, 0.5);
    const Vector c{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const Vector x{uniform(rng, -1, 2), uniform(rng, -1, 2), uniform(rng, -1, 2)};
    const Domain dom = Domain::uniform(3, 0, 1);
    const Vector once = project_linf(x, c, eps, dom);
    EXPECT_EQ(project_linf(once, c, eps, dom), once);
    EXPECT_TRUE(within_budget(once, c, eps, dom));
  }
}

TEST(Fgsm, SignRule) {
  const Network net = antisymmetric_linear({-0.3, 0.2});
  const Vector x{0.5, 0.5};
  const Vector g = linear_ce_gradient(net, x, 0);
  EXPECT_GT(g[0], 0.0);
  EXPECT_LT(g[1], 0.0);
  const Vector adv = fgsm(net, x, 0, 0.1, kUnit);
  EXPECT_NEAR(adv[0] - x[0], 0.1, 1e-15);
  EXPECT_NEAR(adv[1] - x[1], -0.1, 1e-15);
  EXPECT_TRUE(within_budget(adv, x, 0.1, kUnit));
}

TEST(Fgsm, ZeroGradientLeavesInput) {
  Network net = init_network({2, {2}, Activation::relu, 1});
  std::fill(net.layers[0].weight.data().begin(), net.layers[0].weight.data().end(), 0.0);
  const Vector x{0.3, 0.8};
  EXPECT_EQ(fgsm(net, x, 1, 0.1, kUnit), x);
}

TEST(Fgsm, MatchesClosedFormSignOnLinearModels) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Network net = random_network(4, {3}, Activation::relu, 100 + t);
    const Vector x{uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8)};
    const std::size_t y = t % 3;
    const Vector g = linear_ce_gradient(net, x, y);
    const Vector adv = fgsm(net, x, y, 0.1, Domain::uniform(4, 0, 1));
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(sign(adv[k] - x[k]), sign(g[k]));
  }
}

TEST(Fgsm, RejectsNonFiniteGradient) {
  Network net = init_network({2, {2}, Activation::relu, 1});
  net.layers[0].weight(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fgsm(net, Vector{0.5, 0.5}, 0, 0.1, kUnit), NonFiniteError);
}

TEST(Pgd, ZeroBudgetIsIdentity) {
  const Network net = random_network(2, {8, 2}, Activation::relu, 3);
  const Vector x{0.25, 0.75};
  EXPECT_EQ(pgd(net, x, 0, {0.0, 0.01, 10, kUnit}, true, 9), x);
}

TEST(Pgd, SingleStepEqualsFgsm) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Network net = random_network(2, {8, 3}, Activation::tanh, 50 + t);
    const Vector x{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    EXPECT_EQ(pgd(net, x, t % 3, {0.1, 0.1, 1, kUnit}, false, 0), fgsm(net, x, t % 3, 0.1, kUnit));
  }
}

TEST(Pgd, LinearModelReachesLossMaximizingCorner) {
  Rng rng(8);
  for (std::size_t d = 1; d <= 10; ++d) {
    const Network net = random_network(d, {2}, Activation::relu, 500 + d);
    Vector x(d);
    for (double& v : x) v = uniform(rng, 0.3, 0.7);
    const std::size_t y = d % 2;
    const double eps = 0.1;
    const Domain dom = Domain::uniform(d, 0, 1);
    const Vector adv = pgd(net, x, y, {eps, eps / 4, 12, dom}, true, d);
    double best = -1;
    Vector best_corner;
    for (std::size_t mask = 0; mask < (1u << d); ++mask) {
      Vector c(d);
      for (std::size_t k = 0; k < d; ++k) c[k] = (mask >> k & 1) ? x[k] + eps : x[k] - eps;
      const double l = cross_entropy(softmax(forward(net, c)), y);
      if (l > best) best = l, best_corner = c;
    }
    EXPECT_NEAR(cross_entropy(softmax(forward(net, adv)), y), best, 1e-12) << "d=" << d;
    for (std::size_t k = 0; k < d; ++k) EXPECT_NEAR(adv[k], best_corner[k], 1e-15);
  }
}

TEST(Pgd, BatchMatchesSingleRows) {
  const Network net = random_network(2, {16, 16, 2}, Activation::relu, 12);
  const Matrix x = testing::random_matrix(7, 2, 3);
  const std::vector<std::size_t> labels{0, 1, 0, 1, 1, 0, 0};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7};
  const AttackBudget b{0.15, 0.03, 10, kUnit};
  const Matrix batch = pgd_batch(net, x, labels, b, true, seeds);
  for (std::size_t r = 0; r < x.rows(); ++r) EXPECT_EQ(batch.row_vector(r), pgd(net, x.row(r), labels[r], b, true, seeds[r]));
}

TEST(RbfKernel, Values) {
  const auto same = rbf_kernel(Vector{0.2, 0.4}, Vector{0.2, 0.4}, 0.5);
  EXPECT_EQ(same.k, 1.0);
  EXPECT_EQ(same.grad_a, (Vector{0.0, 0.0}));
  const auto one_sigma = rbf_kernel(Vector{0.0, 0.3}, Vector{0.0, 0.0}, 0.3);
  EXPECT_NEAR(one_sigma.k, 0.606530659712633423604, 1e-15);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Vector a{uniform(rng, -1, 1), uniform(rng, -1, 1)}, b{uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const auto kab = rbf_kernel(a, b, 0.7), kba = rbf_kernel(b, a, 0.7);
    EXPECT_EQ(kab.k, kba.k);
    EXPECT_GT(kab.k, 0.0);
    EXPECT_LE(kab.k, 1.0);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(kab.grad_a[c], -(a[c] - b[c]) / 0.49 * kab.k, 1e-15);
  }
  EXPECT_THROW(rbf_kernel(Vector{0}, Vector{0}, 0.0), InvalidArgument);
}

TEST(SvgdPhi, SingleParticleIsPlainGradient) {
  const std::vector<Network> teachers{random_network(2, {2}, Activation::relu, 4)};
  const Vector x{0.3, 0.6};
  const auto drift = svgd_phi({x}, teachers, 1, {1, 0.5, 1.0, Pairing::per_particle_teacher, 0});
  const Vector g = linear_ce_gradient(teachers[0], x, 1);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(drift[0][c], g[c], 1e-15);
}

TEST(SvgdPhi, CoincidentParticlesWithoutRepulsion) {
  const std::vector<Network> teacher{random_network(2, {2}, Activation::relu, 4)};
  const Vector x{0.3, 0.6};
  const SVGDConfig cfg{3, 0.5, 0.0, Pairing::averaged_ensemble, 0};
  const auto drift = svgd_phi({x, x, x}, teacher, 0, cfg);
  const Vector g = linear_ce_gradient(teacher[0], x, 0);
  for (const auto& d : drift)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(d[c], 3 * g[c], 1e-14);
}

TEST(SvgdPhi, TwoParticlesMatchTermByTermSum) {
  const std::vector<Network> teachers{random_network(2, {2}, Activation::relu, 21),
                                      random_network(2, {2}, Activation::relu, 22)};
  const std::vector<Vector> xs{{0.2, 0.7}, {0.45, 0.5}};
  const double sigma = 0.3, gamma = 0.8;
  const std::size_t y = 1;
  const auto drift = svgd_phi(xs, teachers, y, {2, sigma, gamma, Pairing::per_particle_teacher, 0});
  for (std::size_t i = 0; i < 2; ++i) {
    Vector expect(2, 0.0);
    for (std::size_t j = 0; j < 2; ++j) {
      const double sq = (xs[j][0] - xs[i][0]) * (xs[j][0] - xs[i][0]) + (xs[j][1] - xs[i][1]) * (xs[j][1] - xs[i][1]);
      const double k = std::exp(-sq / (2 * sigma * sigma));
      const Vector g = linear_ce_gradient(teachers[i], xs[j], y);
      for (std::size_t c = 0; c < 2; ++c)
        expect[c] += k * g[c] + gamma / 2 * (-(xs[j][c] - xs[i][c]) / (sigma * sigma) * k);
    }
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(drift[i][c], expect[c], 1e-14);
  }
}

TEST(SvgdPhi, WideKernelRemovesRepulsion) {
  const std::vector<Network> teachers{random_network(2, {8, 2}, Activation::tanh, 1),
                                      random_network(2, {8, 2}, Activation::tanh, 2),
                                      random_network(2, {8, 2}, Activation::tanh, 3)};
  const std::vector<Vector> xs{{0.1, 0.2}, {0.9, 0.4}, {0.5, 0.95}};
  const double diameter = std::sqrt(2.0);
  const auto drift = svgd_phi(xs, teachers, 0, {3, 1e6 * diameter, 1.0, Pairing::per_particle_teacher, 0});
  for (std::size_t i = 0; i < 3; ++i) {
    const Matrix pts = Matrix::from_rows(xs);
    const auto g = ce_input_gradients(teachers[i], pts, std::vector<std::size_t>(3, 0));
    for (std::size_t c = 0; c < 2; ++c) {
      double plain = 0;
      for (std::size_t j = 0; j < 3; ++j) plain += g.grads(j, c);
      EXPECT_LT(std::abs(drift[i][c] - plain), 1e-6);
    }
  }
}

TEST(SvgdPhi, RejectsPairingMismatch) {
  const std::vector<Network> teachers{random_network(2, {2}, Activation::relu, 1)};
  EXPECT_THROW(svgd_phi({{0.1, 0.1}, {0.2, 0.2}}, teachers, 0, {2, 0.5, 1.0, Pairing::per_particle_teacher, 0}),
               InvalidArgument);
  EXPECT_THROW(svgd_phi({{0.1, 0.1}}, teachers, 0, {2, 0.5, 1.0, Pairing::averaged_ensemble, 0}), InvalidArgument);
}

TEST(SvgdGenerate, ZeroIterationsReturnsProjectedStarts) {
  const std::vector<Network> teachers{random_network(2, {4, 2}, Activation::relu, 1),
                                      random_network(2, {4, 2}, Activation::relu, 2)};
  const Vector x{0.05, 0.5};
  const double eps = 0.1;
  const auto set = svgd_generate(x, 0, teachers, {eps, 0.01, 0, kUnit}, {2, 0.5, 1.0, Pairing::per_particle_teacher, 77});
  Rng rng(77);
  for (std::size_t i = 0; i < 2; ++i) {
    Vector start{x[0] + std::uniform_real_distribution<double>(-eps, eps)(rng),
                 x[1] + std::uniform_real_distribution<double>(-eps, eps)(rng)};
    start[0] = std::max(start[0], 0.0);
    for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(set.particles[i][c], start[c], 1e-16);
    EXPECT_TRUE(within_budget(set.particles[i], x, eps, kUnit));
  }
}

TEST(SvgdGenerate, SingleParticleIsProjectedGradientAscent) {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const std::vector<Network> teacher{random_network(2, {16, 2}, Activation::tanh, 900 + t)};
    const Vector x{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const std::size_t y = t % 2;
    const AttackBudget budget{0.15, 0.05, 0, kUnit};
    const SVGDConfig cfg{1, 0.5, 1.0, Pairing::per_particle_teacher, 300u + t};
    Vector manual = svgd_generate(x, y, teacher, budget, cfg).particles[0];
    for (int steps = 1; steps <= 8; ++steps) {
      const auto g = ce_input_gradients(teacher[0], Matrix::from_rows({manual}), std::vector<std::size_t>{y});
      for (std::size_t c = 0; c < 2; ++c) manual[c] += budget.step_size * g.grads(0, c);
      manual = project_linf(manual, x, budget.eps_max, kUnit);
      AttackBudget b = budget;
      b.iterations = steps;
      const Vector svgd = svgd_generate(x, y, teacher, b, cfg).particles[0];
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(svgd[c], manual[c], 1e-10);
    }
  }
}

TEST(SvgdGenerate, SeededAndBatchConsistent) {
  const std::vector<Network> teachers{random_network(2, {8, 2}, Activation::relu, 1),
                                      random_network(2, {8, 2}, Activation::relu, 2),
                                      random_network(2, {8, 2}, Activation::relu, 3)};
  const AttackBudget budget{0.15, 0.02, 10, kUnit};
  const SVGDConfig cfg{3, 0.5, 1.0, Pairing::per_particle_teacher, 5};
  const Matrix x = testing::random_matrix(4, 2, 8);
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  const std::vector<std::uint64_t> seeds{5, 6, 7, 8};
  const auto batch = svgd_generate_batch(x, labels, teachers, budget, cfg, seeds);
  for (std::size_t s = 0; s < 4; ++s) {
    SVGDConfig c = cfg;
    c.init_seed = seeds[s];
    const auto single = svgd_generate(x.row(s), labels[s], teachers, budget, c);
    EXPECT_EQ(single.particles, batch[s].particles);
    EXPECT_EQ(single.per_particle_loss, batch[s].per_particle_loss);
    EXPECT_EQ(svgd_generate(x.row(s), labels[s], teachers, budget, c).particles, single.particles);
  }
}

TEST(Attacks, BudgetInvariantHoldsExactly) {
  Rng rng(2024);
  for (int t = 0; t < 300; ++t) {
    const std::vector<Network> teachers{random_network(2, {8, 2}, Activation::relu, 10 + t),
                                        random_network(2, {8, 2}, Activation::relu, 11 + t)};
    const Vector x{uniform(rng, 0, 1), uniform(rng, 0, 1)};
    const double eps = uniform(rng, 0.001, 0.3);
    const AttackBudget b{eps, uniform(rng, 0.0, 2 * eps), 1 + t % 7, kUnit};
    EXPECT_TRUE(within_budget(fgsm(teachers[0], x, t % 2, eps, kUnit), x, eps, kUnit));
    EXPECT_TRUE(within_budget(pgd(teachers[0], x, t % 2, b, true, t), x, eps, kUnit));
    const auto set = svgd_generate(x, t % 2, teachers, b, {2, 0.3, 5.0, Pairing::per_particle_teacher, 3u * t});
    for (const auto& p : set.particles) EXPECT_TRUE(within_budget(p, x, eps, kUnit));
  }
}

}  // namespace
}  // namespace amalgam
