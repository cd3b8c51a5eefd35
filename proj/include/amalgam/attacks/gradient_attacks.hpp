#pragma once

#include <cstdint>
#include <vector>

#include "amalgam/attacks/budget.hpp"
#include "amalgam/core/rng.hpp"
#include "amalgam/nn/backward.hpp"

namespace amalgam {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace detail {

inline void require_finite_grads(const Matrix& g, const char* who) {
  if (!g.all_finite()) throw NonFiniteError(std::string(who) + ": non-finite input gradient");
}

inline void require_in_domain(const Matrix& x, const Domain& domain, const char* who) {
  if (x.cols() != domain.dim()) throw InvalidArgument(std::string(who) + ": domain dimension mismatch");
  for (std::size_t r = 0; r < x.rows(); ++r)
    if (!domain.contains(x.row(r)))
      throw InvalidArgument(std::string(who) + ": input row " + std::to_string(r) + " outside domain");
}

}  // namespace detail

// One signed-gradient step of size eps from every row, projected to the ball and domain.
inline Matrix fgsm_batch(const Network& net, const Matrix& x, std::span<const std::size_t> labels,
                         double eps, const Domain& domain) {
  detail::require_in_domain(x, domain, "fgsm");
  const InputGradients g = ce_input_gradients(net, x, labels);
  detail::require_finite_grads(g.grads, "fgsm");
  Matrix adv = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto a = adv.row(r);
    const auto gr = g.grads.row(r);
    for (std::size_t c = 0; c < a.size(); ++c) a[c] += eps * sign(gr[c]);
    project_linf_inplace(a, x.row(r), eps, domain.lo, domain.hi);
  }
  return adv;
}

inline Vector fgsm(const Network& net, std::span<const double> x, std::size_t y, double eps,
                   const Domain& domain) {
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.row(0).begin());
  const std::size_t labels[] = {y};
  return fgsm_batch(net, m, labels, eps, domain).row_vector(0);
}

// Uniform start inside the eps-ball (projected into the domain), drawn from rng.
inline void random_start(std::span<double> x, std::span<const double> center, double eps,
                         const Domain& domain, Rng& rng) {
  for (std::size_t c = 0; c < x.size(); ++c) x[c] = center[c] + uniform(rng, -eps, eps);
  project_linf_inplace(x, center, eps, domain.lo, domain.hi);
}

// Signed-gradient ascent on CE with per-step projection. Row r uses seeds[r]
// for its random start; rows never interact.
inline Matrix pgd_batch(const Network& net, const Matrix& x, std::span<const std::size_t> labels,
                        const AttackBudget& budget, bool random_init,
                        std::span<const std::uint64_t> seeds) {
  detail::require_in_domain(x, budget.domain, "pgd");
  if (random_init && seeds.size() != x.rows()) throw InvalidArgument("pgd: one seed per row required");
  Matrix adv = x;
  if (random_init) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      Rng rng(seeds[r]);
      random_start(adv.row(r), x.row(r), budget.eps_max, budget.domain, rng);
    }
  }
  for (int t = 0; t < budget.iterations; ++t) {
    const InputGradients g = ce_input_gradients(net, adv, labels);
    detail::require_finite_grads(g.grads, "pgd");
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto a = adv.row(r);
      const auto gr = g.grads.row(r);
      for (std::size_t c = 0; c < a.size(); ++c) a[c] += budget.step_size * sign(gr[c]);
      project_linf_inplace(a, x.row(r), budget.eps_max, budget.domain.lo, budget.domain.hi);
    }
  }
  return adv;
}

inline Vector pgd(const Network& net, std::span<const double> x, std::size_t y,
                  const AttackBudget& budget, bool random_init, std::uint64_t seed) {
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.row(0).begin());
  const std::size_t labels[] = {y};
  const std::uint64_t seeds[] = {seed};
  return pgd_batch(net, m, labels, budget, random_init, seeds).row_vector(0);
}

}  // namespace amalgam
