#pragma once

#include <cmath>
#include <span>
#include <string>

#include "amalgam/nn/matrix.hpp"

namespace amalgam {

// Per-feature box the inputs live in.
struct Domain {
  Vector lo;
  Vector hi;

  static Domain uniform(std::size_t dim, double lo, double hi) {
    return {Vector(dim, lo), Vector(dim, hi)};
  }
  std::size_t dim() const { return lo.size(); }

  bool contains(std::span<const double> x) const {
    if (x.size() != lo.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
  }

  void validate() const {
    if (lo.size() != hi.size() || lo.empty()) throw InvalidArgument("Domain: bound sizes differ or empty");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) throw InvalidArgument("Domain: lo must be < hi");
  }
};

// L-infinity perturbation budget.
struct AttackBudget {
  double eps_max = 0.0;
  double step_size = 0.0;
  int iterations = 1;
  Domain domain;

  void validate() const {
    domain.validate();
    if (!(eps_max >= 0.0) || !std::isfinite(eps_max)) throw InvalidArgument("AttackBudget: eps_max must be >= 0");
    if (!(step_size >= 0.0)) throw InvalidArgument("AttackBudget: step_size must be >= 0");
    if (iterations < 0) throw InvalidArgument("AttackBudget: iterations must be >= 0");
    for (std::size_t i = 0; i < domain.dim(); ++i)
      if (eps_max > domain.hi[i] - domain.lo[i])
        throw InvalidArgument("AttackBudget: eps_max exceeds domain width");
    if (eps_max > 0.0 && step_size > 2.0 * eps_max)
      throw InvalidArgument("AttackBudget: step_size exceeds 2 * eps_max");
  }
};

// Clamp into [center - eps, center + eps], then into the domain. The budget
// clamp is tightened by ulps until |out - center| <= eps holds in floating
// point, so the bound can be checked exactly. Requires center inside domain.
inline void project_linf_inplace(std::span<double> x, std::span<const double> center, double eps,
                                 std::span<const double> lo, std::span<const double> hi) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = center[i];
    double v = x[i];
    if (v - c > eps) {
      v = c + eps;
      while (v - c > eps) v = std::nextafter(v, c);
    } else if (c - v > eps) {
      v = c - eps;
      while (c - v > eps) v = std::nextafter(v, c);
    }
    if (v < lo[i]) v = lo[i];
    if (v > hi[i]) v = hi[i];
    x[i] = v;
  }
}

inline Vector project_linf(std::span<const double> x, std::span<const double> center, double eps,
                           std::span<const double> lo, std::span<const double> hi) {
  if (x.size() != center.size() || x.size() != lo.size() || x.size() != hi.size())
    throw InvalidArgument("project_linf: shape mismatch");
  Vector out(x.begin(), x.end());
  project_linf_inplace(out, center, eps, lo, hi);
  return out;
}

inline Vector project_linf(std::span<const double> x, std::span<const double> center, double eps,
                           const Domain& domain) {
  return project_linf(x, center, eps, domain.lo, domain.hi);
}

// True when x' lies in the budget ball around x and inside the domain, with no tolerance.
inline bool within_budget(std::span<const double> adv, std::span<const double> x, double eps,
                          const Domain& domain) {
  if (!domain.contains(adv)) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(std::abs(adv[i] - x[i]) <= eps)) return false;
  return true;
}

}  // namespace amalgam
