#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "amalgam/attacks/gradient_attacks.hpp"

namespace amalgam {

enum class Pairing {
  per_particle_teacher,  // particle i's drift uses teacher i's loss
  averaged_ensemble,     // every drift uses the loss averaged over all teachers
};

inline std::string_view to_string(Pairing p) {
  return p == Pairing::per_particle_teacher ? "per_particle_teacher" : "averaged_ensemble";
}

inline Pairing parse_pairing(std::string_view s) {
  if (s == "per_particle_teacher") return Pairing::per_particle_teacher;
  if (s == "averaged_ensemble") return Pairing::averaged_ensemble;
  throw InvalidArgument("unknown pairing '" + std::string(s) + "'");
}

struct SVGDConfig {
  std::size_t n_particles = 1;
  double kernel_sigma = 0.5;
  double gamma = 1.0;
  Pairing pairing = Pairing::per_particle_teacher;
  std::uint64_t init_seed = 0;

  void validate(std::size_t n_teachers) const {
    if (n_particles == 0) throw InvalidArgument("SVGDConfig: n_particles must be >= 1");
    if (!(kernel_sigma > 0.0)) throw InvalidArgument("SVGDConfig: kernel_sigma must be > 0");
    if (!(gamma >= 0.0)) throw InvalidArgument("SVGDConfig: gamma must be >= 0");
    if (n_teachers == 0) throw InvalidArgument("SVGDConfig: at least one network required");
    if (pairing == Pairing::per_particle_teacher && n_teachers != n_particles)
      throw InvalidArgument("SVGDConfig: per_particle_teacher pairing needs n_particles == teacher count");
  }
};

struct ParticleSet {
  Vector source;
  std::vector<Vector> particles;
  Vector per_particle_loss;
};

struct KernelValue {
  double k;
  Vector grad_a;  // d k / d a
};

// Gaussian RBF k(a, b) = exp(-|a - b|^2 / (2 sigma^2)) and its gradient in a.
inline KernelValue rbf_kernel(std::span<const double> a, std::span<const double> b, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("rbf_kernel: sigma must be > 0");
  if (a.size() != b.size()) throw InvalidArgument("rbf_kernel: size mismatch");
  const double inv_s2 = 1.0 / (sigma * sigma);
  const double k = std::exp(-0.5 * squared_distance(a, b) * inv_s2);
  KernelValue out{k, Vector(a.size())};
  for (std::size_t c = 0; c < a.size(); ++c) out.grad_a[c] = -(a[c] - b[c]) * inv_s2 * k;
  return out;
}

namespace detail {

// Loss gradients for a block of particle groups. Rows of `points` are laid out
// sample-major: row s * n + j is particle j of sample s.
// Returns per-teacher gradient matrices (per_particle) or one averaged matrix.
struct ParticleGradients {
  std::vector<Matrix> grads;   // per_particle: one per teacher; averaged: single entry
  std::vector<Vector> losses;  // same layout
};

inline ParticleGradients particle_gradients(const Matrix& points, std::span<const std::size_t> labels,
                                            std::span<const Network> teachers, Pairing pairing) {
  ParticleGradients out;
  if (pairing == Pairing::per_particle_teacher) {
    for (const auto& t : teachers) {
      InputGradients g = ce_input_gradients(t, points, labels);
      out.grads.push_back(std::move(g.grads));
      out.losses.push_back(std::move(g.losses));
    }
    return out;
  }
  Matrix sum(points.rows(), points.cols());
  Vector loss(points.rows(), 0.0);
  for (const auto& t : teachers) {
    const InputGradients g = ce_input_gradients(t, points, labels);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data()[i] += g.grads.data()[i];
    for (std::size_t i = 0; i < loss.size(); ++i) loss[i] += g.losses[i];
  }
  const double inv = 1.0 / static_cast<double>(teachers.size());
  for (double& v : sum.data()) v *= inv;
  for (double& v : loss) v *= inv;
  out.grads.push_back(std::move(sum));
  out.losses.push_back(std::move(loss));
  return out;
}

// drift_i = sum_j [ k(x_j, x_i) g_ij + (gamma / n) d/dx_j k(x_j, x_i) ] for one sample
// whose particles occupy rows [base, base + n) of `points`.
inline void svgd_drifts(const Matrix& points, std::size_t base, std::size_t n,
                        const ParticleGradients& pg, const SVGDConfig& cfg, Matrix& drift) {
  const std::size_t d = points.cols();
  const double inv_s2 = 1.0 / (cfg.kernel_sigma * cfg.kernel_sigma);
  const double repulse = cfg.gamma / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = points.row(base + i);
    const Matrix& g = pg.grads[cfg.pairing == Pairing::per_particle_teacher ? i : 0];
    auto out = drift.row(base + i);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const auto xj = points.row(base + j);
      const double k = std::exp(-0.5 * squared_distance(xj, xi) * inv_s2);
      const auto gj = g.row(base + j);
      for (std::size_t c = 0; c < d; ++c)
        out[c] += k * gj[c] + repulse * (-(xj[c] - xi[c]) * inv_s2 * k);
    }
    if (!all_finite(out))
      throw NonFiniteError("svgd: non-finite drift for particle " + std::to_string(i));
  }
}

}  // namespace detail

// Drift of every particle for a single source sample.
inline std::vector<Vector> svgd_phi(const std::vector<Vector>& particles,
                                    std::span<const Network> teachers, std::size_t y,
                                    const SVGDConfig& cfg) {
  cfg.validate(teachers.size());
  if (particles.size() != cfg.n_particles) throw InvalidArgument("svgd_phi: particle count != n_particles");
  const Matrix points = Matrix::from_rows(particles);
  const std::vector<std::size_t> labels(points.rows(), y);
  const auto pg = detail::particle_gradients(points, labels, teachers, cfg.pairing);
  Matrix drift(points.rows(), points.cols());
  detail::svgd_drifts(points, 0, points.rows(), pg, cfg, drift);
  std::vector<Vector> out;
  for (std::size_t i = 0; i < drift.rows(); ++i) out.push_back(drift.row_vector(i));
  return out;
}

// Runs SVGD for a batch of source samples in lockstep. Sample s is seeded with
// seeds[s]; its result is identical to running it alone.
inline std::vector<ParticleSet> svgd_generate_batch(const Matrix& x, std::span<const std::size_t> labels,
                                                    std::span<const Network> teachers,
                                                    const AttackBudget& budget, const SVGDConfig& cfg,
                                                    std::span<const std::uint64_t> seeds) {
  cfg.validate(teachers.size());
  detail::require_in_domain(x, budget.domain, "svgd");
  if (labels.size() != x.rows() || seeds.size() != x.rows())
    throw InvalidArgument("svgd: one label and one seed per sample required");
  const std::size_t n = cfg.n_particles;
  const std::size_t d = x.cols();
  Matrix points(x.rows() * n, d);
  std::vector<std::size_t> point_labels(points.rows());
  for (std::size_t s = 0; s < x.rows(); ++s) {
    Rng rng(seeds[s]);
    for (std::size_t j = 0; j < n; ++j) {
      random_start(points.row(s * n + j), x.row(s), budget.eps_max, budget.domain, rng);
      point_labels[s * n + j] = labels[s];
    }
  }
  Matrix drift(points.rows(), d);
  for (int t = 0; t < budget.iterations; ++t) {
    const auto pg = detail::particle_gradients(points, point_labels, teachers, cfg.pairing);
    for (std::size_t s = 0; s < x.rows(); ++s) detail::svgd_drifts(points, s * n, n, pg, cfg, drift);
    for (std::size_t r = 0; r < points.rows(); ++r) {
      auto p = points.row(r);
      const auto dr = drift.row(r);
      for (std::size_t c = 0; c < d; ++c) p[c] += budget.step_size * dr[c];
      project_linf_inplace(p, x.row(r / n), budget.eps_max, budget.domain.lo, budget.domain.hi);
    }
  }
  const auto final_pg = detail::particle_gradients(points, point_labels, teachers, cfg.pairing);
  std::vector<ParticleSet> out(x.rows());
  for (std::size_t s = 0; s < x.rows(); ++s) {
    out[s].source = x.row_vector(s);
    for (std::size_t j = 0; j < n; ++j) {
      out[s].particles.push_back(points.row_vector(s * n + j));
      const auto& losses = final_pg.losses[cfg.pairing == Pairing::per_particle_teacher ? j : 0];
      out[s].per_particle_loss.push_back(losses[s * n + j]);
    }
  }
  return out;
}

inline ParticleSet svgd_generate(std::span<const double> x, std::size_t y,
                                 std::span<const Network> teachers, const AttackBudget& budget,
                                 const SVGDConfig& cfg) {
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.row(0).begin());
  const std::size_t labels[] = {y};
  const std::uint64_t seeds[] = {cfg.init_seed};
  return std::move(svgd_generate_batch(m, labels, teachers, budget, cfg, seeds).front());
}

}  // namespace amalgam
