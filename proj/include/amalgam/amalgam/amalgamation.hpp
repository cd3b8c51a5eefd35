#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string_view>
#include <vector>

#include "amalgam/nn/losses.hpp"

namespace amalgam {

// Outputs of n networks for one labelled sample.
struct LogitBundle {
  std::vector<Vector> logits;
  std::vector<Vector> probs;
  Vector ce_losses;

  std::size_t size() const { return logits.size(); }
  std::size_t num_classes() const { return logits.empty() ? 0 : logits.front().size(); }
};

inline LogitBundle make_bundle(std::vector<Vector> logits, std::size_t label) {
  if (logits.empty()) throw InvalidArgument("make_bundle: no logits");
  LogitBundle b;
  for (const auto& z : logits) {
    if (z.size() != logits.front().size()) throw InvalidArgument("make_bundle: class count mismatch");
    b.probs.push_back(softmax(z));
    b.ce_losses.push_back(cross_entropy(b.probs.back(), label));
  }
  b.logits = std::move(logits);
  return b;
}

// Convex weights over the n contributors.
struct AmalgamationWeights {
  Vector lambda;

  bool on_simplex(double tol = 1e-9) const {
    double s = 0.0;
    for (double v : lambda) {
      if (!(v >= 0.0)) return false;
      s += v;
    }
    return std::abs(s - 1.0) <= tol;
  }

  static AmalgamationWeights uniform(std::size_t n) {
    return {Vector(n, 1.0 / static_cast<double>(n))};
  }
};

struct Amalgamated {
  Vector logits;
  AmalgamationWeights weights;
};

namespace detail {

inline Vector weighted_logits(const LogitBundle& b, const Vector& lambda) {
  Vector z(b.num_classes(), 0.0);
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t c = 0; c < z.size(); ++c) z[c] += lambda[i] * b.logits[i][c];
  return z;
}

inline void check_bundle(const LogitBundle& b) {
  if (b.size() == 0 || b.probs.size() != b.size() || b.ce_losses.size() != b.size())
    throw InvalidArgument("amalgamation: malformed bundle");
}

}  // namespace detail

// Index of the highest-loss network; ties go to the lowest index.
inline std::size_t naive_index(const LogitBundle& b) {
  detail::check_bundle(b);
  return argmax(b.ce_losses);
}

// Logits of the highest-loss network.
inline Amalgamated amalgamate_naive(const LogitBundle& b) {
  const std::size_t k = naive_index(b);
  Amalgamated out{b.logits[k], {Vector(b.size(), 0.0)}};
  out.weights.lambda[k] = 1.0;
  return out;
}

// Loss-proportional weights; uniform when every loss is below 1e-12.
inline Amalgamated amalgamate_linear(const LogitBundle& b) {
  detail::check_bundle(b);
  const bool all_zero =
      std::all_of(b.ce_losses.begin(), b.ce_losses.end(), [](double l) { return l < 1e-12; });
  AmalgamationWeights w;
  if (all_zero) {
    w = AmalgamationWeights::uniform(b.size());
  } else {
    const double total = std::accumulate(b.ce_losses.begin(), b.ce_losses.end(), 0.0);
    for (double l : b.ce_losses) w.lambda.push_back(l / total);
  }
  return {detail::weighted_logits(b, w.lambda), std::move(w)};
}

// Softmax over beta * losses.
inline Amalgamated amalgamate_soft(const LogitBundle& b, double beta) {
  detail::check_bundle(b);
  if (!std::isfinite(beta)) throw InvalidArgument("amalgamate_soft: beta must be finite");
  Vector scaled(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) scaled[i] = beta * b.ce_losses[i];
  AmalgamationWeights w{softmax(scaled)};
  return {detail::weighted_logits(b, w.lambda), std::move(w)};
}

// Euclidean projection onto the probability simplex (sort-and-threshold).
inline Vector project_simplex(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("project_simplex: empty vector");
  Vector u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return out;
}

inline bool on_simplex(std::span<const double> p, double tol = 1e-9) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

// || p_S - sum_i lambda_i p_i ||^2
inline double pareto_objective(std::span<const double> student_probs,
                               const std::vector<Vector>& teacher_probs, std::span<const double> lambda) {
  double s = 0.0;
  for (std::size_t c = 0; c < student_probs.size(); ++c) {
    double mix = 0.0;
    for (std::size_t i = 0; i < teacher_probs.size(); ++i) mix += lambda[i] * teacher_probs[i][c];
    const double r = student_probs[c] - mix;
    s += r * r;
  }
  return s;
}

struct ParetoOptions {
  int max_iterations = 2000;
  double tolerance = 1e-12;  // stop when the objective changes by less than this
};

// Minimizes || p_S - sum_i lambda_i p_i ||^2 over the simplex by projected
// gradient descent from uniform weights. Fixed step 1 / (2 L) with
// L = n * max_i |p_i|^2 bounding the largest Gram eigenvalue.
inline AmalgamationWeights solve_pareto_weights(std::span<const double> student_probs,
                                                const std::vector<Vector>& teacher_probs,
                                                const ParetoOptions& opt = {}) {
  const std::size_t n = teacher_probs.size();
  if (n == 0) throw InvalidArgument("solve_pareto_weights: no teachers");
  constexpr double kSimplexTol = 1e-9;
  if (!on_simplex(student_probs, kSimplexTol))
    throw InvalidArgument("solve_pareto_weights: student probs not on simplex");
  for (const auto& p : teacher_probs) {
    if (p.size() != student_probs.size()) throw InvalidArgument("solve_pareto_weights: class count mismatch");
    if (!on_simplex(p, kSimplexTol)) throw InvalidArgument("solve_pareto_weights: teacher probs not on simplex");
  }
  const std::size_t classes = student_probs.size();
  double max_norm2 = 0.0;
  for (const auto& p : teacher_probs)
    max_norm2 = std::max(max_norm2, std::inner_product(p.begin(), p.end(), p.begin(), 0.0));
  const double step = 1.0 / (2.0 * static_cast<double>(n) * max_norm2);

  Vector lambda(n, 1.0 / static_cast<double>(n));
  double objective = pareto_objective(student_probs, teacher_probs, lambda);
  Vector residual(classes), candidate(n);
  for (int it = 0; it < opt.max_iterations; ++it) {
    for (std::size_t c = 0; c < classes; ++c) {
      double mix = 0.0;
      for (std::size_t i = 0; i < n; ++i) mix += lambda[i] * teacher_probs[i][c];
      residual[c] = mix - student_probs[c];
    }
    for (std::size_t i = 0; i < n; ++i) {
      double g = 0.0;
      for (std::size_t c = 0; c < classes; ++c) g += teacher_probs[i][c] * residual[c];
      candidate[i] = lambda[i] - step * 2.0 * g;
    }
    lambda = project_simplex(candidate);
    const double next = pareto_objective(student_probs, teacher_probs, lambda);
    const bool converged = std::abs(objective - next) < opt.tolerance;
    objective = next;
    if (converged) break;
  }
  return {std::move(lambda)};
}

// sum_i lambda_i p_i
inline Vector combine_probs(const AmalgamationWeights& w, const std::vector<Vector>& teacher_probs) {
  if (w.lambda.size() != teacher_probs.size() || teacher_probs.empty())
    throw InvalidArgument("combine_probs: weight/teacher count mismatch");
  const std::size_t classes = teacher_probs.front().size();
  Vector out(classes, 0.0);
  for (std::size_t i = 0; i < teacher_probs.size(); ++i) {
    if (teacher_probs[i].size() != classes) throw InvalidArgument("combine_probs: class count mismatch");
    for (std::size_t c = 0; c < classes; ++c) out[c] += w.lambda[i] * teacher_probs[i][c];
  }
  return out;
}

enum class AmalgamationKind { naive, linear, soft, pareto };

inline std::string_view to_string(AmalgamationKind k) {
  switch (k) {
    case AmalgamationKind::naive: return "naive";
    case AmalgamationKind::linear: return "linear";
    case AmalgamationKind::soft: return "soft";
    case AmalgamationKind::pareto: return "pareto";
  }
  return "?";
}

inline AmalgamationKind parse_amalgamation(std::string_view s) {
  if (s == "naive") return AmalgamationKind::naive;
  if (s == "linear") return AmalgamationKind::linear;
  if (s == "soft") return AmalgamationKind::soft;
  if (s == "pareto") return AmalgamationKind::pareto;
  throw InvalidArgument("unknown amalgamation '" + std::string(s) + "'");
}

}  // namespace amalgam
