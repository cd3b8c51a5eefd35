#pragma once

// Test-only oracles. Nothing here calls into the backward pass.

#include <functional>
#include <vector>

#include "amalgam/nn/backward.hpp"

namespace amalgam::testing {

inline Network random_network(std::size_t input_dim, std::vector<std::size_t> widths, Activation act,
                              std::uint64_t seed, double bias_scale = 0.3) {
  Network net = init_network({input_dim, std::move(widths), act, seed});
  Rng rng(seed ^ 0xb1a5ULL);
  for (auto& l : net.layers)
    for (double& b : l.bias) b = uniform(rng, -bias_scale, bias_scale);
  return net;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = 0.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  Rng rng(seed);
  for (double& v : m.data()) v = uniform(rng, lo, hi);
  return m;
}

// Mean batch loss recomputed from forward() and the scalar loss functions.
inline double reference_loss(const Network& net, const Batch& batch, LossKind kind, const AuxTargets& aux) {
  const Matrix logits = forward(net, batch.inputs);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const Vector z = logits.row_vector(r);
    const Vector p = softmax(z);
    double l = cross_entropy(p, batch.labels[r]);
    if (kind == LossKind::logit_matching)
      l = (1 - aux.alpha) * l + aux.alpha * mse_logits(z, aux.target_logits.row(r));
    if (kind == LossKind::prob_matching)
      l = (1 - aux.alpha) * l + aux.alpha * kl_div(p, aux.target_probs.row(r));
    total += l;
  }
  return total / static_cast<double>(batch.size());
}

inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace amalgam::testing
