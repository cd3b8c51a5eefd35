#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "amalgam/nn/matrix.hpp"

namespace amalgam {

// Floor applied to every probability before a log.
inline constexpr double kProbFloor = 1e-12;

inline void softmax_into(std::span<const double> logits, std::span<double> out) {
  const double shift = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    total += out[i];
  }
  for (double& p : out) p /= total;
}

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidArgument("softmax: empty logits");
  Vector out(logits.size());
  softmax_into(logits, out);
  return out;
}

inline double cross_entropy(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw InvalidArgument("cross_entropy: label out of range");
  return -std::log(std::max(probs[label], kProbFloor));
}

// Squared Euclidean distance between two logit vectors, no averaging.
inline double mse_logits(std::span<const double> z1, std::span<const double> z2) {
  if (z1.size() != z2.size()) throw InvalidArgument("mse_logits: length mismatch");
  return squared_distance(z1, z2);
}

// KL(p || q) with floored logs. Clamped at zero against rounding.
inline double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("kl_div: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    s += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(q[i], kProbFloor)));
  return std::max(s, 0.0);
}

}  // namespace amalgam
