#pragma once

#include <optional>
#include <vector>

#include "amalgam/nn/losses.hpp"
#include "amalgam/nn/network.hpp"

namespace amalgam {

struct Batch {
  Matrix inputs;                    // B x d
  std::vector<std::size_t> labels;  // B entries in [0, C)

  std::size_t size() const { return labels.size(); }
};

enum class LossKind {
  ce,              // cross-entropy
  logit_matching,  // (1-a) CE(p, y) + a ||z - z_T||^2
  prob_matching,   // (1-a) CE(p, y) + a KL(p || p_T)
};

// Supervision for the composite losses. Targets are constants: no gradient
// flows into them.
struct AuxTargets {
  double alpha = 0.0;
  Matrix target_logits;  // B x C, used by logit_matching
  Matrix target_probs;   // B x C, used by prob_matching
};

struct Gradients {
  std::vector<Layer> params;     // same shapes as Network::layers
  std::optional<Matrix> inputs;  // B x d when requested

  bool all_finite() const {
    for (const auto& l : params)
      if (!l.weight.all_finite() || !amalgam::all_finite(l.bias)) return false;
    return !inputs || inputs->all_finite();
  }
};

// Batch means of the loss and its two components.
struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double distill = 0.0;  // MSE or KL term, unweighted
};

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
  Matrix logits;  // forward-pass logits the gradients were taken at
};

namespace detail {

inline void check_batch(const Network& net, const Batch& batch) {
  check_input(net, batch.inputs);
  if (batch.labels.size() != batch.inputs.rows())
    throw InvalidArgument("backward: label count does not match batch rows");
  for (auto y : batch.labels)
    if (y >= net.num_classes()) throw InvalidArgument("backward: label out of range");
}

// Reverse pass given dL/dlogits. Fills parameter and/or input gradients.
inline void backprop(const Network& net, const Matrix& inputs, const ForwardTrace& trace,
                     Matrix delta, bool want_params, bool want_inputs, Gradients& out) {
  const std::size_t depth = net.layers.size();
  if (want_params) out.params.resize(depth);
  for (std::size_t l = depth; l-- > 0;) {
    const Layer& layer = net.layers[l];
    const Matrix& below = l == 0 ? inputs : trace.activations[l - 1];
    const std::size_t fan_in = layer.weight.rows();
    const std::size_t fan_out = layer.weight.cols();
    if (want_params) {
      Layer g{Matrix(fan_in, fan_out), Vector(fan_out, 0.0)};
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        const auto d = delta.row(r);
        const auto a = below.row(r);
        for (std::size_t c = 0; c < fan_out; ++c) g.bias[c] += d[c];
        for (std::size_t k = 0; k < fan_in; ++k) {
          const double ak = a[k];
          if (ak == 0.0) continue;
          auto gw = g.weight.row(k);
          for (std::size_t c = 0; c < fan_out; ++c) gw[c] += ak * d[c];
        }
      }
      out.params[l] = std::move(g);
    }
    if (l == 0 && !want_inputs) break;
    Matrix prev(delta.rows(), fan_in);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const auto d = delta.row(r);
      auto p = prev.row(r);
      for (std::size_t k = 0; k < fan_in; ++k) {
        const auto w = layer.weight.row(k);
        double s = 0.0;
        for (std::size_t c = 0; c < fan_out; ++c) s += w[c] * d[c];
        p[k] = s;
      }
    }
    if (l > 0) {
      const Matrix& act = trace.activations[l - 1];
      if (net.spec.activation == Activation::relu) {
        for (std::size_t i = 0; i < prev.size(); ++i)
          if (act.data()[i] <= 0.0) prev.data()[i] = 0.0;
      } else {
        for (std::size_t i = 0; i < prev.size(); ++i) {
          const double a = act.data()[i];
          prev.data()[i] *= 1.0 - a * a;
        }
      }
    } else {
      out.inputs = std::move(prev);
      break;
    }
    delta = std::move(prev);
  }
}

// dCE/dz for one row, written into g (accumulates scale * gradient).
inline void add_ce_logit_grad(std::span<const double> p, std::size_t y, double scale,
                              std::span<double> g) {
  if (p[y] <= kProbFloor) return;  // floored branch is constant in z
  for (std::size_t c = 0; c < p.size(); ++c) g[c] += scale * (p[c] - (c == y ? 1.0 : 0.0));
}

// dKL(p||q)/dz through the softmax Jacobian, honoring the log floors.
inline void add_kl_logit_grad(std::span<const double> p, std::span<const double> q, double scale,
                              std::span<double> g) {
  const std::size_t n = p.size();
  Vector dp(n);
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lq = std::log(std::max(q[i], kProbFloor));
    dp[i] = p[i] > kProbFloor ? std::log(p[i]) + 1.0 - lq : std::log(kProbFloor) - lq;
    mean += p[i] * dp[i];
  }
  for (std::size_t i = 0; i < n; ++i) g[i] += scale * p[i] * (dp[i] - mean);
}

}  // namespace detail

// Mean batch loss and exact reverse-mode gradients w.r.t. every parameter and,
// when requested, every input feature.
inline BackwardResult backward(const Network& net, const Batch& batch, LossKind kind,
                               bool want_input_grads, const AuxTargets& aux = {}) {
  detail::check_batch(net, batch);
  const std::size_t rows = batch.size();
  const std::size_t classes = net.num_classes();
  if (kind == LossKind::logit_matching &&
      (aux.target_logits.rows() != rows || aux.target_logits.cols() != classes))
    throw InvalidArgument("backward: target_logits shape mismatch");
  if (kind == LossKind::prob_matching &&
      (aux.target_probs.rows() != rows || aux.target_probs.cols() != classes))
    throw InvalidArgument("backward: target_probs shape mismatch");
  const double alpha = kind == LossKind::ce ? 0.0 : aux.alpha;
  if (alpha < 0.0 || alpha > 1.0) throw InvalidArgument("backward: alpha outside [0, 1]");

  const ForwardTrace trace = forward_trace(net, batch.inputs);
  const Matrix& logits = trace.logits();
  Matrix delta(rows, classes);
  Vector p(classes);
  const double inv_b = 1.0 / static_cast<double>(rows);
  BackwardResult result;
  double ce_sum = 0.0, distill_sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto z = logits.row(r);
    softmax_into(z, p);
    const std::size_t y = batch.labels[r];
    const double ce = cross_entropy(p, y);
    ce_sum += ce;
    auto g = delta.row(r);
    detail::add_ce_logit_grad(p, y, (1.0 - alpha) * inv_b, g);
    if (kind == LossKind::logit_matching) {
      const auto zt = aux.target_logits.row(r);
      distill_sum += mse_logits(z, zt);
      for (std::size_t c = 0; c < classes; ++c) g[c] += alpha * inv_b * 2.0 * (z[c] - zt[c]);
    } else if (kind == LossKind::prob_matching) {
      const auto pt = aux.target_probs.row(r);
      distill_sum += kl_div(p, pt);
      detail::add_kl_logit_grad(p, pt, alpha * inv_b, g);
    }
  }
  result.loss.ce = ce_sum * inv_b;
  result.loss.distill = distill_sum * inv_b;
  result.loss.total = (1.0 - alpha) * result.loss.ce + alpha * result.loss.distill;
  detail::backprop(net, batch.inputs, trace, std::move(delta), true, want_input_grads,
                   result.grads);
  result.logits = trace.logits();
  return result;
}

// Per-row CE losses and per-row input gradients of each row's own CE (no batch
// averaging). Parameter gradients are skipped. This is the attack primitive.
struct InputGradients {
  Vector losses;
  Matrix grads;
};

inline InputGradients ce_input_gradients(const Network& net, const Matrix& inputs,
                                         std::span<const std::size_t> labels) {
  detail::check_input(net, inputs);
  if (labels.size() != inputs.rows())
    throw InvalidArgument("ce_input_gradients: label count mismatch");
  const ForwardTrace trace = forward_trace(net, inputs);
  const std::size_t classes = net.num_classes();
  Matrix delta(inputs.rows(), classes);
  Vector p(classes);
  InputGradients out;
  out.losses.resize(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    if (labels[r] >= classes) throw InvalidArgument("ce_input_gradients: label out of range");
    softmax_into(trace.logits().row(r), p);
    out.losses[r] = cross_entropy(p, labels[r]);
    detail::add_ce_logit_grad(p, labels[r], 1.0, delta.row(r));
  }
  Gradients g;
  detail::backprop(net, inputs, trace, std::move(delta), false, true, g);
  out.grads = std::move(*g.inputs);
  return out;
}

}  // namespace amalgam
