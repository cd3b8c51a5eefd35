#pragma once

#include <string>
#include <vector>

#include "amalgam/nn/backward.hpp"

namespace amalgam {

struct SgdParams {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Momentum buffers, lazily shaped on the first step.
struct SgdState {
  std::vector<Layer> velocity;
};

// v <- momentum * v + (g + wd * theta);  theta <- theta - lr * v.
inline void sgd_step(Network& net, const std::vector<Layer>& grads, const SgdParams& p,
                     SgdState& state) {
  if (!(p.lr > 0.0)) throw InvalidArgument("sgd_step: lr must be > 0");
  if (grads.size() != net.layers.size()) throw InvalidArgument("sgd_step: gradient layer count");
  for (std::size_t l = 0; l < grads.size(); ++l) {
    if (grads[l].weight.rows() != net.layers[l].weight.rows() ||
        grads[l].weight.cols() != net.layers[l].weight.cols() ||
        grads[l].bias.size() != net.layers[l].bias.size())
      throw InvalidArgument("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
    if (!grads[l].weight.all_finite() || !all_finite(grads[l].bias))
      throw NonFiniteError("sgd_step: non-finite gradient in layer " + std::to_string(l));
  }
  if (state.velocity.empty()) {
    for (const auto& layer : net.layers)
      state.velocity.push_back({Matrix(layer.weight.rows(), layer.weight.cols()),
                                Vector(layer.bias.size(), 0.0)});
  }
  auto update = [&](std::vector<double>& theta, const std::vector<double>& g,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = p.momentum * v[i] + (g[i] + p.weight_decay * theta[i]);
      theta[i] -= p.lr * v[i];
    }
  };
  for (std::size_t l = 0; l < grads.size(); ++l) {
    update(net.layers[l].weight.data(), grads[l].weight.data(), state.velocity[l].weight.data());
    update(net.layers[l].bias, grads[l].bias, state.velocity[l].bias);
  }
}

inline void sgd_step(Network& net, const Gradients& grads, const SgdParams& p, SgdState& state) {
  sgd_step(net, grads.params, p, state);
}

}  // namespace amalgam
