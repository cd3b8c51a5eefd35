#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "amalgam/core/errors.hpp"
#include "amalgam/core/rng.hpp"
#include "amalgam/nn/matrix.hpp"

namespace amalgam {

enum class Activation { relu, tanh };

inline std::string_view to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + std::string(s) + "'");
}

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_widths;  // last entry is the class count
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  std::size_t num_classes() const { return layer_widths.empty() ? 0 : layer_widths.back(); }

  void validate() const {
    if (input_dim == 0) throw InvalidArgument("NetworkSpec: input_dim must be >= 1");
    if (layer_widths.empty()) throw InvalidArgument("NetworkSpec: layer_widths is empty");
    for (auto w : layer_widths)
      if (w == 0) throw InvalidArgument("NetworkSpec: zero layer width");
  }

  // Same layer stack, seeds ignored.
  bool same_shape(const NetworkSpec& o) const {
    return input_dim == o.input_dim && layer_widths == o.layer_widths && activation == o.activation;
  }
};

// weight is fan_in x fan_out, so a layer computes x * W + b.
struct Layer {
  Matrix weight;
  Vector bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct Network {
  NetworkSpec spec;
  std::vector<Layer> layers;

  std::size_t input_dim() const { return spec.input_dim; }
  std::size_t num_classes() const { return spec.num_classes(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.all_finite() || !amalgam::all_finite(l.bias)) return false;
    return true;
  }
};

// He-style uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)); zero biases.
inline Network init_network(const NetworkSpec& spec) {
  spec.validate();
  Network net{spec, {}};
  Rng rng(spec.init_seed);
  std::size_t fan_in = spec.input_dim;
  for (std::size_t width : spec.layer_widths) {
    Layer layer{Matrix(fan_in, width), Vector(width, 0.0)};
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& w : layer.weight.data()) w = uniform(rng, -bound, bound);
    net.layers.push_back(std::move(layer));
    fan_in = width;
  }
  return net;
}

namespace detail {

inline void check_input(const Network& net, const Matrix& inputs) {
  if (inputs.cols() != net.input_dim())
    throw InvalidArgument("forward: input width " + std::to_string(inputs.cols()) +
                          " does not match network input_dim " + std::to_string(net.input_dim()));
  if (inputs.rows() == 0) throw InvalidArgument("forward: empty batch");
}

// out = in * W + b, row by row. Each output row depends only on its input row.
inline void affine(const Matrix& in, const Layer& layer, Matrix& out) {
  const std::size_t fan_in = layer.weight.rows();
  const std::size_t fan_out = layer.weight.cols();
  out = Matrix(in.rows(), fan_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto dst = out.row(r);
    std::copy(layer.bias.begin(), layer.bias.end(), dst.begin());
    const auto src = in.row(r);
    for (std::size_t k = 0; k < fan_in; ++k) {
      const double x = src[k];
      if (x == 0.0) continue;
      const auto w = layer.weight.row(k);
      for (std::size_t c = 0; c < fan_out; ++c) dst[c] += x * w[c];
    }
  }
}

inline void activate(Activation act, Matrix& m) {
  if (act == Activation::relu) {
    for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
  } else {
    for (double& v : m.data()) v = std::tanh(v);
  }
}

}  // namespace detail

// Post-activation values of every layer; the last entry holds the logits.
struct ForwardTrace {
  std::vector<Matrix> activations;

  const Matrix& logits() const { return activations.back(); }
};

inline ForwardTrace forward_trace(const Network& net, const Matrix& inputs) {
  detail::check_input(net, inputs);
  ForwardTrace trace;
  trace.activations.resize(net.layers.size());
  const Matrix* in = &inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    detail::affine(*in, net.layers[l], trace.activations[l]);
    if (l + 1 < net.layers.size()) detail::activate(net.spec.activation, trace.activations[l]);
    in = &trace.activations[l];
  }
  return trace;
}

inline Matrix forward(const Network& net, const Matrix& inputs) {
  return std::move(forward_trace(net, inputs).activations.back());
}

inline Vector forward(const Network& net, std::span<const double> x) {
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.row(0).begin());
  return forward(net, m).row_vector(0);
}

inline std::size_t predict(const Network& net, std::span<const double> x) {
  return argmax(forward(net, x));
}

}  // namespace amalgam
