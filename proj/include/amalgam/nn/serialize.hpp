#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "amalgam/nn/network.hpp"

namespace amalgam {

// Shortest form is not required; %.17g round-trips every double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InvalidArgument("not a number: '" + std::string(s) + "'");
  return v;
}

// Text format:
//   layers d0 d1 ... dk activation
//   one line per parameter array (W1, b1, W2, b2, ...), row-major, space separated.
inline void write_network(std::ostream& os, const Network& net) {
  os << "layers " << net.spec.input_dim;
  for (auto w : net.spec.layer_widths) os << ' ' << w;
  os << ' ' << to_string(net.spec.activation) << '\n';
  auto line = [&](const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? " " : "") << format_double(values[i]);
    os << '\n';
  };
  for (const auto& layer : net.layers) {
    line(layer.weight.data());
    line(layer.bias);
  }
}

inline Network read_network(std::istream& is) {
  std::string header;
  std::size_t lineno = 1;
  while (std::getline(is, header) && (header.empty() || header[0] == '#')) ++lineno;
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  if (tag != "layers") throw ParseError("network: expected 'layers' header", lineno);
  std::vector<std::string> tokens;
  for (std::string t; hs >> t;) tokens.push_back(t);
  if (tokens.size() < 3) throw ParseError("network: header needs input dim, widths, activation", lineno);
  NetworkSpec spec;
  spec.activation = parse_activation(tokens.back());
  try {
    spec.input_dim = std::stoul(tokens[0]);
    for (std::size_t i = 1; i + 1 < tokens.size(); ++i) spec.layer_widths.push_back(std::stoul(tokens[i]));
  } catch (const std::exception&) {
    throw ParseError("network: bad dimension in header", lineno);
  }
  spec.validate();
  Network net = init_network(spec);
  auto read_line = [&](std::vector<double>& dst) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("network: truncated parameter block", lineno + 1);
    ++lineno;
    std::istringstream ls(line);
    std::size_t i = 0;
    for (std::string t; ls >> t; ++i) {
      if (i >= dst.size()) throw ParseError("network: too many values", lineno);
      try {
        dst[i] = parse_double(t);
      } catch (const InvalidArgument& e) {
        throw ParseError(std::string("network: ") + e.what(), lineno);
      }
    }
    if (i != dst.size()) throw ParseError("network: too few values", lineno);
  };
  for (auto& layer : net.layers) {
    read_line(layer.weight.data());
    read_line(layer.bias);
  }
  return net;
}

inline void save_network(const std::string& path, const Network& net) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_network(os, net);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Network load_network(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_network(is);
}

}  // namespace amalgam
