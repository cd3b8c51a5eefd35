#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include "amalgam/attacks/budget.hpp"
#include "amalgam/core/csv.hpp"
#include "amalgam/core/rng.hpp"
#include "amalgam/nn/backward.hpp"
#include "amalgam/nn/serialize.hpp"

namespace amalgam {

enum class Split { train, test };

struct Dataset {
  Matrix features;                  // N x d
  std::vector<std::size_t> labels;  // N
  Domain domain;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  std::size_t num_classes() const {
    return labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  }

  void validate() const {
    if (labels.empty()) throw InvalidArgument("Dataset: empty");
    if (features.rows() != labels.size()) throw InvalidArgument("Dataset: feature/label count mismatch");
    domain.validate();
    if (domain.dim() != features.cols()) throw InvalidArgument("Dataset: domain dimension mismatch");
    for (std::size_t r = 0; r < features.rows(); ++r)
      if (!domain.contains(features.row(r)))
        throw InvalidArgument("Dataset: row " + std::to_string(r) + " outside domain");
  }

  Batch gather(std::span<const std::size_t> rows) const {
    Batch b{Matrix(rows.size(), dim()), {}};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = features.row(rows[i]);
      std::copy(src.begin(), src.end(), b.inputs.row(i).begin());
      b.labels.push_back(labels[rows[i]]);
    }
    return b;
  }

  Batch all() const { return {features, labels}; }
};

namespace detail {

// Noiseless moons occupy x in [-1, 2], y in [-0.5, 1]. Both axes share one
// scale so x spans [0, 1] and y is centred; jittered points are clamped.
inline constexpr double kMoonsScale = 1.0 / 3.0;
inline constexpr double kMoonsOffsetX = 1.0, kMoonsScaleX = kMoonsScale;
inline constexpr double kMoonsOffsetY = 1.25, kMoonsScaleY = kMoonsScale;

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

// Position of a noiseless moon point in the unit square; class 0 is the upper arc.
inline Vector moon_point(std::size_t cls, double t) {
  const double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
  const double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
  return {(x + detail::kMoonsOffsetX) * detail::kMoonsScaleX,
          (y + detail::kMoonsOffsetY) * detail::kMoonsScaleY};
}

// Two interleaving half circles, n/2 points each at evenly spaced angles, with
// isotropic Gaussian jitter (in the original moon units) before rescaling.
inline Dataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("gen_two_moons: n must be >= 2");
  if (n % 2 != 0) throw InvalidArgument("gen_two_moons: n must be even");
  if (noise < 0.0) throw InvalidArgument("gen_two_moons: noise must be >= 0");
  const std::size_t half = n / 2;
  Dataset ds{Matrix(n, 2), {}, Domain::uniform(2, 0.0, 1.0), Split::train};
  Rng rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i < half ? 0 : 1;
    const std::size_t k = i % half;
    const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(k) / static_cast<double>(half - 1);
    double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      x += noise * jitter(rng);
      y += noise * jitter(rng);
    }
    ds.features(i, 0) = detail::clamp01((x + detail::kMoonsOffsetX) * detail::kMoonsScaleX);
    ds.features(i, 1) = detail::clamp01((y + detail::kMoonsOffsetY) * detail::kMoonsScaleY);
    ds.labels.push_back(cls);
  }
  return ds;
}

// Point on arm `cls` of a two-arm Archimedean spiral at parameter s in [0, 1],
// in the unit square.
inline Vector spiral_point(std::size_t cls, double s, double turns) {
  const double angle = s * turns * 2.0 * std::numbers::pi + (cls == 0 ? 0.0 : std::numbers::pi);
  const double radius = 0.05 + 0.4 * s;
  return {0.5 + radius * std::cos(angle), 0.5 + radius * std::sin(angle)};
}

inline Dataset gen_spirals(std::size_t n, double turns, double noise, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("gen_spirals: n must be >= 2");
  if (n % 2 != 0) throw InvalidArgument("gen_spirals: n must be even");
  if (!(turns > 0.0)) throw InvalidArgument("gen_spirals: turns must be > 0");
  if (noise < 0.0) throw InvalidArgument("gen_spirals: noise must be >= 0");
  const std::size_t half = n / 2;
  Dataset ds{Matrix(n, 2), {}, Domain::uniform(2, 0.0, 1.0), Split::train};
  Rng rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i < half ? 0 : 1;
    const std::size_t k = i % half;
    const double s = half == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(half - 1);
    Vector p = spiral_point(cls, s, turns);
    if (noise > 0.0) {
      p[0] += noise * jitter(rng);
      p[1] += noise * jitter(rng);
    }
    ds.features(i, 0) = detail::clamp01(p[0]);
    ds.features(i, 1) = detail::clamp01(p[1]);
    ds.labels.push_back(cls);
  }
  return ds;
}

// Header f1..fd,label then one row per sample at 17 significant digits.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  std::vector<std::string> header;
  for (std::size_t c = 0; c < ds.dim(); ++c) header.push_back("f" + std::to_string(c + 1));
  header.push_back("label");
  csv::write_row(os, header);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    std::vector<std::string> row;
    for (double v : ds.features.row(r)) row.push_back(format_double(v));
    row.push_back(std::to_string(ds.labels[r]));
    csv::write_row(os, row);
  }
}

inline void save_dataset_csv(const std::string& path, const Dataset& ds) {
  auto os = csv::open_for_write(path);
  write_dataset_csv(os, ds);
}

// Rows are d feature columns followed by an integer label. A header row whose
// last field is "label" is skipped. Errors name the 1-based file line.
inline Dataset read_dataset_csv(std::istream& is, double domain_lo, double domain_hi) {
  auto records = csv::read_records(is);
  if (!records.empty() && !records.front().fields.empty() && records.front().fields.back() == "label")
    records.erase(records.begin());
  if (records.empty()) throw ParseError("dataset: no data rows", 0);
  const std::size_t width = records.front().fields.size();
  if (width < 2) throw ParseError("dataset: need at least one feature and a label", records.front().line);
  const std::size_t d = width - 1;
  Dataset ds{Matrix(records.size(), d), {}, Domain::uniform(d, domain_lo, domain_hi), Split::train};
  ds.domain.validate();
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != width)
      throw ParseError("dataset: line " + std::to_string(rec.line) + ": expected " + std::to_string(width) +
                           " fields, got " + std::to_string(rec.fields.size()),
                       rec.line);
    for (std::size_t c = 0; c < d; ++c) {
      double v;
      try {
        v = parse_double(rec.fields[c]);
      } catch (const InvalidArgument&) {
        throw ParseError("dataset: line " + std::to_string(rec.line) + ": bad feature '" + rec.fields[c] + "'",
                         rec.line);
      }
      if (!(v >= domain_lo && v <= domain_hi))
        throw ParseError("dataset: line " + std::to_string(rec.line) + ", column " + std::to_string(c + 1) +
                             ": feature " + rec.fields[c] + " outside domain",
                         rec.line);
      ds.features(r, c) = v;
    }
    const std::string& lab = rec.fields[d];
    std::size_t label = 0;
    const bool digits = !lab.empty() && std::all_of(lab.begin(), lab.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
    if (!digits) throw ParseError("dataset: line " + std::to_string(rec.line) + ": bad label '" + lab + "'", rec.line);
    try {
      label = std::stoul(lab);
    } catch (const std::exception&) {
      throw ParseError("dataset: line " + std::to_string(rec.line) + ": bad label '" + lab + "'", rec.line);
    }
    ds.labels.push_back(label);
  }
  return ds;
}

inline Dataset load_csv_dataset(const std::string& path, double domain_lo, double domain_hi) {
  auto is = csv::open_for_read(path);
  return read_dataset_csv(is, domain_lo, domain_hi);
}

}  // namespace amalgam
