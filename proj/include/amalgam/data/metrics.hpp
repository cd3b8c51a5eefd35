#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "amalgam/attacks/svgd.hpp"
#include "amalgam/core/parallel.hpp"
#include "amalgam/data/dataset.hpp"

namespace amalgam {

// Spread and strength of a set of adversarial samples.
struct DiversityReport {
  double dist = 0.0;  // mean pairwise L-infinity distance
  double avg_ce = 0.0;
  double std_ce = 0.0;  // population standard deviation
  double max_ce = 0.0;
};

inline double mean_pairwise_linf(const std::vector<Vector>& samples) {
  const std::size_t m = samples.size();
  double total = 0.0;
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) total += linf_distance(samples[a], samples[b]);
  return total / (static_cast<double>(m) * static_cast<double>(m - 1) / 2.0);
}

// Report from samples and their already-computed CE losses.
inline DiversityReport diversity_report(const std::vector<Vector>& samples, std::span<const double> losses) {
  if (samples.size() < 2) throw InvalidArgument("diversity_report: need at least 2 samples");
  if (losses.size() != samples.size()) throw InvalidArgument("diversity_report: one loss per sample required");
  DiversityReport r;
  r.dist = mean_pairwise_linf(samples);
  const double m = static_cast<double>(losses.size());
  r.max_ce = losses[0];
  for (double l : losses) {
    r.avg_ce += l;
    r.max_ce = std::max(r.max_ce, l);
  }
  r.avg_ce /= m;
  for (double l : losses) r.std_ce += (l - r.avg_ce) * (l - r.avg_ce);
  r.std_ce = std::sqrt(r.std_ce / m);
  return r;
}

// CE statistics are taken under `net` with every sample labelled y.
inline DiversityReport diversity_report(const std::vector<Vector>& samples, const Network& net, std::size_t y) {
  if (samples.size() < 2) throw InvalidArgument("diversity_report: need at least 2 samples");
  const Matrix logits = forward(net, Matrix::from_rows(samples));
  Vector losses;
  for (std::size_t r = 0; r < logits.rows(); ++r) losses.push_back(cross_entropy(softmax(logits.row(r)), y));
  return diversity_report(samples, losses);
}

struct DiversityComparison {
  DiversityReport pgd;
  DiversityReport svgd;
  std::size_t sources = 0;
};

// SVGD particles against independent PGD restarts from the same sources, with
// one budget (eps, step, iterations) for both. Restart i attacks teacher i mod
// n and is scored the way particle i is. Reports are averaged over sources.
inline DiversityComparison compare_diversity(std::span<const Network> teachers, const Dataset& sources,
                                             const AttackBudget& budget, const SVGDConfig& svgd,
                                             std::uint64_t seed) {
  svgd.validate(teachers.size());
  if (sources.size() == 0) throw InvalidArgument("compare_diversity: no source samples");
  const std::size_t n = svgd.n_particles;
  if (n < 2) throw InvalidArgument("compare_diversity: need at least 2 particles");
  const bool averaged = svgd.pairing == Pairing::averaged_ensemble;
  std::vector<std::uint64_t> seeds;
  for (std::size_t s = 0; s < sources.size(); ++s) seeds.push_back(derive_seed(seed, {1, s}));
  const auto sets = svgd_generate_batch(sources.features, sources.labels, teachers, budget, svgd, seeds);

  DiversityComparison out;
  out.sources = sources.size();
  auto accumulate = [](DiversityReport& into, const DiversityReport& r) {
    into.dist += r.dist;
    into.avg_ce += r.avg_ce;
    into.std_ce += r.std_ce;
    into.max_ce += r.max_ce;
  };
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto x = sources.features.row(s);
    const std::size_t y = sources.labels[s];
    std::vector<Vector> restarts;
    Vector losses;
    for (std::size_t i = 0; i < n; ++i) {
      const Network& target = teachers[i % teachers.size()];
      restarts.push_back(pgd(target, x, y, budget, true, derive_seed(seed, {2, s, i})));
      double l = 0.0;
      if (averaged) {
        for (const auto& t : teachers) l += cross_entropy(softmax(forward(t, restarts.back())), y);
        l /= static_cast<double>(teachers.size());
      } else {
        l = cross_entropy(softmax(forward(target, restarts.back())), y);
      }
      losses.push_back(l);
    }
    accumulate(out.pgd, diversity_report(restarts, losses));
    accumulate(out.svgd, diversity_report(sets[s].particles, sets[s].per_particle_loss));
  }
  for (DiversityReport* r : {&out.pgd, &out.svgd}) {
    const double m = static_cast<double>(sources.size());
    r->dist /= m;
    r->avg_ce /= m;
    r->std_ce /= m;
    r->max_ce /= m;
  }
  return out;
}

enum class AttackKind { fgsm, pgd };

struct AttackSpec {
  std::string name;
  AttackKind kind = AttackKind::pgd;
  AttackBudget budget;  // fgsm uses eps_max only
  bool random_init = true;
  std::uint64_t seed = 0;
};

struct EvalReport {
  double clean_acc = 0.0;
  std::vector<std::pair<std::string, double>> robust;  // in attack order
  std::size_t samples = 0;
  std::map<std::string, std::size_t> excluded;  // per attack, samples whose attack failed

  double robust_acc(const std::string& name) const {
    for (const auto& [n, v] : robust)
      if (n == name) return v;
    throw InvalidArgument("EvalReport: no attack named '" + name + "'");
  }
};

namespace detail {

inline constexpr std::size_t kEvalChunk = 64;

// Per-row correctness for attacked rows [lo, hi); rows whose attack throws are marked -1.
inline void attack_chunk(const Network& net, const Dataset& ds, const AttackSpec& a, std::size_t lo,
                         std::size_t hi, std::vector<int>& outcome) {
  std::vector<std::size_t> rows(hi - lo);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = lo + i;
  auto run = [&](std::span<const std::size_t> idx) {
    const Batch b = ds.gather(idx);
    std::vector<std::uint64_t> seeds;
    for (auto r : idx) seeds.push_back(derive_seed(a.seed, {r}));
    Matrix adv = a.kind == AttackKind::fgsm
                     ? fgsm_batch(net, b.inputs, b.labels, a.budget.eps_max, a.budget.domain)
                     : pgd_batch(net, b.inputs, b.labels, a.budget, a.random_init, seeds);
    const Matrix logits = forward(net, adv);
    for (std::size_t i = 0; i < idx.size(); ++i)
      outcome[idx[i]] = argmax(logits.row(i)) == b.labels[i] ? 1 : 0;
  };
  try {
    run(rows);
  } catch (const NonFiniteError&) {
    for (auto r : rows) {
      try {
        run(std::span<const std::size_t>(&r, 1));
      } catch (const NonFiniteError&) {
        outcome[r] = -1;
      }
    }
  }
}

}  // namespace detail

// Clean accuracy plus robust accuracy under each attack, generated against net.
inline EvalReport evaluate(const Network& net, const Dataset& ds, const std::vector<AttackSpec>& attacks,
                           int threads = 1) {
  if (ds.size() == 0) throw InvalidArgument("evaluate: empty dataset");
  if (ds.dim() != net.input_dim()) throw InvalidArgument("evaluate: dataset/network dimension mismatch");
  EvalReport rep;
  rep.samples = ds.size();
  const Matrix logits = forward(net, ds.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) correct += argmax(logits.row(r)) == ds.labels[r];
  rep.clean_acc = static_cast<double>(correct) / static_cast<double>(ds.size());

  const std::size_t chunks = (ds.size() + detail::kEvalChunk - 1) / detail::kEvalChunk;
  for (const auto& a : attacks) {
    std::vector<int> outcome(ds.size(), 0);
    parallel_for(chunks, threads, [&](std::size_t c) {
      const std::size_t lo = c * detail::kEvalChunk;
      detail::attack_chunk(net, ds, a, lo, std::min(ds.size(), lo + detail::kEvalChunk), outcome);
    });
    std::size_t ok = 0, failed = 0;
    for (int o : outcome) {
      ok += o == 1;
      failed += o == -1;
    }
    const std::size_t counted = ds.size() - failed;
    rep.robust.emplace_back(a.name, counted ? static_cast<double>(ok) / static_cast<double>(counted) : 0.0);
    rep.excluded[a.name] = failed;
  }
  return rep;
}

struct GridCell {
  double x1, x2;
  std::size_t cls;
  double conf;  // max softmax probability
};

// R x R lattice over [lo, hi], row-major with x2 as the slow axis.
inline std::vector<GridCell> boundary_grid(const Network& net, const Vector& lo, const Vector& hi,
                                           std::size_t resolution) {
  if (net.input_dim() != 2) throw InvalidArgument("boundary_grid: network input must be 2-D");
  if (lo.size() != 2 || hi.size() != 2) throw InvalidArgument("boundary_grid: bounds must be 2-vectors");
  if (resolution < 2) throw InvalidArgument("boundary_grid: resolution must be >= 2");
  Matrix pts(resolution * resolution, 2);
  const double steps = static_cast<double>(resolution - 1);
  for (std::size_t j = 0; j < resolution; ++j)
    for (std::size_t i = 0; i < resolution; ++i) {
      pts(j * resolution + i, 0) = lo[0] + (hi[0] - lo[0]) * static_cast<double>(i) / steps;
      pts(j * resolution + i, 1) = lo[1] + (hi[1] - lo[1]) * static_cast<double>(j) / steps;
    }
  const Matrix logits = forward(net, pts);
  std::vector<GridCell> out;
  out.reserve(pts.rows());
  for (std::size_t r = 0; r < pts.rows(); ++r) {
    const Vector p = softmax(logits.row(r));
    const std::size_t cls = argmax(p);
    out.push_back({pts(r, 0), pts(r, 1), cls, p[cls]});
  }
  return out;
}

// ---- CSV writers --------------------------------------------------------

inline void write_comment(std::ostream& os, const std::string& comment) {
  if (!comment.empty()) os << "# " << comment << '\n';
}

inline void write_grid_csv(std::ostream& os, const std::vector<GridCell>& grid, const std::string& comment = {}) {
  write_comment(os, comment);
  csv::write_row(os, {"x1", "x2", "class", "conf"});
  for (const auto& c : grid)
    csv::write_row(os, {format_double(c.x1), format_double(c.x2), std::to_string(c.cls), format_double(c.conf)});
}

inline std::vector<GridCell> read_grid_csv(std::istream& is) {
  auto records = csv::read_records(is);
  if (records.empty() || records.front().fields != std::vector<std::string>{"x1", "x2", "class", "conf"})
    throw ParseError("grid: missing header", records.empty() ? 0 : records.front().line);
  std::vector<GridCell> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i].fields;
    if (f.size() != 4) throw ParseError("grid: expected 4 fields", records[i].line);
    out.push_back({parse_double(f[0]), parse_double(f[1]), std::stoul(f[2]), parse_double(f[3])});
  }
  return out;
}

inline void write_eval_csv(std::ostream& os, const EvalReport& rep, const std::string& comment = {}) {
  write_comment(os, comment);
  csv::write_row(os, {"metric", "value"});
  csv::write_row(os, {"clean", format_double(rep.clean_acc)});
  for (const auto& [name, acc] : rep.robust) csv::write_row(os, {name, format_double(acc)});
  csv::write_row(os, {"samples", std::to_string(rep.samples)});
  for (const auto& [name, n] : rep.excluded) csv::write_row(os, {"excluded:" + name, std::to_string(n)});
}

// metric,value pairs in file order.
inline std::vector<std::pair<std::string, std::string>> read_metric_csv(std::istream& is) {
  auto records = csv::read_records(is);
  if (records.empty() || records.front().fields != std::vector<std::string>{"metric", "value"})
    throw ParseError("eval: missing 'metric,value' header", records.empty() ? 0 : records.front().line);
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].fields.size() != 2) throw ParseError("eval: expected 2 fields", records[i].line);
    out.emplace_back(records[i].fields[0], records[i].fields[1]);
  }
  return out;
}

inline void write_particles_csv(std::ostream& os, const ParticleSet& ps, const std::string& comment = {}) {
  write_comment(os, comment);
  std::vector<std::string> header;
  for (std::size_t c = 0; c < ps.source.size(); ++c) header.push_back("f" + std::to_string(c + 1));
  header.push_back("loss");
  csv::write_row(os, header);
  for (std::size_t i = 0; i < ps.particles.size(); ++i) {
    std::vector<std::string> row;
    for (double v : ps.particles[i]) row.push_back(format_double(v));
    row.push_back(format_double(ps.per_particle_loss[i]));
    csv::write_row(os, row);
  }
}

// Samples and losses from a particle CSV (f1..fd,loss).
inline std::pair<std::vector<Vector>, Vector> read_particles_csv(std::istream& is) {
  auto records = csv::read_records(is);
  if (records.empty() || records.front().fields.empty() || records.front().fields.back() != "loss")
    throw ParseError("particles: missing header", records.empty() ? 0 : records.front().line);
  const std::size_t width = records.front().fields.size();
  std::vector<Vector> samples;
  Vector losses;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i].fields;
    if (f.size() != width) throw ParseError("particles: wrong field count", records[i].line);
    Vector p;
    for (std::size_t c = 0; c + 1 < width; ++c) p.push_back(parse_double(f[c]));
    samples.push_back(std::move(p));
    losses.push_back(parse_double(f.back()));
  }
  return {std::move(samples), std::move(losses)};
}

}  // namespace amalgam
