#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "amalgam/amalgam/amalgamation.hpp"
#include "amalgam/attacks/svgd.hpp"
#include "amalgam/core/parallel.hpp"
#include "amalgam/data/metrics.hpp"
#include "amalgam/distill/losses.hpp"
#include "amalgam/nn/sgd.hpp"

namespace amalgam {

// Initial rate divided by each milestone's divisor once that epoch is reached (0-based).
struct LrSchedule {
  double initial = 0.05;
  std::vector<std::pair<int, double>> milestones{{140, 10.0}, {170, 10.0}};

  double at(int epoch) const {
    double lr = initial;
    for (const auto& [e, div] : milestones)
      if (epoch >= e) lr /= div;
    return lr;
  }

  void validate() const {
    if (!(initial > 0.0)) throw InvalidArgument("lr: initial rate must be > 0");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (!(milestones[i].second > 0.0)) throw InvalidArgument("lr: milestone divisor must be > 0");
      if (i > 0 && milestones[i].first <= milestones[i - 1].first)
        throw InvalidArgument("lr: milestones must be strictly increasing");
    }
  }
};

// What one optimizer step saw; handed to TrainConfig::observer.
struct StepRecord {
  int epoch = 0;
  std::size_t batch = 0;
  LossBreakdown student;
  Vector teacher_losses;  // per teacher (AT-AKA) or per-student Eq.-9 term (CAT-AKA)
  Matrix supervision;     // z_T rows, p_T rows (pareto) or z_S rows (CAT-AKA)
};

using StepObserver = std::function<void(const StepRecord&)>;

struct TrainConfig {
  double alpha = 0.9;
  double beta = 1.0;
  AmalgamationKind amalgamation = AmalgamationKind::soft;
  int epochs = 200;
  std::size_t batch_size = 32;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  // Training-time PGD (SAT and single-teacher distillation). An empty domain
  // is filled from the dataset.
  AttackBudget budget{0.15, 0.0375, 10, {}};
  bool pgd_random_init = true;

  // SVGD shares budget.eps_max; step and iteration count are its own.
  SVGDConfig svgd{3, 0.5, 1.0, Pairing::per_particle_teacher, 0};
  double svgd_step_size = 0.01;
  int svgd_iterations = 20;
  std::size_t n_teachers = 3;

  // Per-epoch robust-accuracy probe (PGD with random start).
  AttackBudget probe{0.15, 0.0375, 20, {}};
  std::size_t probe_samples = 200;  // 0 = whole probe set

  int threads = 1;
  bool update_student_first = false;  // apply the student step before the teacher steps
  StepObserver observer;

  AttackBudget svgd_budget() const { return {budget.eps_max, svgd_step_size, svgd_iterations, budget.domain}; }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
    if (!std::isfinite(beta)) throw InvalidArgument("beta must be finite");
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (batch_size == 0) throw InvalidArgument("batch_size must be >= 1");
    lr.validate();
    if (momentum < 0.0 || weight_decay < 0.0) throw InvalidArgument("momentum and weight_decay must be >= 0");
    if (threads < 1) throw InvalidArgument("threads must be >= 1");
    if (svgd_iterations < 0 || !(svgd_step_size >= 0.0)) throw InvalidArgument("svgd step/iterations invalid");
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss_student = 0.0;
  Vector loss_teachers;
  double acc_clean = 0.0;
  double acc_robust = 0.0;
  Vector lambda_mean;
  // Per-model accuracies when several models are trained side by side (CAT-AKA).
  Vector model_acc_clean;
  Vector model_acc_robust;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

inline void write_history_csv(std::ostream& os, const TrainHistory& h, std::size_t n_teachers,
                              const std::string& comment = {}) {
  write_comment(os, comment);
  std::vector<std::string> header{"epoch", "loss_student"};
  for (std::size_t i = 0; i < n_teachers; ++i) header.push_back("loss_t" + std::to_string(i + 1));
  header.insert(header.end(), {"acc_clean", "acc_robust"});
  for (std::size_t i = 0; i < n_teachers; ++i) header.push_back("lambda_mean_" + std::to_string(i + 1));
  csv::write_row(os, header);
  for (const auto& r : h.epochs) {
    std::vector<std::string> row{std::to_string(r.epoch), format_double(r.loss_student)};
    for (std::size_t i = 0; i < n_teachers; ++i)
      row.push_back(i < r.loss_teachers.size() ? format_double(r.loss_teachers[i]) : "");
    row.push_back(format_double(r.acc_clean));
    row.push_back(format_double(r.acc_robust));
    for (std::size_t i = 0; i < n_teachers; ++i)
      row.push_back(i < r.lambda_mean.size() ? format_double(r.lambda_mean[i]) : "");
    csv::write_row(os, row);
  }
}

namespace detail {

// Stream tags keep the seeded randomness of each purpose independent.
enum : std::uint64_t { kTagShuffle = 1, kTagProbe = 2, kTagSat = 3, kTagDistill = 4, kTagSvgd = 5 };

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {kTagShuffle, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < order.size(); lo += size)
    out.emplace_back(order.begin() + lo, order.begin() + std::min(order.size(), lo + size));
  return out;
}

inline std::vector<std::uint64_t> row_seeds(std::uint64_t seed, std::uint64_t tag, int epoch,
                                            std::span<const std::size_t> rows) {
  std::vector<std::uint64_t> out;
  for (auto r : rows) out.push_back(derive_seed(seed, {tag, static_cast<std::uint64_t>(epoch), r}));
  return out;
}

inline void fill_domain(AttackBudget& b, const Dataset& ds) {
  if (b.domain.dim() == 0) b.domain = ds.domain;
}

inline TrainConfig resolved(const TrainConfig& cfg, const Dataset& ds) {
  cfg.validate();
  ds.validate();
  TrainConfig c = cfg;
  fill_domain(c.budget, ds);
  fill_domain(c.probe, ds);
  c.budget.validate();
  c.probe.validate();
  c.svgd_budget().validate();
  return c;
}

inline Dataset probe_subset(const Dataset& probe, std::size_t limit) {
  if (limit == 0 || limit >= probe.size()) return probe;
  std::vector<std::size_t> rows(limit);
  std::iota(rows.begin(), rows.end(), 0);
  const Batch b = probe.gather(rows);
  return {b.inputs, b.labels, probe.domain, probe.split};
}

inline std::pair<double, double> probe_accuracy(const Network& net, const Dataset& probe, const TrainConfig& cfg,
                                                int epoch) {
  AttackSpec pgd{"pgd", AttackKind::pgd, cfg.probe, true,
                 derive_seed(cfg.seed, {kTagProbe, static_cast<std::uint64_t>(epoch)})};
  const EvalReport rep = evaluate(net, probe, {pgd}, cfg.threads);
  return {rep.clean_acc, rep.robust.front().second};
}

inline void check_finite_loss(double loss, int epoch, const char* who) {
  if (!std::isfinite(loss))
    throw DivergenceError(std::string(who) + ": non-finite loss at epoch " + std::to_string(epoch + 1), epoch + 1);
}

inline void step_or_diverge(Network& net, const Gradients& g, const SgdParams& p, SgdState& st, int epoch) {
  try {
    sgd_step(net, g, p, st);
  } catch (const NonFiniteError& e) {
    throw DivergenceError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1), epoch + 1);
  }
}

inline SgdParams sgd_params(const TrainConfig& cfg, int epoch) {
  return {cfg.lr.at(epoch), cfg.momentum, cfg.weight_decay};
}

// Runs SVGD for every row of a batch, split into `threads` contiguous chunks.
inline std::vector<ParticleSet> batch_particles(const Batch& b, std::span<const std::size_t> rows,
                                                std::span<const Network> models, const TrainConfig& cfg,
                                                int epoch) {
  const auto seeds = row_seeds(cfg.seed, kTagSvgd, epoch, rows);
  const AttackBudget svgd_budget = cfg.svgd_budget();
  const std::size_t workers = std::min<std::size_t>(b.size(), static_cast<std::size_t>(cfg.threads));
  const std::size_t chunk = (b.size() + workers - 1) / workers;
  std::vector<std::vector<ParticleSet>> parts(workers);
  parallel_for(workers, cfg.threads, [&](std::size_t w) {
    const std::size_t lo = w * chunk, hi = std::min(b.size(), lo + chunk);
    if (lo >= hi) return;
    Matrix x(hi - lo, b.inputs.cols());
    for (std::size_t r = lo; r < hi; ++r) std::copy(b.inputs.row(r).begin(), b.inputs.row(r).end(), x.row(r - lo).begin());
    parts[w] = svgd_generate_batch(x, std::span(b.labels).subspan(lo, hi - lo), models, svgd_budget, cfg.svgd,
                                   std::span(seeds).subspan(lo, hi - lo));
  });
  std::vector<ParticleSet> out;
  for (auto& p : parts) std::move(p.begin(), p.end(), std::back_inserter(out));
  return out;
}

// Rows of particle index i across the batch.
inline Matrix particle_rows(const std::vector<ParticleSet>& sets, std::size_t i) {
  Matrix m(sets.size(), sets.front().source.size());
  for (std::size_t s = 0; s < sets.size(); ++s) std::copy(sets[s].particles[i].begin(), sets[s].particles[i].end(), m.row(s).begin());
  return m;
}

struct EpochAccumulator {
  double student = 0.0;
  Vector teachers;
  Vector lambda;
  std::size_t batches = 0;
  std::size_t samples = 0;

  explicit EpochAccumulator(std::size_t n) : teachers(n, 0.0), lambda(n, 0.0) {}

  EpochRecord finish(int epoch) const {
    EpochRecord r;
    r.epoch = epoch + 1;
    const double nb = static_cast<double>(std::max<std::size_t>(batches, 1));
    r.loss_student = student / nb;
    for (double t : teachers) r.loss_teachers.push_back(t / nb);
    for (double l : lambda) r.lambda_mean.push_back(samples ? l / static_cast<double>(samples) : 0.0);
    return r;
  }
};

inline void record_probe(EpochRecord& rec, const Network& net, const Dataset& probe, const TrainConfig& cfg,
                         int epoch) {
  std::tie(rec.acc_clean, rec.acc_robust) = probe_accuracy(net, probe, cfg, epoch);
}

}  // namespace detail

struct TrainedModel {
  Network net;
  TrainHistory history;
};

// Plain cross-entropy training. When `probe` is empty the training set is probed.
inline TrainedModel train_natural(const NetworkSpec& spec, const Dataset& ds, const TrainConfig& cfg_in,
                                  const Dataset* probe = nullptr) {
  const TrainConfig cfg = detail::resolved(cfg_in, ds);
  const Dataset probe_set = detail::probe_subset(probe ? *probe : ds, cfg.probe_samples);
  TrainedModel out{init_network(spec), {}};
  SgdState st;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochAccumulator acc(0);
    std::size_t bi = 0;
    for (const auto& rows : detail::batches(detail::epoch_order(ds.size(), cfg.seed, epoch), cfg.batch_size)) {
      const Batch b = ds.gather(rows);
      BackwardResult r = backward(out.net, b, LossKind::ce, false);
      detail::check_finite_loss(r.loss.total, epoch, "natural");
      if (cfg.observer) cfg.observer({epoch, bi, r.loss, {}, {}});
      detail::step_or_diverge(out.net, r.grads, detail::sgd_params(cfg, epoch), st, epoch);
      acc.student += r.loss.total;
      ++acc.batches;
      ++bi;
    }
    EpochRecord rec = acc.finish(epoch);
    detail::record_probe(rec, out.net, probe_set, cfg, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

// PGD adversarial training: every batch is attacked against the current parameters.
inline TrainedModel train_sat(const NetworkSpec& spec, const Dataset& ds, const TrainConfig& cfg_in,
                              const Dataset* probe = nullptr) {
  const TrainConfig cfg = detail::resolved(cfg_in, ds);
  const Dataset probe_set = detail::probe_subset(probe ? *probe : ds, cfg.probe_samples);
  TrainedModel out{init_network(spec), {}};
  SgdState st;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochAccumulator acc(0);
    std::size_t bi = 0;
    for (const auto& rows : detail::batches(detail::epoch_order(ds.size(), cfg.seed, epoch), cfg.batch_size)) {
      Batch b = ds.gather(rows);
      const auto seeds = detail::row_seeds(cfg.seed, detail::kTagSat, epoch, rows);
      b.inputs = pgd_batch(out.net, b.inputs, b.labels, cfg.budget, cfg.pgd_random_init, seeds);
      BackwardResult r = backward(out.net, b, LossKind::ce, false);
      detail::check_finite_loss(r.loss.total, epoch, "sat");
      if (cfg.observer) cfg.observer({epoch, bi, r.loss, {}, {}});
      detail::step_or_diverge(out.net, r.grads, detail::sgd_params(cfg, epoch), st, epoch);
      acc.student += r.loss.total;
      ++acc.batches;
      ++bi;
    }
    EpochRecord rec = acc.finish(epoch);
    detail::record_probe(rec, out.net, probe_set, cfg, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

// Student on clean inputs, matched to a fixed teacher's logits on PGD inputs
// attacked against that teacher.
inline TrainedModel distill_from_teacher(const Network& teacher, const NetworkSpec& student_spec, const Dataset& ds,
                                         const TrainConfig& cfg_in, const Dataset* probe = nullptr) {
  const TrainConfig cfg = detail::resolved(cfg_in, ds);
  if (teacher.num_classes() != student_spec.num_classes())
    throw InvalidArgument("distill: teacher/student class count mismatch");
  const Dataset probe_set = detail::probe_subset(probe ? *probe : ds, cfg.probe_samples);
  TrainedModel out{init_network(student_spec), {}};
  SgdState st;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochAccumulator acc(1);
    std::size_t bi = 0;
    for (const auto& rows : detail::batches(detail::epoch_order(ds.size(), cfg.seed, epoch), cfg.batch_size)) {
      const Batch b = ds.gather(rows);
      const auto seeds = detail::row_seeds(cfg.seed, detail::kTagDistill, epoch, rows);
      const Matrix adv = pgd_batch(teacher, b.inputs, b.labels, cfg.budget, cfg.pgd_random_init, seeds);
      AuxTargets aux{cfg.alpha, forward(teacher, adv), {}};
      double teacher_ce = 0.0;
      for (std::size_t s = 0; s < b.size(); ++s)
        teacher_ce += cross_entropy(softmax(aux.target_logits.row(s)), b.labels[s]);
      teacher_ce /= static_cast<double>(b.size());
      BackwardResult r = backward(out.net, b, LossKind::logit_matching, false, aux);
      detail::check_finite_loss(r.loss.total, epoch, "distill");
      if (cfg.observer) cfg.observer({epoch, bi, r.loss, {teacher_ce}, aux.target_logits});
      detail::step_or_diverge(out.net, r.grads, detail::sgd_params(cfg, epoch), st, epoch);
      acc.student += r.loss.total;
      acc.teachers[0] += teacher_ce;
      acc.lambda[0] += static_cast<double>(b.size());
      acc.samples += b.size();
      ++acc.batches;
      ++bi;
    }
    EpochRecord rec = acc.finish(epoch);
    detail::record_probe(rec, out.net, probe_set, cfg, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

struct DistilledPair {
  TrainedModel student;
  TrainedModel teacher;
};

// Offline single-teacher baseline: SAT teacher first, then distillation.
inline DistilledPair train_single_teacher_distill(const NetworkSpec& teacher_spec, const NetworkSpec& student_spec,
                                                  const Dataset& ds, const TrainConfig& cfg,
                                                  const Dataset* probe = nullptr) {
  TrainedModel teacher = train_sat(teacher_spec, ds, cfg, probe);
  TrainedModel student = distill_from_teacher(teacher.net, student_spec, ds, cfg, probe);
  return {std::move(student), std::move(teacher)};
}

struct EnsembleResult {
  Network student;
  std::vector<Network> teachers;
  TrainHistory history;
};

// Online ensemble distillation: SVGD particles attack the teachers, each
// teacher trains on CE over its own particle, and the student (clean inputs)
// matches the amalgamated pre-update teacher outputs.
inline EnsembleResult train_ataka(const std::vector<NetworkSpec>& teacher_specs, const NetworkSpec& student_spec,
                                  const Dataset& ds, const TrainConfig& cfg_in, const Dataset* probe = nullptr) {
  TrainConfig cfg = detail::resolved(cfg_in, ds);
  const std::size_t n = teacher_specs.size();
  if (n == 0) throw InvalidArgument("ataka: at least one teacher required");
  if (cfg.svgd.n_particles != n) throw InvalidArgument("ataka: svgd.n_particles must equal the teacher count");
  cfg.svgd.validate(n);
  for (const auto& s : teacher_specs)
    if (s.num_classes() != student_spec.num_classes()) throw InvalidArgument("ataka: class count mismatch");
  const Dataset probe_set = detail::probe_subset(probe ? *probe : ds, cfg.probe_samples);

  EnsembleResult out{init_network(student_spec), {}, {}};
  for (const auto& s : teacher_specs) out.teachers.push_back(init_network(s));
  SgdState student_state;
  std::vector<SgdState> teacher_state(n);
  const std::size_t classes = student_spec.num_classes();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochAccumulator acc(n);
    const SgdParams sgd = detail::sgd_params(cfg, epoch);
    std::size_t bi = 0;
    for (const auto& rows : detail::batches(detail::epoch_order(ds.size(), cfg.seed, epoch), cfg.batch_size)) {
      const Batch b = ds.gather(rows);
      const auto sets = detail::batch_particles(b, rows, out.teachers, cfg, epoch);

      std::vector<BackwardResult> teacher_res(n);
      parallel_for(n, cfg.threads, [&](std::size_t i) {
        teacher_res[i] = backward(out.teachers[i], {detail::particle_rows(sets, i), b.labels}, LossKind::ce, false);
      });

      AuxTargets aux;
      aux.alpha = cfg.alpha;
      const bool pareto = cfg.amalgamation == AmalgamationKind::pareto;
      Matrix& targets = pareto ? aux.target_probs : aux.target_logits;
      targets = Matrix(b.size(), classes);
      const Matrix student_logits = pareto ? forward(out.student, b.inputs) : Matrix();
      for (std::size_t s = 0; s < b.size(); ++s) {
        std::vector<Vector> z;
        for (std::size_t i = 0; i < n; ++i) z.push_back(teacher_res[i].logits.row_vector(s));
        const LogitBundle bundle = make_bundle(std::move(z), b.labels[s]);
        AmalgamationWeights w;
        Vector target;
        switch (cfg.amalgamation) {
          case AmalgamationKind::naive: {
            auto a = amalgamate_naive(bundle);
            target = std::move(a.logits), w = std::move(a.weights);
            break;
          }
          case AmalgamationKind::linear: {
            auto a = amalgamate_linear(bundle);
            target = std::move(a.logits), w = std::move(a.weights);
            break;
          }
          case AmalgamationKind::soft: {
            auto a = amalgamate_soft(bundle, cfg.beta);
            target = std::move(a.logits), w = std::move(a.weights);
            break;
          }
          case AmalgamationKind::pareto: {
            w = solve_pareto_weights(softmax(student_logits.row(s)), bundle.probs);
            target = combine_probs(w, bundle.probs);
            break;
          }
        }
        std::copy(target.begin(), target.end(), targets.row(s).begin());
        for (std::size_t i = 0; i < n; ++i) acc.lambda[i] += w.lambda[i];
      }

      BackwardResult student_res = backward(out.student, b, pareto ? LossKind::prob_matching : LossKind::logit_matching,
                                            false, aux);
      detail::check_finite_loss(student_res.loss.total, epoch, "ataka student");
      Vector teacher_losses;
      for (const auto& r : teacher_res) {
        detail::check_finite_loss(r.loss.total, epoch, "ataka teacher");
        teacher_losses.push_back(r.loss.total);
      }
      if (cfg.observer) cfg.observer({epoch, bi, student_res.loss, teacher_losses, targets});

      auto step_teachers = [&] {
        parallel_for(n, cfg.threads, [&](std::size_t i) {
          detail::step_or_diverge(out.teachers[i], teacher_res[i].grads, sgd, teacher_state[i], epoch);
        });
      };
      if (cfg.update_student_first) {
        detail::step_or_diverge(out.student, student_res.grads, sgd, student_state, epoch);
        step_teachers();
      } else {
        step_teachers();
        detail::step_or_diverge(out.student, student_res.grads, sgd, student_state, epoch);
      }

      acc.student += student_res.loss.total;
      for (std::size_t i = 0; i < n; ++i) acc.teachers[i] += teacher_losses[i];
      acc.samples += b.size();
      ++acc.batches;
      ++bi;
    }
    EpochRecord rec = acc.finish(epoch);
    detail::record_probe(rec, out.student, probe_set, cfg, epoch);
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

struct CollaborativeResult {
  std::vector<Network> students;
  TrainHistory history;

  // Index of the student with the highest final robust accuracy (lowest index on ties).
  std::size_t best_student() const {
    if (history.epochs.empty()) return 0;
    return argmax(history.epochs.back().model_acc_robust);
  }
};

// Collaborative variant: n same-size students, each fed its own SVGD particle,
// supervised by the amalgamation of all students' pre-update logits.
inline CollaborativeResult train_cataka(const std::vector<NetworkSpec>& student_specs, const Dataset& ds,
                                        const TrainConfig& cfg_in, const Dataset* probe = nullptr) {
  TrainConfig cfg = detail::resolved(cfg_in, ds);
  const std::size_t n = student_specs.size();
  if (n == 0) throw InvalidArgument("cataka: at least one student required");
  for (const auto& s : student_specs)
    if (!s.same_shape(student_specs.front())) throw InvalidArgument("cataka: student specs must share one shape");
  if (cfg.svgd.n_particles != n) throw InvalidArgument("cataka: svgd.n_particles must equal the student count");
  if (cfg.amalgamation == AmalgamationKind::pareto)
    throw InvalidArgument("cataka: pareto amalgamation applies to probabilities; use naive, linear or soft");
  cfg.svgd.validate(n);
  const Dataset probe_set = detail::probe_subset(probe ? *probe : ds, cfg.probe_samples);

  CollaborativeResult out;
  for (const auto& s : student_specs) out.students.push_back(init_network(s));
  std::vector<SgdState> state(n);
  const std::size_t classes = student_specs.front().num_classes();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::EpochAccumulator acc(n);
    const SgdParams sgd = detail::sgd_params(cfg, epoch);
    std::size_t bi = 0;
    for (const auto& rows : detail::batches(detail::epoch_order(ds.size(), cfg.seed, epoch), cfg.batch_size)) {
      const Batch b = ds.gather(rows);
      const auto sets = detail::batch_particles(b, rows, out.students, cfg, epoch);
      std::vector<Batch> own(n);
      std::vector<Matrix> logits(n);
      for (std::size_t i = 0; i < n; ++i) {
        own[i] = {detail::particle_rows(sets, i), b.labels};
        logits[i] = forward(out.students[i], own[i].inputs);
      }
      AuxTargets aux;
      aux.alpha = cfg.alpha;
      aux.target_logits = Matrix(b.size(), classes);
      for (std::size_t s = 0; s < b.size(); ++s) {
        std::vector<Vector> z;
        for (std::size_t i = 0; i < n; ++i) z.push_back(logits[i].row_vector(s));
        const LogitBundle bundle = make_bundle(std::move(z), b.labels[s]);
        Amalgamated a = cfg.amalgamation == AmalgamationKind::naive    ? amalgamate_naive(bundle)
                        : cfg.amalgamation == AmalgamationKind::linear ? amalgamate_linear(bundle)
                                                                        : amalgamate_soft(bundle, cfg.beta);
        std::copy(a.logits.begin(), a.logits.end(), aux.target_logits.row(s).begin());
        for (std::size_t i = 0; i < n; ++i) acc.lambda[i] += a.weights.lambda[i];
      }
      std::vector<BackwardResult> res(n);
      parallel_for(n, cfg.threads, [&](std::size_t i) {
        res[i] = backward(out.students[i], own[i], LossKind::logit_matching, false, aux);
      });
      LossBreakdown total;
      Vector terms;
      for (const auto& r : res) {
        detail::check_finite_loss(r.loss.total, epoch, "cataka");
        total.total += r.loss.total;
        total.ce += r.loss.ce;
        total.distill += r.loss.distill;
        terms.push_back(r.loss.total);
      }
      if (cfg.observer) cfg.observer({epoch, bi, total, terms, aux.target_logits});
      parallel_for(n, cfg.threads, [&](std::size_t i) {
        detail::step_or_diverge(out.students[i], res[i].grads, sgd, state[i], epoch);
      });
      acc.student += total.total;
      for (std::size_t i = 0; i < n; ++i) acc.teachers[i] += terms[i];
      acc.samples += b.size();
      ++acc.batches;
      ++bi;
    }
    EpochRecord rec = acc.finish(epoch);
    for (const auto& s : out.students) {
      const auto [clean, robust] = detail::probe_accuracy(s, probe_set, cfg, epoch);
      rec.model_acc_clean.push_back(clean);
      rec.model_acc_robust.push_back(robust);
    }
    const std::size_t best = argmax(rec.model_acc_robust);
    rec.acc_clean = rec.model_acc_clean[best];
    rec.acc_robust = rec.model_acc_robust[best];
    out.history.epochs.push_back(std::move(rec));
  }
  return out;
}

}  // namespace amalgam
