#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "amalgam/cli/config.hpp"
#include "amalgam/data/metrics.hpp"

namespace amalgam::cli {

struct RunData {
  Dataset train;
  Dataset test;
};

inline Dataset with_domain(Dataset ds, const DataConfig& d, const char* key) {
  ds.domain = Domain::uniform(ds.dim(), d.domain_lo, d.domain_hi);
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(key, e.what());
  }
  return ds;
}

inline RunData load_data(const DataConfig& d) {
  RunData out;
  if (d.kind == "csv") {
    out.train = load_csv_dataset(d.train_path, d.domain_lo, d.domain_hi);
    out.test = load_csv_dataset(d.test_path, d.domain_lo, d.domain_hi);
    if (out.train.dim() != out.test.dim()) throw ConfigError("data.test_path", "feature count differs from training set");
  } else if (d.kind == "moons") {
    out.train = with_domain(gen_two_moons(d.n_train, d.noise, d.train_seed), d, "data.domain_lo");
    out.test = with_domain(gen_two_moons(d.n_test, d.noise, d.test_seed), d, "data.domain_lo");
  } else {
    out.train = with_domain(gen_spirals(d.n_train, d.turns, d.noise, d.train_seed), d, "data.domain_lo");
    out.test = with_domain(gen_spirals(d.n_test, d.turns, d.noise, d.test_seed), d, "data.domain_lo");
  }
  out.test.split = Split::test;
  return out;
}

// Writes files under one directory; every CSV starts with the provenance comment.
class OutputDir {
 public:
  OutputDir(std::string dir, std::string comment) : dir_(std::move(dir)), comment_(std::move(comment)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_ + "': " + ec.message());
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }
  const std::string& comment() const { return comment_; }

  void write(const std::string& name, const std::function<void(std::ostream&)>& body) {
    auto os = csv::open_for_write(path(name));
    body(os);
    os.flush();
    if (!os) throw IoError("write failed: " + path(name));
    written_.push_back(name);
  }
  void network(const std::string& name, const Network& net) {
    save_network(path(name), net);
    written_.push_back(name);
  }
  const std::vector<std::string>& written() const { return written_; }

 private:
  std::string dir_;
  std::string comment_;
  std::vector<std::string> written_;
};

namespace detail {

inline NetworkSpec sized(NetworkSpec s, const RunData& data, std::uint64_t seed_offset = 0) {
  s.input_dim = data.train.dim();
  s.layer_widths.push_back(std::max(data.train.num_classes(), data.test.num_classes()));
  s.init_seed += seed_offset;
  return s;
}

inline std::vector<AttackSpec> eval_attacks(const Experiment& e, const Domain& domain) {
  auto out = e.eval_attacks;
  for (auto& a : out) a.budget.domain = domain;
  return out;
}

inline Network load_input_network(const std::string& path, const RunData& data) {
  Network net = load_network(path);
  if (net.input_dim() != data.test.dim())
    throw ConfigError("input.networks", "'" + path + "' expects " + std::to_string(net.input_dim()) +
                                            " features, data has " + std::to_string(data.test.dim()));
  return net;
}

inline void write_eval(OutputDir& out, const std::string& name, const Network& net, const Experiment& e,
                       const RunData& data, const std::string& extra = {}) {
  const EvalReport rep = evaluate(net, data.test, eval_attacks(e, data.test.domain), e.threads);
  out.write(name, [&](std::ostream& os) { write_eval_csv(os, rep, out.comment() + extra); });
}

inline void write_grid(OutputDir& out, const Network& net, const Experiment& e, const Dataset& ds) {
  if (e.grid_resolution == 0 || ds.dim() != 2) return;
  const auto grid = boundary_grid(net, ds.domain.lo, ds.domain.hi, e.grid_resolution);
  out.write("grid.csv", [&](std::ostream& os) { write_grid_csv(os, grid, out.comment()); });
}

inline void write_history(OutputDir& out, const std::string& name, const TrainHistory& h, std::size_t n) {
  out.write(name, [&](std::ostream& os) { write_history_csv(os, h, n, out.comment()); });
}

inline std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  return stem + "_" + std::to_string(i + 1) + ext;
}

}  // namespace detail

// Runs one experiment and returns the names of the files written under output.dir.
inline std::vector<std::string> run_experiment(const Experiment& e) {
  const RunData data = load_data(e.data);
  OutputDir out(e.output_dir, "seed=" + std::to_string(e.seed) + " mode=" + std::string(to_string(e.mode)));
  out.write("config-resolved.txt", [&](std::ostream& os) { write_resolved(os, e); });
  const TrainConfig& cfg = e.train;
  const NetworkSpec student = detail::sized(e.student, data);

  switch (e.mode) {
    case Mode::natural:
    case Mode::sat: {
      const auto m = e.mode == Mode::natural ? train_natural(student, data.train, cfg, &data.test)
                                             : train_sat(student, data.train, cfg, &data.test);
      out.network("model.net", m.net);
      detail::write_history(out, "history.csv", m.history, 0);
      detail::write_eval(out, "eval.csv", m.net, e, data);
      detail::write_grid(out, m.net, e, data.test);
      break;
    }
    case Mode::distill1: {
      const auto pair = train_single_teacher_distill(detail::sized(e.teacher, data), student, data.train, cfg, &data.test);
      out.network("student.net", pair.student.net);
      out.network("teacher.net", pair.teacher.net);
      detail::write_history(out, "history.csv", pair.student.history, 1);
      detail::write_history(out, "teacher_history.csv", pair.teacher.history, 0);
      detail::write_eval(out, "eval.csv", pair.student.net, e, data);
      detail::write_eval(out, "eval_teacher.csv", pair.teacher.net, e, data);
      detail::write_grid(out, pair.student.net, e, data.test);
      break;
    }
    case Mode::ataka: {
      std::vector<NetworkSpec> teachers;
      for (std::size_t i = 0; i < e.teacher_count; ++i) teachers.push_back(detail::sized(e.teacher, data, i));
      const auto res = train_ataka(teachers, student, data.train, cfg, &data.test);
      out.network("student.net", res.student);
      for (std::size_t i = 0; i < res.teachers.size(); ++i) {
        out.network(detail::indexed("teacher", i, ".net"), res.teachers[i]);
        detail::write_eval(out, detail::indexed("eval_teacher", i, ".csv"), res.teachers[i], e, data);
      }
      detail::write_history(out, "history.csv", res.history, teachers.size());
      detail::write_eval(out, "eval.csv", res.student, e, data);
      detail::write_grid(out, res.student, e, data.test);
      break;
    }
    case Mode::cataka: {
      std::vector<NetworkSpec> specs;
      for (std::size_t i = 0; i < e.student_count; ++i) specs.push_back(detail::sized(e.student, data, i));
      const auto res = train_cataka(specs, data.train, cfg, &data.test);
      const auto attacks = detail::eval_attacks(e, data.test.domain);
      std::vector<EvalReport> reports;
      for (std::size_t i = 0; i < res.students.size(); ++i) {
        out.network(detail::indexed("student", i, ".net"), res.students[i]);
        reports.push_back(evaluate(res.students[i], data.test, attacks, e.threads));
        out.write(detail::indexed("eval_student", i, ".csv"),
                  [&](std::ostream& os) { write_eval_csv(os, reports.back(), out.comment()); });
      }
      // The strongest student under the last (PGD) attack stands for the run.
      std::size_t best = 0;
      for (std::size_t i = 1; i < reports.size(); ++i)
        if (reports[i].robust.back().second > reports[best].robust.back().second) best = i;
      detail::write_history(out, "history.csv", res.history, specs.size());
      out.write("eval.csv", [&](std::ostream& os) {
        write_eval_csv(os, reports[best], out.comment() + " student=" + std::to_string(best + 1));
      });
      detail::write_grid(out, res.students[best], e, data.test);
      break;
    }
    case Mode::diversity: {
      std::vector<Network> teachers;
      if (e.input_networks.empty()) {
        for (std::size_t i = 0; i < e.teacher_count; ++i) {
          teachers.push_back(train_sat(detail::sized(e.teacher, data, i), data.train, cfg, &data.test).net);
          out.network(detail::indexed("teacher", i, ".net"), teachers.back());
        }
      } else {
        for (const auto& p : e.input_networks) teachers.push_back(detail::load_input_network(p, data));
      }
      std::vector<std::size_t> rows(std::min(e.diversity_sources, data.test.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i * data.test.size() / rows.size();
      const Batch b = data.test.gather(rows);
      const Dataset sources{b.inputs, b.labels, data.test.domain, Split::test};
      AttackBudget budget = cfg.svgd_budget();
      budget.domain = data.test.domain;
      const auto cmp = compare_diversity(teachers, sources, budget, cfg.svgd, e.seed);
      out.write("diversity.csv", [&](std::ostream& os) {
        write_comment(os, out.comment() + " sources=" + std::to_string(cmp.sources));
        csv::write_row(os, {"method", "dist", "avg_ce", "std_ce", "max_ce"});
        for (const auto& [name, r] : {std::pair{"pgd_restarts", cmp.pgd}, std::pair{"svgd", cmp.svgd}})
          csv::write_row(os, {name, format_double(r.dist), format_double(r.avg_ce), format_double(r.std_ce),
                              format_double(r.max_ce)});
      });
      break;
    }
    case Mode::evaluate: {
      const Network net = detail::load_input_network(e.input_networks.front(), data);
      detail::write_eval(out, "eval.csv", net, e, data);
      break;
    }
    case Mode::boundary: {
      const Network net = detail::load_input_network(e.input_networks.front(), data);
      if (net.input_dim() != 2) throw ConfigError("input.networks", "boundary mode needs a 2-feature network");
      const auto grid = boundary_grid(net, data.test.domain.lo, data.test.domain.hi, e.grid_resolution);
      out.write("grid.csv", [&](std::ostream& os) { write_grid_csv(os, grid, out.comment()); });
      break;
    }
  }
  return out.written();
}

// Side-by-side summary of eval.csv from each run directory: run,clean,<attack>...
inline void compare_runs(const std::vector<std::string>& dirs, std::ostream& os) {
  if (dirs.empty()) throw ConfigError("", "compare: no run directories given");
  std::vector<std::string> columns{"clean"};
  std::vector<std::map<std::string, std::string>> rows;
  for (const auto& dir : dirs) {
    const auto file = (std::filesystem::path(dir) / "eval.csv").string();
    if (!std::filesystem::exists(file)) throw ConfigError(dir, "missing eval.csv");
    auto is = csv::open_for_read(file);
    std::map<std::string, std::string> row;
    for (const auto& [metric, value] : read_metric_csv(is)) {
      if (metric == "samples" || metric.starts_with("excluded:")) continue;
      if (std::find(columns.begin(), columns.end(), metric) == columns.end()) columns.push_back(metric);
      row[metric] = value;
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> header{"run"};
  header.insert(header.end(), columns.begin(), columns.end());
  csv::write_row(os, header);
  for (std::size_t r = 0; r < dirs.size(); ++r) {
    std::vector<std::string> line{dirs[r]};
    for (const auto& c : columns) line.push_back(rows[r].count(c) ? rows[r].at(c) : "");
    csv::write_row(os, line);
  }
}

}  // namespace amalgam::cli
