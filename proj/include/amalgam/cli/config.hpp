#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "amalgam/core/rng.hpp"
#include "amalgam/distill/trainers.hpp"

namespace amalgam::cli {

// Bad or unknown configuration entry; `key()` names the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

enum class Mode { natural, sat, distill1, ataka, cataka, diversity, evaluate, boundary };

inline constexpr std::pair<Mode, std::string_view> kModes[] = {
    {Mode::natural, "natural"}, {Mode::sat, "sat"},         {Mode::distill1, "distill1"},
    {Mode::ataka, "ataka"},     {Mode::cataka, "cataka"},   {Mode::diversity, "diversity"},
    {Mode::evaluate, "evaluate"}, {Mode::boundary, "boundary"}};

inline std::string_view to_string(Mode m) {
  for (const auto& [k, name] : kModes)
    if (k == m) return name;
  return "?";
}

// Every accepted key with its default. An empty default on a seed key means
// "derive from `seed`"; "auto" means "derive from other keys".
struct KeySpec {
  std::string_view key;
  std::string_view fallback;
};

inline constexpr KeySpec kKeys[] = {
    {"mode", ""},
    {"seed", "0"},
    {"threads", "1"},
    {"output.dir", "out"},
    {"data.kind", "moons"},
    {"data.n_train", "400"},
    {"data.n_test", "400"},
    {"data.noise", "0.1"},
    {"data.turns", "1.5"},
    {"data.train_seed", ""},
    {"data.test_seed", ""},
    {"data.train_path", ""},
    {"data.test_path", ""},
    {"data.domain_lo", "0"},
    {"data.domain_hi", "1"},
    {"student.hidden", "16"},
    {"student.activation", "relu"},
    {"student.count", "3"},
    {"student.init_seed", ""},
    {"teacher.hidden", "64,64"},
    {"teacher.activation", "relu"},
    {"teacher.count", "3"},
    {"teacher.init_seed", ""},
    {"train.epochs", "200"},
    {"train.batch_size", "32"},
    {"train.lr", "0.05"},
    {"train.lr_milestones", "140:10,170:10"},
    {"train.momentum", "0.9"},
    {"train.weight_decay", "0.0005"},
    {"train.alpha", "0.9"},
    {"train.beta", "1"},
    {"train.amalgamation", "soft"},
    {"train.update_student_first", "false"},
    {"attack.eps", "0.15"},
    {"attack.step", "0.0375"},
    {"attack.iterations", "10"},
    {"attack.random_init", "true"},
    {"svgd.particles", "auto"},
    {"svgd.sigma", "0.5"},
    {"svgd.gamma", "1"},
    {"svgd.pairing", "per_particle_teacher"},
    {"svgd.step", "0.01"},
    {"svgd.iterations", "20"},
    {"probe.eps", "0.15"},
    {"probe.step", "0.0375"},
    {"probe.iterations", "20"},
    {"probe.samples", "200"},
    {"eval.eps", "0.15"},
    {"eval.step", "0.0375"},
    {"eval.iterations", "20"},
    {"eval.fgsm", "true"},
    {"eval.seed", ""},
    {"input.networks", ""},
    {"grid.resolution", "50"},
    {"diversity.sources", "20"},
};

inline bool known_key(std::string_view key) {
  return std::any_of(std::begin(kKeys), std::end(kKeys), [&](const KeySpec& k) { return k.key == key; });
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// key=value lines; '#' starts a comment line. Unknown and duplicate keys are rejected.
inline std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(lineno) + ": empty key");
    if (!known_key(key)) throw ConfigError(key, "unknown key");
    if (!out.emplace(key, trim(std::string_view(t).substr(eq + 1))).second) throw ConfigError(key, "duplicate key");
  }
  return out;
}

// ---- typed accessors ---------------------------------------------------

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (v.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

}  // namespace detail

class Values {
 public:
  explicit Values(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  const std::string& str(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError(key, "missing");
    return it->second;
  }
  double real(const std::string& key) const {
    try {
      const double v = parse_double(str(key));
      if (!std::isfinite(v)) throw InvalidArgument("");
      return v;
    } catch (const InvalidArgument&) {
      throw ConfigError(key, "expected a finite number, got '" + str(key) + "'");
    }
  }
  double real_in(const std::string& key, double lo, double hi) const {
    const double v = real(key);
    if (v < lo || v > hi)
      throw ConfigError(key, "must lie in [" + format_double(lo) + ", " + format_double(hi) + "]");
    return v;
  }
  double positive(const std::string& key) const {
    const double v = real(key);
    if (!(v > 0.0)) throw ConfigError(key, "must be > 0");
    return v;
  }
  double non_negative(const std::string& key) const {
    const double v = real(key);
    if (v < 0.0) throw ConfigError(key, "must be >= 0");
    return v;
  }
  long long integer(const std::string& key, long long lo) const {
    const auto v = detail::parse_integer<long long>(key, str(key));
    if (v < lo) throw ConfigError(key, "must be >= " + std::to_string(lo));
    return v;
  }
  std::uint64_t u64(const std::string& key) const { return detail::parse_integer<std::uint64_t>(key, str(key)); }
  bool boolean(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
  }
  std::vector<std::size_t> widths(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& f : detail::split_list(str(key))) {
      const auto w = detail::parse_integer<std::size_t>(key, f);
      if (w == 0) throw ConfigError(key, "layer widths must be >= 1");
      out.push_back(w);
    }
    return out;
  }
  template <class F>
  auto parsed(const std::string& key, F&& parse) const {
    try {
      return parse(str(key));
    } catch (const InvalidArgument& e) {
      throw ConfigError(key, e.what());
    }
  }

 private:
  std::map<std::string, std::string> kv_;
};

// ---- resolved experiment ----------------------------------------------

struct DataConfig {
  std::string kind;
  std::size_t n_train = 0, n_test = 0;
  double noise = 0.0, turns = 0.0;
  std::uint64_t train_seed = 0, test_seed = 0;
  std::string train_path, test_path;
  double domain_lo = 0.0, domain_hi = 1.0;
};

struct Experiment {
  Mode mode = Mode::natural;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir;
  DataConfig data;
  NetworkSpec student;  // output width filled once the data is known
  std::size_t student_count = 1;
  NetworkSpec teacher;
  std::size_t teacher_count = 1;
  TrainConfig train;
  std::vector<AttackSpec> eval_attacks;
  std::vector<std::string> input_networks;
  std::size_t grid_resolution = 0;
  std::size_t diversity_sources = 0;
  std::map<std::string, std::string> resolved;  // every key, defaults materialized
};

namespace detail {

inline std::vector<std::pair<int, double>> parse_milestones(const std::string& key, const std::string& v) {
  std::vector<std::pair<int, double>> out;
  for (const auto& item : split_list(v)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError(key, "expected epoch:divisor entries, got '" + item + "'");
    const int epoch = parse_integer<int>(key, item.substr(0, colon));
    double div = 0.0;
    try {
      div = parse_double(item.substr(colon + 1));
    } catch (const InvalidArgument&) {
      throw ConfigError(key, "bad divisor in '" + item + "'");
    }
    out.emplace_back(epoch, div);
  }
  return out;
}

inline NetworkSpec network_spec(const Values& v, const std::string& prefix) {
  NetworkSpec s;
  s.layer_widths = v.widths(prefix + ".hidden");
  s.activation = v.parsed(prefix + ".activation", [](const std::string& x) { return parse_activation(x); });
  s.init_seed = v.u64(prefix + ".init_seed");
  return s;
}

}  // namespace detail

// Fills defaults, checks every key, and builds the typed experiment. Throws
// ConfigError naming the first bad key; nothing is computed before this returns.
inline Experiment resolve(std::map<std::string, std::string> kv) {
  for (const auto& [key, value] : kv)
    if (!known_key(key)) throw ConfigError(key, "unknown key");
  if (!kv.count("mode") || kv["mode"].empty()) throw ConfigError("mode", "required");
  for (const auto& k : kKeys) kv.emplace(std::string(k.key), std::string(k.fallback));

  Values v(kv);
  Experiment e;
  e.seed = v.u64("seed");
  const std::pair<const char*, std::uint64_t> derived[] = {
      {"data.train_seed", 1}, {"data.test_seed", 2}, {"student.init_seed", 3}, {"teacher.init_seed", 4}, {"eval.seed", 5}};
  for (const auto& [key, tag] : derived)
    if (kv[key].empty()) kv[key] = std::to_string(derive_seed(e.seed, {tag}));
  v = Values(kv);

  const auto& mode = v.str("mode");
  const auto m = std::find_if(std::begin(kModes), std::end(kModes), [&](const auto& p) { return p.second == mode; });
  if (m == std::end(kModes)) throw ConfigError("mode", "unknown mode '" + mode + "'");
  e.mode = m->first;
  e.threads = static_cast<int>(v.integer("threads", 1));
  e.output_dir = v.str("output.dir");
  if (e.output_dir.empty()) throw ConfigError("output.dir", "must not be empty");

  auto& d = e.data;
  d.kind = v.str("data.kind");
  if (d.kind != "moons" && d.kind != "spirals" && d.kind != "csv")
    throw ConfigError("data.kind", "expected moons, spirals or csv");
  d.n_train = static_cast<std::size_t>(v.integer("data.n_train", 2));
  d.n_test = static_cast<std::size_t>(v.integer("data.n_test", 2));
  if (d.kind != "csv") {
    if (d.n_train % 2) throw ConfigError("data.n_train", "must be even");
    if (d.n_test % 2) throw ConfigError("data.n_test", "must be even");
  }
  d.noise = v.non_negative("data.noise");
  d.turns = v.positive("data.turns");
  d.train_seed = v.u64("data.train_seed");
  d.test_seed = v.u64("data.test_seed");
  d.train_path = v.str("data.train_path");
  d.test_path = v.str("data.test_path");
  if (d.kind == "csv") {
    if (d.train_path.empty()) throw ConfigError("data.train_path", "required when data.kind=csv");
    if (d.test_path.empty()) throw ConfigError("data.test_path", "required when data.kind=csv");
  }
  d.domain_lo = v.real("data.domain_lo");
  d.domain_hi = v.real("data.domain_hi");
  if (!(d.domain_lo < d.domain_hi)) throw ConfigError("data.domain_hi", "must exceed data.domain_lo");

  e.student = detail::network_spec(v, "student");
  e.teacher = detail::network_spec(v, "teacher");
  e.student_count = static_cast<std::size_t>(v.integer("student.count", 1));
  e.teacher_count = static_cast<std::size_t>(v.integer("teacher.count", 1));

  TrainConfig& t = e.train;
  t.seed = e.seed;
  t.threads = e.threads;
  t.epochs = static_cast<int>(v.integer("train.epochs", 0));
  t.batch_size = static_cast<std::size_t>(v.integer("train.batch_size", 1));
  t.lr.initial = v.positive("train.lr");
  t.lr.milestones = detail::parse_milestones("train.lr_milestones", v.str("train.lr_milestones"));
  try {
    t.lr.validate();
  } catch (const InvalidArgument& ex) {
    throw ConfigError("train.lr_milestones", ex.what());
  }
  t.momentum = v.non_negative("train.momentum");
  t.weight_decay = v.non_negative("train.weight_decay");
  t.alpha = v.real_in("train.alpha", 0.0, 1.0);
  t.beta = v.real("train.beta");
  t.amalgamation = v.parsed("train.amalgamation", [](const std::string& x) { return parse_amalgamation(x); });
  t.update_student_first = v.boolean("train.update_student_first");

  const double width = d.domain_hi - d.domain_lo;
  const auto budget = [&](const std::string& p, double step) {
    AttackBudget b{v.real_in(p + ".eps", 0.0, width), step, static_cast<int>(v.integer(p + ".iterations", 0)), {}};
    if (b.eps_max > 0.0 && b.step_size > 2.0 * b.eps_max) throw ConfigError(p + ".step", "must not exceed 2 * eps");
    return b;
  };
  t.budget = budget("attack", v.non_negative("attack.step"));
  t.pgd_random_init = v.boolean("attack.random_init");
  t.probe = budget("probe", v.non_negative("probe.step"));
  t.probe_samples = static_cast<std::size_t>(v.integer("probe.samples", 0));

  t.svgd.kernel_sigma = v.positive("svgd.sigma");
  t.svgd.gamma = v.non_negative("svgd.gamma");
  t.svgd.pairing = v.parsed("svgd.pairing", [](const std::string& x) { return parse_pairing(x); });
  t.svgd_step_size = v.non_negative("svgd.step");
  t.svgd_iterations = static_cast<int>(v.integer("svgd.iterations", 0));
  const std::size_t group = e.mode == Mode::cataka ? e.student_count : e.teacher_count;
  if (v.str("svgd.particles") == "auto") {
    t.svgd.n_particles = group;
    kv["svgd.particles"] = std::to_string(group);
  } else {
    t.svgd.n_particles = static_cast<std::size_t>(v.integer("svgd.particles", 1));
  }
  const bool per_particle = t.svgd.pairing == Pairing::per_particle_teacher;
  if ((e.mode == Mode::ataka || e.mode == Mode::cataka || (e.mode == Mode::diversity && per_particle)) &&
      t.svgd.n_particles != group)
    throw ConfigError("svgd.particles", "must equal " + std::string(e.mode == Mode::cataka ? "student" : "teacher") +
                                            ".count (" + std::to_string(group) + ")");
  if (e.mode == Mode::diversity && t.svgd.n_particles < 2) throw ConfigError("svgd.particles", "diversity needs >= 2");
  if (e.mode == Mode::cataka && t.amalgamation == AmalgamationKind::pareto)
    throw ConfigError("train.amalgamation", "pareto is not available in cataka mode");

  const AttackBudget eval_pgd = budget("eval", v.non_negative("eval.step"));
  const std::uint64_t eval_seed = v.u64("eval.seed");
  if (v.boolean("eval.fgsm")) e.eval_attacks.push_back({"fgsm", AttackKind::fgsm, eval_pgd, false, eval_seed});
  e.eval_attacks.push_back({"pgd" + std::to_string(eval_pgd.iterations), AttackKind::pgd, eval_pgd, true, eval_seed});

  e.input_networks = detail::split_list(v.str("input.networks"));
  if ((e.mode == Mode::evaluate || e.mode == Mode::boundary) && e.input_networks.size() != 1)
    throw ConfigError("input.networks", "exactly one network path required in " + std::string(to_string(e.mode)) + " mode");
  if (e.mode == Mode::diversity && !e.input_networks.empty() && e.input_networks.size() != e.teacher_count)
    throw ConfigError("input.networks", "expected teacher.count (" + std::to_string(e.teacher_count) + ") paths");
  e.grid_resolution = static_cast<std::size_t>(v.integer("grid.resolution", 0));
  if (e.mode == Mode::boundary && e.grid_resolution < 2) throw ConfigError("grid.resolution", "must be >= 2");
  if (e.grid_resolution == 1) throw ConfigError("grid.resolution", "must be 0 (off) or >= 2");
  e.diversity_sources = static_cast<std::size_t>(v.integer("diversity.sources", 1));

  kv["threads"] = std::to_string(e.threads);
  e.resolved = std::move(kv);
  return e;
}

inline Experiment load_config(std::istream& is) { return resolve(parse_key_values(is)); }

// One key=value per line in schema order; reading it back yields the same experiment.
inline void write_resolved(std::ostream& os, const Experiment& e) {
  for (const auto& k : kKeys) os << k.key << '=' << e.resolved.at(std::string(k.key)) << '\n';
}

}  // namespace amalgam::cli
