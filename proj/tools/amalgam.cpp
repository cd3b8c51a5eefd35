// amalgam: run, validate and compare experiments from key=value configs.
#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "amalgam/cli/runner.hpp"

namespace {

using namespace amalgam;

enum ExitCode { kOk = 0, kFailure = 1, kBadConfig = 2, kDiverged = 3, kIo = 4 };

cli::Experiment read_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  cli::Experiment e = cli::load_config(is);
  if (const char* env = std::getenv("AMALGAM_THREADS")) {
    int t = 0;
    const std::string v = env;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), t);
    if (ec != std::errc() || p != v.data() + v.size() || t < 1)
      throw cli::ConfigError("AMALGAM_THREADS", "expected a positive integer, got '" + v + "'");
    e.threads = e.train.threads = t;
    e.resolved["threads"] = std::to_string(t);
  }
  return e;
}

template <class F>
int guarded(F&& body) {
  try {
    body();
    return kOk;
  } catch (const cli::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return kBadConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const NonFiniteError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const ParseError& e) {
    std::cerr << "i/o error: malformed input: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial ensemble distillation experiments on small tabular data"};
  app.require_subcommand(1);

  std::string config, output;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config, "key=value config file")->required();
  run->add_option("-o,--output", output, "Override output.dir");

  auto* validate = app.add_subcommand("validate", "Check a config and print it with defaults filled in");
  validate->add_option("config", config, "key=value config file")->required();

  std::vector<std::string> dirs;
  auto* compare = app.add_subcommand("compare", "Summarize eval.csv from several run directories");
  compare->add_option("dirs", dirs, "Run output directories")->required();

  CLI11_PARSE(app, argc, argv);

  if (*run) {
    return guarded([&] {
      cli::Experiment e = read_experiment(config);
      if (!output.empty()) e.output_dir = e.resolved["output.dir"] = output;
      for (const auto& f : cli::run_experiment(e)) std::cout << e.output_dir << '/' << f << '\n';
    });
  }
  if (*validate) {
    return guarded([&] { cli::write_resolved(std::cout, read_experiment(config)); });
  }
  return guarded([&] { cli::compare_runs(dirs, std::cout); });
}
