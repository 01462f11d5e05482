// coxq <subcommand> --config <file> [--seed S] [--out DIR] [--replications R]
//
// Exit status: 0 all criteria pass, 1 a criterion failed, 2 configuration or
// domain error.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "coxq/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Infinite-server queues under a resampled mixed-Poisson arrival stream"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::int64_t> replications;
  bool timing = false;
  for (const auto& kind : coxq::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind);
    sub->add_option("--config", config_path, "experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out_dir, "output directory (default: the configured output)");
    sub->add_option("--replications", replications, "override the configured replication count");
    sub->add_flag("--timing", timing, "print the wall-clock time to stderr");
  }
  CLI11_PARSE(app, argc, argv);
  const std::string kind = app.get_subcommands().front()->get_name();

  const auto start = std::chrono::steady_clock::now();
  try {
    std::ifstream is(config_path);
    nlohmann::json raw;
    try {
      raw = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw coxq::ConfigError(std::string("cannot parse ") + config_path + ": " + e.what());
    }
    if (seed) raw["seed"] = *seed;
    if (replications) raw["replications"] = *replications;
    if (out_dir) raw["output"] = *out_dir;
    const auto config = coxq::parse_config(raw, kind);
    const auto result = coxq::run_experiment(config);
    coxq::write_outputs(result, config.output);
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& c : result.criteria)
      std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": value " << coxq::format_number(c.value)
                << ", target " << coxq::format_number(c.target) << ", tolerance "
                << coxq::format_number(c.tolerance) << '\n';
    std::cout << "report: " << (std::filesystem::path(config.output) / "report.json").string() << '\n';
    if (timing) {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
      std::cerr << "wall-clock: " << dt.count() << " s\n";
    }
    return coxq::exit_code(result);
  } catch (const coxq::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
