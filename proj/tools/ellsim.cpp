// ellsim: closed-loop Monte Carlo batches for ellipsoid-bounded uncertain
// plants. `run` executes a configuration file, `example1`/`example2` execute
// the built-in benchmark presets, and `report` re-renders existing summary
// files. Every batch writes trajectory/weights/ellipsoids CSVs, an envelope
// file, and a summary JSON into the output directory, then prints the
// metric table. The exit code is nonzero when any run fails or any file
// cannot be read or written.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "ellset/config.hpp"
#include "ellset/harness.hpp"

namespace {

struct Overrides {
  int runs = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> controllers;
  std::string out;
  int steps = 0;
  int threads = 0;
  int certificate_draws = -1;
  bool boundary_noise = false;

  bool has_runs = false, has_seed = false, has_steps = false;
};

void add_common_options(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--runs", o.runs, "Monte Carlo run count")
      ->check(CLI::PositiveNumber)
      ->each([&](const std::string&) { o.has_runs = true; });
  cmd.add_option("--seed", o.seed, "base seed for the noise streams")
      ->each([&](const std::string&) { o.has_seed = true; });
  cmd.add_option("--controllers", o.controllers,
                 "controllers to run (arc, orc, rc)")
      ->delimiter(',');
  cmd.add_option("--out", o.out, "output directory");
  cmd.add_option("--steps", o.steps, "simulated instants per run")
      ->check(CLI::PositiveNumber)
      ->each([&](const std::string&) { o.has_steps = true; });
  cmd.add_option("--threads", o.threads, "worker threads across runs")
      ->check(CLI::PositiveNumber);
  cmd.add_option("--certificate-draws", o.certificate_draws,
                 "adversarial cost samples per solved program");
  cmd.add_flag("--boundary-noise", o.boundary_noise,
               "draw noises on the ellipsoid boundary instead of inside");
}

int execute(ellset::ExperimentConfig cfg, const Overrides& o) {
  if (o.has_runs) cfg.runs = o.runs;
  if (o.has_seed) cfg.seed = o.seed;
  if (!o.controllers.empty()) cfg.controllers = o.controllers;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.has_steps) {
    cfg.steps = o.steps;
    cfg.checkpoints.clear();
    for (int t = 5; t < cfg.steps; t += 5) cfg.checkpoints.push_back(t);
    if (cfg.checkpoints.empty() || cfg.checkpoints.back() != cfg.steps - 1) {
      cfg.checkpoints.push_back(cfg.steps - 1);
    }
  }
  if (o.certificate_draws >= 0) cfg.certificate_draws = o.certificate_draws;
  if (o.boundary_noise) cfg.boundary_noise = true;
  for (const std::string& c : cfg.controllers) {
    ellset::detail::require(c == "arc" || c == "orc" || c == "rc",
                            "unknown controller '" + c + "'");
  }

  int threads = o.threads;
  if (threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    threads = hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
  }

  const ellset::ExperimentResult result = ellset::run_experiment(cfg, threads);
  const std::string summary_path = ellset::export_result(result, cfg.out_dir);

  std::cout << ellset::format_report(ellset::summary_json(result));
  std::cout << "artifacts: " << cfg.out_dir << " (summary: " << summary_path
            << ")\n";

  int failures = 0;
  for (const ellset::ControllerBatch& batch : result.batches) {
    for (const ellset::RunLog& run : batch.runs) {
      if (!run.failed) continue;
      ++failures;
      std::cerr << "failed run: controller=" << batch.controller
                << " run=" << run.run << " error=" << run.error << '\n';
    }
  }
  if (failures > 0) {
    std::cerr << failures << " run(s) failed\n";
    return 1;
  }
  return 0;
}

int report(const std::vector<std::string>& paths) {
  for (const std::string& given : paths) {
    std::string path = given;
    if (std::filesystem::is_directory(path)) path += "/summary.json";
    std::ifstream in(path);
    if (!in) {
      std::cerr << "report: cannot open " << path << '\n';
      return 1;
    }
    nlohmann::json summary;
    try {
      in >> summary;
    } catch (const std::exception& e) {
      std::cerr << "report: " << path << ": " << e.what() << '\n';
      return 1;
    }
    std::cout << ellset::format_report(summary);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "closed-loop simulation of adaptive robust control with "
      "ellipsoid-bounded uncertainty"};
  app.require_subcommand(1);

  Overrides o;
  std::string config_path;
  std::vector<std::string> report_paths;

  CLI::App* run = app.add_subcommand("run", "run a configuration file");
  run->add_option("--config", config_path, "configuration file (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  add_common_options(*run, o);

  CLI::App* ex1 = app.add_subcommand(
      "example1", "two-state regulation benchmark (three candidates)");
  add_common_options(*ex1, o);
  CLI::App* ex2 = app.add_subcommand(
      "example2", "three-state tracking benchmark (two candidates)");
  add_common_options(*ex2, o);

  CLI::App* rep =
      app.add_subcommand("report", "render existing summary files");
  rep->add_option("paths", report_paths,
                  "summary.json files or directories containing one")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return execute(ellset::load_config(config_path), o);
    }
    if (ex1->parsed()) {
      return execute(ellset::example_config(1), o);
    }
    if (ex2->parsed()) {
      return execute(ellset::example_config(2), o);
    }
    return report(report_paths);
  } catch (const std::exception& e) {
    std::cerr << "ellsim: " << e.what() << '\n';
    return 1;
  }
}
