// uqkit command line: run, benchmark, report, plot-data.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "uqkit/harness/benchmark.hpp"
#include "uqkit/harness/run.hpp"

namespace fs = std::filesystem;
using namespace uqkit;
using namespace uqkit::harness;

namespace {

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& output) {
  if (!fs::is_regular_file(config_path)) throw ConfigError("config file '" + config_path + "' not found");
  ExperimentConfig c = load_config(config_path);
  if (seed) c.seed = *seed;
  if (!output.empty()) c.output = output;
  const RunResult r = run(c);
  std::cout << "wrote " << c.output << '\n';
  std::cout << r.metrics.dump(2) << '\n';
  return 0;
}

int cmd_benchmark(const std::string& config_dir, const std::string& output) {
  if (!fs::is_directory(config_dir)) throw ConfigError("config directory '" + config_dir + "' not found");
  const BenchmarkResult b = benchmark_directory(config_dir, output);
  std::cout << comparison_table(b.comparison);
  std::cout << "wrote " << output << '\n';
  return 0;
}

int cmd_report(const std::string& input, const std::string& format) {
  const Comparison cmp = build_comparison(load_runs(input));
  std::cout << (format == "csv" ? comparison_csv(cmp) : comparison_table(cmp));
  return 0;
}

int cmd_plot_data(const std::string& input, const std::string& kind) {
  const StoredRun s = load_run(input);
  const std::string text = plot_data(load_predictions(s), s.config.eval, kind);
  fs::create_directories(s.dir / "plot-data");
  write_text(s.dir / "plot-data" / (kind + ".csv"), text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uqkit: uncertainty quantification experiments for small MLPs"};
  app.require_subcommand(1);

  std::string config_path, config_dir, input, output, format = "table", kind;
  std::optional<std::uint64_t> seed;

  auto* run_cmd = app.add_subcommand("run", "train and evaluate one config");
  run_cmd->add_option("--config", config_path, "config file (JSON)")->required();
  run_cmd->add_option("--seed", seed, "override the config seed");
  run_cmd->add_option("--output", output, "override the output directory");

  std::string bench_output = "runs/benchmark";
  auto* bench_cmd = app.add_subcommand("benchmark", "run every config in a directory and compare");
  bench_cmd->add_option("--config-dir", config_dir, "directory of JSON configs")->required();
  bench_cmd->add_option("--output", bench_output, "output directory");

  auto* report_cmd = app.add_subcommand("report", "comparison table of stored runs");
  report_cmd->add_option("--input", input, "run directory or benchmark output")->required();
  report_cmd->add_option("--format", format, "csv or table")->check(CLI::IsMember({"csv", "table"}));

  auto* plot_cmd = app.add_subcommand("plot-data", "emit columnar plot data for a stored run");
  plot_cmd->add_option("--input", input, "run directory")->required();
  plot_cmd->add_option("--kind", kind, "plot kind")
      ->required()
      ->check(CLI::IsMember({"calibration-curve", "selective-curve", "interval-series", "group-bars"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "uqkit: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*run_cmd) return cmd_run(config_path, seed, output);
    if (*bench_cmd) return cmd_benchmark(config_dir, bench_output);
    if (*report_cmd) return cmd_report(input, format);
    if (*plot_cmd) return cmd_plot_data(input, kind);
  } catch (const std::exception& e) {
    std::cerr << "uqkit: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
