#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/datasets.hpp"
#include "uqkit/harness/config.hpp"
#include "uqkit/harness/methods.hpp"
#include "uqkit/harness/records.hpp"
#include "uqkit/parallel.hpp"

namespace uqkit::harness {

namespace fs = std::filesystem;

inline TabularDataset load_dataset(const ExperimentConfig& c) {
  const DatasetConfig& d = c.dataset;
  if (d.generator == "heteroscedastic_sine") return gen_heteroscedastic_sine(d.n, c.dataset_seed(), {d.a, d.b});
  if (d.generator == "two_moons") return gen_two_moons(d.n, d.noise, c.dataset_seed());
  if (d.generator == "csv") return load_csv(d.path, {c.task, d.target_column, d.group_column});
  throw ConfigError("unknown dataset generator '" + d.generator + "'");
}

inline void check_split_sizes(const ExperimentConfig& c, const DataSplits& s) {
  auto need = [&](const TabularDataset& part, const char* name) {
    if (part.empty()) {
      throw ConfigError(std::string("split '") + name + "' is empty for method '" + c.method +
                        "'; enlarge the dataset or the fraction");
    }
  };
  need(s.train, "train");
  need(s.val, "val");
  need(s.test, "test");
  if (find_method(c.method, c.task).needs_calibration) need(s.calib, "calib");
  if (c.train.batch_size > s.train.size()) {
    throw ConfigError("train.batch_size " + std::to_string(c.train.batch_size) + " exceeds the training split size " +
                      std::to_string(s.train.size()));
  }
}

struct RunResult {
  nlohmann::json config;   // resolved snapshot
  nlohmann::json metrics;  // deterministic metrics document
  nlohmann::json record;   // metrics plus timing and provenance
  PredictionTable test;
  MethodOutput output;
};

/// Trains, predicts and scores one configuration in memory.
inline RunResult execute(const ExperimentConfig& c, std::size_t threads = worker_count()) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  validate_config(c);
  const TabularDataset data = load_dataset(c);
  data.validate();
  const DataSplits splits = split(data, [&] {
    SplitSpec s = c.split;
    s.seed = c.resolved_split_seed();
    return s;
  }());
  check_split_sizes(c, splits);
  std::size_t classes = 0;
  if (c.task == Task::kClassification) {
    classes = std::max<std::size_t>(data.classes(), 2);
  }

  const auto t1 = clock::now();
  RunResult r;
  r.output = c.task == Task::kRegression ? run_regression_method(c, splits, threads)
                                         : run_classification_method(c, splits, classes, threads);
  const auto t2 = clock::now();

  std::optional<double> threshold;
  if (!r.output.val.uncertainty.empty()) {
    threshold = quantile_type1(r.output.val.uncertainty, c.eval.selective_quantile);
  }
  r.test = make_table(c.task, r.output.test, splits.test);
  r.config = config_to_json(c);
  r.metrics = metrics_document(c, r.test, threshold);
  if (!r.output.extras.empty()) r.metrics["fitted"] = r.output.extras;
  r.metrics["split_sizes"] = {{"train", splits.train.size()},
                              {"val", splits.val.size()},
                              {"calib", splits.calib.size()},
                              {"test", splits.test.size()}};
  const auto t3 = clock::now();

  auto secs = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
  r.record = {{"format", "uqkit-run"},
              {"version", 1},
              {"library_version", kLibraryVersion},
              {"config", r.config},
              {"metrics", r.metrics},
              {"seeds",
               {{"config", c.seed},
                {"dataset", c.dataset_seed()},
                {"split", c.resolved_split_seed()},
                {"method", c.method_seed()}}},
              {"timing",
               {{"data_seconds", secs(t0, t1)}, {"fit_predict_seconds", secs(t1, t2)}, {"score_seconds", secs(t2, t3)},
                {"total_seconds", secs(t0, t3)}}}};
  return r;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

/// Run directory layout:
///   config.json        resolved config snapshot (re-runnable)
///   metrics.json       metrics document (byte-identical across re-runs)
///   record.json        metrics plus timing, seeds and library version
///   predictions.csv    per-sample test predictions
///   checkpoint*.json   trained network(s)
///   plot-data/<kind>.csv
inline void write_run_directory(const RunResult& r, const ExperimentConfig& c, const fs::path& dir) {
  fs::create_directories(dir / "plot-data");
  write_text(dir / "config.json", dump(r.config));
  write_text(dir / "metrics.json", dump(r.metrics));
  write_text(dir / "record.json", dump(r.record));
  write_predictions_csv(r.test, dir / "predictions.csv");
  for (const auto& [stem, doc] : r.output.checkpoints) write_text(dir / (stem + ".json"), dump(doc));
  for (const auto& kind : plot_kinds()) {
    if (plot_available(r.test, kind)) write_text(dir / "plot-data" / (kind + ".csv"), plot_data(r.test, c.eval, kind));
  }
}

inline RunResult run(const ExperimentConfig& c, std::size_t threads = worker_count()) {
  RunResult r = execute(c, threads);
  write_run_directory(r, c, c.output);
  return r;
}

// ---- loading run directories -----------------------------------------------------------

struct StoredRun {
  fs::path dir;
  ExperimentConfig config;
  nlohmann::json metrics;
};

inline StoredRun load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("run directory '" + dir.string() + "' does not exist");
  StoredRun s;
  s.dir = dir;
  s.config = config_from_json(read_json_file(dir / "config.json"));
  s.metrics = read_json_file(dir / "metrics.json");
  return s;
}

inline PredictionTable load_predictions(const StoredRun& s) {
  return read_predictions_csv(s.dir / "predictions.csv", s.config.task);
}

/// A run directory, or a directory of run directories (benchmark output),
/// in sorted subdirectory order.
inline std::vector<StoredRun> load_runs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("input directory '" + dir.string() + "' does not exist");
  if (fs::exists(dir / "metrics.json")) return {load_run(dir)};
  std::vector<fs::path> subdirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "metrics.json")) subdirs.push_back(e.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) throw ConfigError("no run directories under '" + dir.string() + "'");
  std::vector<StoredRun> runs;
  for (const auto& p : subdirs) runs.push_back(load_run(p));
  return runs;
}

}  // namespace uqkit::harness
