#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/harness/run.hpp"
#include "uqkit/parallel.hpp"

namespace uqkit::harness {

// ---- comparison table ------------------------------------------------------------------

struct Column {
  std::string name;
  std::string json_path;  // "rmse" or "selective/risk_delta"
};

struct ComparisonRow {
  std::string run;
  std::string method;
  std::string family;
  std::vector<std::optional<double>> values;
  std::size_t rank = 0;
};

struct Comparison {
  Task task = Task::kRegression;
  std::vector<Column> columns;
  std::vector<ComparisonRow> rows;
};

inline std::vector<Column> comparison_columns(Task task) {
  if (task == Task::kRegression) {
    return {{"rmse", "rmse"},           {"rmse_delta", "selective/risk_delta"}, {"nll", "nll"}, {"mace", "mace"},
            {"coverage", "coverage"},   {"correlation", "error_uncert_corr"}};
  }
  return {{"accuracy", "accuracy"}, {"error_delta", "selective/risk_delta"}, {"nll", "nll"},
          {"coverage", "coverage"}, {"set_size", "mean_set_size"},          {"correlation", "error_uncert_corr"}};
}

inline std::optional<double> lookup(const nlohmann::json& metrics, const std::string& path) {
  const nlohmann::json* node = &metrics;
  std::istringstream parts(path);
  std::string key;
  while (std::getline(parts, key, '/')) {
    if (!node->is_object() || !node->contains(key)) return std::nullopt;
    node = &node->at(key);
  }
  if (!node->is_number()) return std::nullopt;
  return node->get<double>();
}

/// Lexicographic ranking: primary error (RMSE, or 1 - accuracy) ascending,
/// then risk delta descending, NLL ascending, MACE ascending. Absent values
/// sort after present ones; remaining ties keep row order, and every row gets
/// a distinct rank.
inline void assign_ranks(Comparison& cmp) {
  struct Key {
    std::size_t column;
    double sign;  // +1 ascending, -1 descending
  };
  std::vector<Key> keys;
  if (cmp.task == Task::kRegression) {
    keys = {{0, 1.0}, {1, -1.0}, {2, 1.0}, {3, 1.0}};
  } else {
    keys = {{0, -1.0}, {1, -1.0}, {2, 1.0}};
  }
  std::vector<std::size_t> order(cmp.rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (const Key& k : keys) {
      const auto& va = cmp.rows[a].values[k.column];
      const auto& vb = cmp.rows[b].values[k.column];
      if (va.has_value() != vb.has_value()) return va.has_value();
      if (!va) continue;
      if (*va != *vb) return k.sign * *va < k.sign * *vb;
    }
    return false;
  });
  for (std::size_t r = 0; r < order.size(); ++r) cmp.rows[order[r]].rank = r + 1;
}

inline Comparison build_comparison(const std::vector<StoredRun>& runs) {
  if (runs.empty()) throw ContractError("nothing to compare");
  Comparison cmp;
  cmp.task = runs.front().config.task;
  cmp.columns = comparison_columns(cmp.task);
  for (const auto& run : runs) {
    if (run.config.task != cmp.task) throw ConfigError("cannot compare regression and classification runs together");
    ComparisonRow row;
    row.run = run.dir.filename().string();
    row.method = run.metrics.value("method", run.config.method);
    row.family = run.metrics.value("family", std::string("?"));
    for (const auto& col : cmp.columns) row.values.push_back(lookup(run.metrics, col.json_path));
    cmp.rows.push_back(std::move(row));
  }
  // Group rows by family, families in order of first appearance.
  std::vector<std::string> families;
  for (const auto& r : cmp.rows) {
    if (std::find(families.begin(), families.end(), r.family) == families.end()) families.push_back(r.family);
  }
  std::stable_sort(cmp.rows.begin(), cmp.rows.end(), [&](const ComparisonRow& a, const ComparisonRow& b) {
    return std::find(families.begin(), families.end(), a.family) < std::find(families.begin(), families.end(), b.family);
  });
  assign_ranks(cmp);
  return cmp;
}

inline std::string comparison_csv(const Comparison& cmp) {
  std::ostringstream out;
  out << "method,family";
  for (const auto& c : cmp.columns) out << ',' << c.name;
  out << ",rank\n";
  for (const auto& r : cmp.rows) {
    out << r.method << ',' << r.family;
    for (const auto& v : r.values) out << ',' << (v ? format_double(*v) : "");
    out << ',' << r.rank << '\n';
  }
  return out.str();
}

/// Aligned text table; a family heading is printed whenever the family
/// changes from one row to the next.
inline std::string comparison_table(const Comparison& cmp) {
  std::vector<std::string> header{"method"};
  for (const auto& c : cmp.columns) header.push_back(c.name);
  header.push_back("rank");
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : cmp.rows) {
    std::vector<std::string> line{r.method};
    for (const auto& v : r.values) {
      char buf[32];
      if (v) {
        std::snprintf(buf, sizeof buf, "%.4f", *v);
      } else {
        std::snprintf(buf, sizeof buf, "-");
      }
      line.emplace_back(buf);
    }
    line.push_back(std::to_string(r.rank));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size());
  for (std::size_t k = 0; k < header.size(); ++k) {
    width[k] = header[k].size();
    for (const auto& line : cells) width[k] = std::max(width[k], line[k].size());
  }
  std::ostringstream out;
  auto emit = [&](const std::vector<std::string>& line) {
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (k == 0) {
        out << line[k] << std::string(width[k] - line[k].size(), ' ');
      } else {
        out << "  " << std::string(width[k] - line[k].size(), ' ') << line[k];
      }
    }
    out << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (std::size_t w : width) total += w + 2;
  out << std::string(total - 2, '-') << '\n';
  std::string family;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i == 0 || cmp.rows[i].family != family) {
      family = cmp.rows[i].family;
      out << "[" << family << "]\n";
    }
    emit(cells[i]);
  }
  return out.str();
}

// ---- benchmark ---------------------------------------------------------------------------

inline std::vector<fs::path> config_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("config directory '" + dir.string() + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("no .json configs in '" + dir.string() + "'");
  return files;
}

/// Every config must resolve to the same task, dataset, split and eval
/// settings; otherwise the comparison would not be on one test split.
inline void check_shared_settings(const std::vector<ExperimentConfig>& configs, const std::vector<fs::path>& files) {
  const nlohmann::json ref = config_to_json(configs.front());
  for (std::size_t i = 1; i < configs.size(); ++i) {
    const nlohmann::json other = config_to_json(configs[i]);
    for (const char* key : {"task", "dataset", "split", "eval"}) {
      if (other.at(key) != ref.at(key)) {
        throw ConfigError(files[i].string() + ": '" + key + "' settings differ from " + files.front().string());
      }
    }
  }
}

struct BenchmarkResult {
  Comparison comparison;
  std::vector<RunResult> runs;
};

/// Runs every config (concurrently, up to `threads` workers), writes each run
/// to <output>/<NN>-<config stem>/ plus comparison.csv and comparison.txt.
inline BenchmarkResult benchmark(const std::vector<fs::path>& files, const fs::path& output,
                                 std::size_t threads = worker_count()) {
  std::vector<ExperimentConfig> configs;
  for (const auto& f : files) {
    configs.push_back(load_config(f));
    validate_config(configs.back());
  }
  check_shared_settings(configs, files);

  BenchmarkResult result;
  result.runs.resize(configs.size());
  std::vector<fs::path> dirs;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%02zu-", i + 1);
    dirs.push_back(output / (prefix + files[i].stem().string()));
    configs[i].output = dirs.back().string();
  }
  parallel_for(configs.size(), threads, [&](std::size_t i) { result.runs[i] = execute(configs[i], 1); });

  for (std::size_t i = 1; i < result.runs.size(); ++i) {
    if (result.runs[i].test.y != result.runs[0].test.y) {
      throw ContractError("benchmark runs disagree on the test split");
    }
  }
  std::vector<StoredRun> stored;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    write_run_directory(result.runs[i], configs[i], dirs[i]);
    stored.push_back({dirs[i], configs[i], result.runs[i].metrics});
  }
  result.comparison = build_comparison(stored);
  write_text(output / "comparison.csv", comparison_csv(result.comparison));
  write_text(output / "comparison.txt", comparison_table(result.comparison));
  return result;
}

inline BenchmarkResult benchmark_directory(const fs::path& config_dir, const fs::path& output,
                                           std::size_t threads = worker_count()) {
  return benchmark(config_files(config_dir), output, threads);
}

}  // namespace uqkit::harness
