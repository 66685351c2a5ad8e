#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uqkit/error.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/tensor.hpp"

namespace uqkit {

enum class Task { kRegression, kClassification };

inline std::string to_string(Task t) { return t == Task::kRegression ? "regression" : "classification"; }

inline Task parse_task(const std::string& s) {
  if (s == "regression") return Task::kRegression;
  if (s == "classification") return Task::kClassification;
  throw ConfigError("unknown task '" + s + "'");
}

/// Row-major features [n x d]. Regression targets live in `y`; for
/// classification `labels` holds classes in [0, C) and `y` mirrors them as
/// doubles.
struct TabularDataset {
  Task task = Task::kRegression;
  std::size_t d = 0;
  std::vector<double> features;
  std::vector<double> y;
  std::vector<int> labels;
  std::vector<std::string> groups;  // empty when ungrouped
  std::vector<std::string> feature_names;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
  bool has_groups() const { return !groups.empty(); }
  double feature(std::size_t i, std::size_t j) const { return features[i * d + j]; }

  std::size_t classes() const {
    int c = 0;
    for (int l : labels) c = std::max(c, l + 1);
    return static_cast<std::size_t>(c);
  }

  Tensor x_tensor() const {
    if (empty()) throw ContractError("dataset is empty");
    return Tensor::matrix(size(), d, features);
  }
  Tensor y_tensor() const {
    if (empty()) throw ContractError("dataset is empty");
    return Tensor::column(y);
  }

  void validate() const {
    if (d == 0) throw DimensionError("dataset needs at least one feature");
    if (features.size() != size() * d) throw DimensionError("feature matrix does not match row count");
    if (!groups.empty() && groups.size() != size()) throw DimensionError("group labels do not match row count");
    if (task == Task::kClassification) {
      if (labels.size() != size()) throw DimensionError("class labels do not match row count");
      for (int l : labels) {
        if (l < 0) throw DomainError("class labels must be non-negative");
      }
    }
  }

  TabularDataset subset(std::span<const std::size_t> rows) const {
    TabularDataset out;
    out.task = task;
    out.d = d;
    out.feature_names = feature_names;
    for (std::size_t r : rows) {
      out.features.insert(out.features.end(), features.begin() + static_cast<std::ptrdiff_t>(r * d),
                          features.begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      out.y.push_back(y[r]);
      if (!labels.empty()) out.labels.push_back(labels[r]);
      if (!groups.empty()) out.groups.push_back(groups[r]);
    }
    return out;
  }
};

// ---- generators ------------------------------------------------------------

struct SineNoise {
  double a = 0.1;
  double b = 0.2;
};

inline double sine_true_mean(double x) { return x * std::sin(x); }
inline double sine_true_std(double x, const SineNoise& noise = {}) { return noise.a + noise.b * std::fabs(x); }

/// x ~ U[-3, 3], y = x sin x + N(0, (a + b|x|)^2). Group "low-noise" when
/// |x| < 1, "high-noise" otherwise.
inline TabularDataset gen_heteroscedastic_sine(std::size_t n, std::uint64_t seed, SineNoise noise = {}) {
  if (n < 10) throw ContractError("heteroscedastic sine needs n >= 10");
  if (noise.a < 0.0 || noise.b < 0.0) throw DomainError("sine noise parameters must be non-negative");
  Rng rng(derive_seed(seed, "sine"));
  TabularDataset ds;
  ds.d = 1;
  ds.feature_names = {"x"};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-3.0, 3.0);
    ds.features.push_back(x);
    ds.y.push_back(sine_true_mean(x) + sine_true_std(x, noise) * rng.normal());
    ds.groups.push_back(std::fabs(x) < 1.0 ? "low-noise" : "high-noise");
  }
  return ds;
}

/// Two interleaved half circles: class 0 on (cos t, sin t), class 1 on
/// (1 - cos t, 0.5 - sin t), t ~ U[0, pi], plus isotropic Gaussian noise.
/// Exactly n/2 rows per class, interleaved 0,1,0,1,...
inline TabularDataset gen_two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ContractError("two moons needs an even, positive n");
  if (noise_std < 0.0) throw DomainError("two moons noise must be non-negative");
  Rng rng(derive_seed(seed, "two-moons"));
  TabularDataset ds;
  ds.task = Task::kClassification;
  ds.d = 2;
  ds.feature_names = {"x0", "x1"};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x0 = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double x1 = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x0 += noise_std * rng.normal();
    x1 += noise_std * rng.normal();
    ds.features.push_back(x0);
    ds.features.push_back(x1);
    ds.labels.push_back(label);
    ds.y.push_back(label);
  }
  return ds;
}

// ---- CSV -------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_cell(const std::string& cell, const std::string& path, std::size_t line, const std::string& col) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (cell.empty() || used != cell.size()) {
    throw ParseError(path + ":" + std::to_string(line) + ": non-numeric value '" + cell + "' in column '" + col + "'");
  }
  return v;
}

}  // namespace detail

struct CsvSpec {
  Task task = Task::kRegression;
  std::string target_column = "y";
  std::optional<std::string> group_column;
};

/// Comma-separated, mandatory header, no quoting. Every column other than
/// the target and group columns is a numeric feature.
inline TabularDataset load_csv(const std::string& path, const CsvSpec& layout) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open CSV file '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw ParseError(path + ": empty file");
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);

  std::optional<std::size_t> target, group;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == layout.target_column) {
      target = c;
    } else if (layout.group_column && header[c] == *layout.group_column) {
      group = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (!target) throw ParseError(path + ": missing target column '" + layout.target_column + "'");
  if (layout.group_column && !group) throw ParseError(path + ": missing group column '" + *layout.group_column + "'");
  if (feature_cols.empty()) throw ParseError(path + ": no feature columns");

  TabularDataset ds;
  ds.task = layout.task;
  ds.d = feature_cols.size();
  for (std::size_t c : feature_cols) ds.feature_names.push_back(header[c]);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    }
    for (auto& cell : cells) cell = detail::trim(cell);
    for (std::size_t c : feature_cols) ds.features.push_back(detail::parse_cell(cells[c], path, lineno, header[c]));
    const double t = detail::parse_cell(cells[*target], path, lineno, header[*target]);
    ds.y.push_back(t);
    if (layout.task == Task::kClassification) {
      if (t < 0.0 || t != std::floor(t)) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": class label must be a non-negative integer");
      }
      ds.labels.push_back(static_cast<int>(t));
    }
    if (group) ds.groups.push_back(cells[*group]);
  }
  if (ds.empty()) throw ParseError(path + ": no data rows");
  return ds;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes features, then the target column "y" (or "label"), then "group"
/// when present.
inline void save_csv(const TabularDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write CSV file '" + path + "'");
  for (std::size_t j = 0; j < ds.d; ++j) {
    out << (j < ds.feature_names.size() ? ds.feature_names[j] : "x" + std::to_string(j)) << ',';
  }
  out << (ds.task == Task::kRegression ? "y" : "label");
  if (ds.has_groups()) out << ",group";
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < ds.d; ++j) out << format_double(ds.feature(i, j)) << ',';
    if (ds.task == Task::kRegression) {
      out << format_double(ds.y[i]);
    } else {
      out << ds.labels[i];
    }
    if (ds.has_groups()) out << ',' << ds.groups[i];
    out << '\n';
  }
}

// ---- splitting -------------------------------------------------------------------

struct SplitSpec {
  double train = 0.5;
  double val = 0.2;
  double calib = 0.1;
  double test = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    for (double f : {train, val, calib, test}) {
      if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    }
    if (std::fabs(train + val + calib + test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  }
};

struct DataSplits {
  TabularDataset train, val, calib, test;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, calib = 0, test = 0;
};

// floor(f n) for val/calib/test; the remainder goes to train.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& fractions) {
  fractions.validate();
  auto part = [n](double f) { return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9)); };
  SplitSizes s;
  s.val = part(fractions.val);
  s.calib = part(fractions.calib);
  s.test = part(fractions.test);
  s.train = n - s.val - s.calib - s.test;
  return s;
}

/// Seeded shuffle, then contiguous slices in the order train, val, calib, test.
inline DataSplits split(const TabularDataset& ds, const SplitSpec& fractions) {
  const SplitSizes s = split_sizes(ds.size(), fractions);
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(fractions.seed, "split"));
  rng.shuffle(order);
  const std::span<const std::size_t> all(order);
  DataSplits out;
  std::size_t at = 0;
  out.train = ds.subset(all.subspan(at, s.train));
  at += s.train;
  out.val = ds.subset(all.subspan(at, s.val));
  at += s.val;
  out.calib = ds.subset(all.subspan(at, s.calib));
  at += s.calib;
  out.test = ds.subset(all.subspan(at, s.test));
  return out;
}

}  // namespace uqkit
