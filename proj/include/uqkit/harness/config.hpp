#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/conformal.hpp"
#include "uqkit/datasets.hpp"
#include "uqkit/error.hpp"
#include "uqkit/metrics.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/train.hpp"

namespace uqkit::harness {

using nlohmann::json;

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

// ---- method catalogue --------------------------------------------------------

struct MethodInfo {
  const char* name;
  Task task;
  const char* family;
  bool needs_calibration;
  bool needs_validation;  // beyond the selective threshold, which always needs val
  std::vector<const char*> params;
};

inline const std::vector<MethodInfo>& method_catalogue() {
  static const std::vector<MethodInfo> methods = {
      {"deterministic", Task::kRegression, "None", false, false, {}},
      {"mve", Task::kRegression, "Deterministic", false, false, {}},
      {"der", Task::kRegression, "Deterministic", false, false, {"lambda"}},
      {"qr", Task::kRegression, "Quantile", false, false, {"levels"}},
      {"cqr", Task::kRegression, "Conformal", true, false, {}},
      {"mve_conformal", Task::kRegression, "Conformal", true, false, {"normalized"}},
      {"ensemble", Task::kRegression, "Ensemble", false, false, {"members"}},
      {"mc_dropout", Task::kRegression, "Bayesian", false, false, {"passes", "rate"}},
      {"swag", Task::kRegression, "Bayesian", false, false,
       {"snapshot_epochs", "max_rank", "samples", "swag_lr", "scale"}},
      {"laplace", Task::kRegression, "Bayesian", false, false, {"prior_precision", "noise", "noise_var"}},
      {"bnn_vi_elbo", Task::kRegression, "Bayesian", false, false,
       {"prior_std", "kl_weight", "mc_train_samples", "samples", "rho_init", "stochastic"}},
      {"softmax", Task::kClassification, "None", false, false, {}},
      {"temperature_scaling", Task::kClassification, "Post-hoc", false, true, {}},
      {"tta", Task::kClassification, "Post-hoc", false, false, {"jitter", "copies"}},
      {"ensemble", Task::kClassification, "Ensemble", false, false, {"members"}},
      {"mc_dropout", Task::kClassification, "Bayesian", false, false, {"passes", "rate"}},
      {"bnn_vi_elbo", Task::kClassification, "Bayesian", false, false,
       {"prior_std", "kl_weight", "mc_train_samples", "samples", "rho_init", "stochastic"}},
      {"raps", Task::kClassification, "Conformal", true, false, {"k_reg", "lambda", "randomized"}},
  };
  return methods;
}

inline const MethodInfo& find_method(const std::string& name, Task task) {
  bool other_task = false;
  for (const auto& m : method_catalogue()) {
    if (m.name == name) {
      if (m.task == task) return m;
      other_task = true;
    }
  }
  if (other_task) throw ConfigError("method '" + name + "' is not available for task " + to_string(task));
  throw ConfigError("unknown method '" + name + "'");
}

// ---- config sections ------------------------------------------------------------

struct DatasetConfig {
  std::string generator;  // "heteroscedastic_sine", "two_moons", or "csv"
  std::size_t n = 2000;
  double a = 0.1, b = 0.2;  // sine noise
  double noise = 0.1;       // two-moons noise
  std::optional<std::uint64_t> seed;
  std::string path;  // csv
  std::string target_column = "y";
  std::optional<std::string> group_column;
};

struct ModelSection {
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::kRelu;
  std::vector<double> dropout;  // empty: none
};

struct EvalConfig {
  double alpha = 0.1;
  double selective_quantile = 0.8;
  std::vector<double> mace_levels = default_mace_levels();
};

struct ExperimentConfig {
  int version = kConfigVersion;
  Task task = Task::kRegression;
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  SplitSpec split;
  std::optional<std::uint64_t> split_seed;
  ModelSection model;
  TrainConfig train;
  std::string method = "mve";
  json method_params = json::object();
  EvalConfig eval;
  std::string output = "runs/run";

  // Seeds used when not pinned explicitly in the config.
  std::uint64_t dataset_seed() const { return dataset.seed.value_or(derive_seed(seed, "dataset")); }
  std::uint64_t resolved_split_seed() const { return split_seed.value_or(derive_seed(seed, "split")); }
  std::uint64_t method_seed() const { return derive_seed(seed, method); }
};

// ---- parsing ------------------------------------------------------------------

namespace detail {

inline void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in config section '" + section + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

template <typename T>
void read(const json& j, const char* key, std::optional<T>& out, const std::string& section) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read(j, key, v, section);
  out = v;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::read;
  detail::reject_unknown(j, "top level",
                         {"version", "task", "seed", "dataset", "split", "model", "train", "method", "eval", "output"});
  ExperimentConfig c;
  read(j, "version", c.version, "top");
  if (c.version != kConfigVersion) {
    throw ConfigError("unsupported config version " + std::to_string(c.version));
  }
  std::string task = "regression";
  read(j, "task", task, "top");
  c.task = parse_task(task);
  read(j, "seed", c.seed, "top");
  read(j, "output", c.output, "top");

  if (!j.contains("dataset")) throw ConfigError("config is missing the 'dataset' section");
  const json& d = j.at("dataset");
  detail::reject_unknown(d, "dataset",
                         {"generator", "n", "a", "b", "noise", "seed", "path", "target_column", "group_column"});
  read(d, "generator", c.dataset.generator, "dataset");
  read(d, "n", c.dataset.n, "dataset");
  read(d, "a", c.dataset.a, "dataset");
  read(d, "b", c.dataset.b, "dataset");
  read(d, "noise", c.dataset.noise, "dataset");
  read(d, "seed", c.dataset.seed, "dataset");
  read(d, "path", c.dataset.path, "dataset");
  read(d, "target_column", c.dataset.target_column, "dataset");
  read(d, "group_column", c.dataset.group_column, "dataset");
  if (c.dataset.generator.empty()) c.dataset.generator = c.dataset.path.empty() ? "" : "csv";

  if (j.contains("split")) {
    const json& s = j.at("split");
    detail::reject_unknown(s, "split", {"train", "val", "calib", "test", "seed"});
    read(s, "train", c.split.train, "split");
    read(s, "val", c.split.val, "split");
    read(s, "calib", c.split.calib, "split");
    read(s, "test", c.split.test, "split");
    read(s, "seed", c.split_seed, "split");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    detail::reject_unknown(m, "model", {"hidden", "activation", "dropout"});
    read(m, "hidden", c.model.hidden, "model");
    std::string act = to_string(c.model.activation);
    read(m, "activation", act, "model");
    c.model.activation = parse_activation(act);
    if (m.contains("dropout")) {
      const json& dr = m.at("dropout");
      if (dr.is_number()) {
        c.model.dropout.assign(c.model.hidden.size(), dr.get<double>());
      } else {
        read(m, "dropout", c.model.dropout, "model");
      }
    }
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::reject_unknown(t, "train", {"epochs", "batch_size", "learning_rate", "optimizer", "shuffle", "clip_norm"});
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    std::string opt = to_string(c.train.optimizer);
    read(t, "optimizer", opt, "train");
    c.train.optimizer = parse_optimizer(opt);
    read(t, "shuffle", c.train.shuffle, "train");
    if (t.contains("clip_norm")) {
      if (t.at("clip_norm").is_null()) {
        c.train.clip_norm.reset();
      } else {
        double v = 0.0;
        read(t, "clip_norm", v, "train");
        c.train.clip_norm = v;
      }
    }
  }

  if (!j.contains("method")) throw ConfigError("config is missing the 'method' section");
  const json& me = j.at("method");
  if (me.is_string()) {
    c.method = me.get<std::string>();
  } else {
    detail::reject_unknown(me, "method", {"name", "params"});
    read(me, "name", c.method, "method");
    if (me.contains("params")) c.method_params = me.at("params");
  }

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    detail::reject_unknown(e, "eval", {"alpha", "selective_quantile", "mace_levels"});
    read(e, "alpha", c.eval.alpha, "eval");
    read(e, "selective_quantile", c.eval.selective_quantile, "eval");
    read(e, "mace_levels", c.eval.mace_levels, "eval");
  }
  return c;
}

/// Fully resolved snapshot: derived seeds are written out so the snapshot
/// alone reproduces the run.
inline json config_to_json(const ExperimentConfig& c) {
  json dataset = {{"generator", c.dataset.generator}, {"seed", c.dataset_seed()}};
  if (c.dataset.generator == "heteroscedastic_sine") {
    dataset["n"] = c.dataset.n;
    dataset["a"] = c.dataset.a;
    dataset["b"] = c.dataset.b;
  } else if (c.dataset.generator == "two_moons") {
    dataset["n"] = c.dataset.n;
    dataset["noise"] = c.dataset.noise;
  } else {
    dataset.erase("seed");
    dataset["path"] = c.dataset.path;
    dataset["target_column"] = c.dataset.target_column;
    if (c.dataset.group_column) dataset["group_column"] = *c.dataset.group_column;
  }
  json train = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"optimizer", to_string(c.train.optimizer)},
                {"shuffle", c.train.shuffle},
                {"clip_norm", c.train.clip_norm ? json(*c.train.clip_norm) : json(nullptr)}};
  return {{"version", c.version},
          {"task", to_string(c.task)},
          {"seed", c.seed},
          {"dataset", dataset},
          {"split",
           {{"train", c.split.train},
            {"val", c.split.val},
            {"calib", c.split.calib},
            {"test", c.split.test},
            {"seed", c.resolved_split_seed()}}},
          {"model",
           {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}, {"dropout", c.model.dropout}}},
          {"train", train},
          {"method", {{"name", c.method}, {"params", c.method_params}}},
          {"eval",
           {{"alpha", c.eval.alpha},
            {"selective_quantile", c.eval.selective_quantile},
            {"mace_levels", c.eval.mace_levels}}},
          {"output", c.output}};
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

/// Loads a config file. A relative CSV path is resolved against the config's
/// directory.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  ExperimentConfig c;
  try {
    c = config_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!c.dataset.path.empty() && std::filesystem::path(c.dataset.path).is_relative()) {
    c.dataset.path = (path.parent_path() / c.dataset.path).lexically_normal().string();
  }
  return c;
}

// ---- validation -------------------------------------------------------------------

template <typename T>
T method_param(const ExperimentConfig& c, const char* key, T fallback) {
  if (!c.method_params.contains(key)) return fallback;
  try {
    return c.method_params.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("method parameter '" + std::string(key) + "' has the wrong type");
  }
}

/// Checks everything that can be checked without data, so misconfigured runs
/// fail before any training.
inline void validate_config(const ExperimentConfig& c) {
  const MethodInfo& info = find_method(c.method, c.task);
  if (!c.method_params.is_object()) throw ConfigError("method params must be an object");
  for (const auto& [k, v] : c.method_params.items()) {
    if (std::find_if(info.params.begin(), info.params.end(), [&](const char* p) { return k == p; }) ==
        info.params.end()) {
      throw ConfigError("unknown parameter '" + k + "' for method '" + c.method + "'");
    }
  }
  c.split.validate();
  if (c.split.train <= 0.0) throw ConfigError("split.train must be positive");
  if (c.split.test <= 0.0) throw ConfigError("split.test must be positive");
  if (c.split.val <= 0.0) throw ConfigError("split.val must be positive (selective thresholds use it)");
  if (info.needs_calibration && c.split.calib <= 0.0) {
    throw ConfigError("method '" + c.method + "' needs a calibration split (split.calib > 0)");
  }
  check_alpha(c.eval.alpha);
  if (!(c.eval.selective_quantile > 0.0 && c.eval.selective_quantile < 1.0)) {
    throw ConfigError("eval.selective_quantile must lie in (0, 1)");
  }
  if (c.eval.mace_levels.empty()) throw ConfigError("eval.mace_levels must not be empty");
  for (double p : c.eval.mace_levels) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("eval.mace_levels must lie in (0, 1)");
  }
  if (!c.model.dropout.empty() && c.model.dropout.size() != c.model.hidden.size()) {
    throw ConfigError("model.dropout needs one rate per hidden layer");
  }

  const std::string& g = c.dataset.generator;
  if (g == "heteroscedastic_sine") {
    if (c.task != Task::kRegression) throw ConfigError("heteroscedastic_sine is a regression dataset");
    if (c.dataset.n < 10) throw ConfigError("dataset.n must be at least 10");
    if (c.dataset.a < 0.0 || c.dataset.b < 0.0) throw ConfigError("sine noise parameters must be non-negative");
  } else if (g == "two_moons") {
    if (c.task != Task::kClassification) throw ConfigError("two_moons is a classification dataset");
    if (c.dataset.n == 0 || c.dataset.n % 2) throw ConfigError("two_moons needs an even dataset.n");
    if (c.dataset.noise < 0.0) throw ConfigError("two_moons noise must be non-negative");
  } else if (g == "csv") {
    if (c.dataset.path.empty()) throw ConfigError("csv dataset needs dataset.path");
  } else {
    throw ConfigError("unknown dataset generator '" + g + "'");
  }

  if (c.method == "qr") {
    auto levels = method_param<std::vector<double>>(c, "levels", {});
    if (!levels.empty()) {
      QuantilePrediction probe{levels, {}};
      probe.validate();
      if (levels.size() < 2) throw ConfigError("qr needs at least two levels");
    }
  }
  if (c.method == "ensemble" && method_param<int>(c, "members", 5) < 2) {
    throw ConfigError("ensemble needs at least 2 members");
  }
  if (c.method == "mc_dropout" && method_param<int>(c, "passes", 50) < 2) {
    throw ConfigError("mc_dropout needs at least 2 passes");
  }
}

}  // namespace uqkit::harness
