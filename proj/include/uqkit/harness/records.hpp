#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/datasets.hpp"
#include "uqkit/harness/config.hpp"
#include "uqkit/harness/methods.hpp"
#include "uqkit/metrics.hpp"

namespace uqkit::harness {

/// Flat per-sample test predictions; this is exactly what predictions.csv
/// holds, so reports and plot data can be rebuilt from disk alone.
/// Optional columns are empty vectors when absent.
struct PredictionTable {
  Task task = Task::kRegression;
  std::vector<double> y;     // target, or class label as a double
  std::vector<double> mean;  // point prediction, or predicted class
  std::vector<double> std;
  std::vector<double> lo, hi;
  std::vector<double> uncertainty;
  std::vector<double> aleatoric, epistemic;  // variances, or entropies for classification
  std::size_t classes = 0;
  std::vector<double> probs;         // [n x classes]
  std::vector<std::uint8_t> in_set;  // [n x classes]
  std::vector<std::string> groups;

  std::size_t size() const { return y.size(); }
  bool has_gaussian() const { return !std.empty(); }
  bool has_interval() const { return !lo.empty(); }
  bool has_uncertainty() const { return !uncertainty.empty(); }
  bool has_sets() const { return !in_set.empty(); }

  GaussianPrediction gaussian() const { return {mean, std}; }
  IntervalPrediction interval() const {
    IntervalPrediction iv{lo, hi};
    iv.unbounded = std::any_of(hi.begin(), hi.end(), [](double v) { return std::isinf(v); });
    return iv;
  }

  PredictionTable subset(const std::vector<std::size_t>& rows) const {
    PredictionTable t;
    t.task = task;
    t.classes = classes;
    auto pick = [&](const std::vector<double>& src, std::vector<double>& dst) {
      if (src.empty()) return;
      for (std::size_t r : rows) dst.push_back(src[r]);
    };
    pick(y, t.y);
    pick(mean, t.mean);
    pick(std, t.std);
    pick(lo, t.lo);
    pick(hi, t.hi);
    pick(uncertainty, t.uncertainty);
    pick(aleatoric, t.aleatoric);
    pick(epistemic, t.epistemic);
    for (std::size_t r : rows) {
      if (!probs.empty()) t.probs.insert(t.probs.end(), probs.begin() + r * classes, probs.begin() + (r + 1) * classes);
      if (!in_set.empty()) {
        t.in_set.insert(t.in_set.end(), in_set.begin() + r * classes, in_set.begin() + (r + 1) * classes);
      }
      if (!groups.empty()) t.groups.push_back(groups[r]);
    }
    return t;
  }
};

inline PredictionTable make_table(Task task, const SplitOutput& out, const TabularDataset& data) {
  PredictionTable t;
  t.task = task;
  t.y = data.y;
  t.mean = out.mean;
  t.groups = data.groups;
  t.uncertainty = out.uncertainty;
  if (out.gaussian) t.std = out.gaussian->std;
  if (out.interval) {
    t.lo = out.interval->lo;
    t.hi = out.interval->hi;
    if (out.interval->unbounded) {
      std::fill(t.lo.begin(), t.lo.end(), -std::numeric_limits<double>::infinity());
      std::fill(t.hi.begin(), t.hi.end(), std::numeric_limits<double>::infinity());
    }
  }
  if (out.decomposition) {
    t.aleatoric = out.decomposition->aleatoric;
    t.epistemic = out.decomposition->epistemic;
  }
  if (out.probs) {
    t.classes = out.probs->classes;
    t.probs = out.probs->probs;
  }
  if (out.entropy_split) {
    t.aleatoric = out.entropy_split->aleatoric;
    t.epistemic = out.entropy_split->epistemic;
  }
  if (out.sets) t.in_set = out.sets->membership;
  return t;
}

// ---- predictions.csv ----------------------------------------------------------------

inline void write_predictions_csv(const PredictionTable& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  const bool cls = t.task == Task::kClassification;
  std::vector<std::string> header{"index", cls ? "label" : "y", cls ? "pred" : "mean"};
  if (t.has_gaussian()) header.push_back("std");
  if (t.has_interval()) {
    header.push_back("lo");
    header.push_back("hi");
  }
  if (t.has_uncertainty()) header.push_back("uncertainty");
  if (!t.aleatoric.empty()) {
    header.push_back("aleatoric");
    header.push_back("epistemic");
  }
  for (std::size_t c = 0; c < t.classes && !t.probs.empty(); ++c) header.push_back("p" + std::to_string(c));
  for (std::size_t c = 0; c < t.classes && t.has_sets(); ++c) header.push_back("in_set" + std::to_string(c));
  if (!t.groups.empty()) header.push_back("group");
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << i;
    auto put = [&](double v) { out << ',' << format_double(v); };
    if (cls) {
      out << ',' << static_cast<long>(t.y[i]) << ',' << static_cast<long>(t.mean[i]);
    } else {
      put(t.y[i]);
      put(t.mean[i]);
    }
    if (t.has_gaussian()) put(t.std[i]);
    if (t.has_interval()) {
      put(t.lo[i]);
      put(t.hi[i]);
    }
    if (t.has_uncertainty()) put(t.uncertainty[i]);
    if (!t.aleatoric.empty()) {
      put(t.aleatoric[i]);
      put(t.epistemic[i]);
    }
    if (!t.probs.empty()) {
      for (std::size_t c = 0; c < t.classes; ++c) put(t.probs[i * t.classes + c]);
    }
    if (t.has_sets()) {
      for (std::size_t c = 0; c < t.classes; ++c) out << ',' << int(t.in_set[i * t.classes + c]);
    }
    if (!t.groups.empty()) out << ',' << t.groups[i];
    out << '\n';
  }
}

inline PredictionTable read_predictions_csv(const std::filesystem::path& path, Task task) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot read '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  const std::vector<std::string> header = uqkit::detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t k = 0; k < header.size(); ++k) col[header[k]] = k;

  PredictionTable t;
  t.task = task;
  const bool cls = task == Task::kClassification;
  for (std::size_t c = 0; col.count("p" + std::to_string(c)) || col.count("in_set" + std::to_string(c)); ++c) {
    t.classes = c + 1;
  }
  auto need = [&](const std::string& name) {
    if (!col.count(name)) throw ParseError(path.string() + ": missing column '" + name + "'");
    return col.at(name);
  };
  const std::size_t cy = need(cls ? "label" : "y"), cm = need(cls ? "pred" : "mean");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = uqkit::detail::split_csv_line(line);
    if (cells.size() != header.size()) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad field count");
    auto num = [&](std::size_t k) { return uqkit::detail::parse_cell(cells[k], path.string(), lineno, header[k]); };
    t.y.push_back(num(cy));
    t.mean.push_back(num(cm));
    if (col.count("std")) t.std.push_back(num(col["std"]));
    if (col.count("lo")) {
      t.lo.push_back(num(need("lo")));
      t.hi.push_back(num(need("hi")));
    }
    if (col.count("uncertainty")) t.uncertainty.push_back(num(col["uncertainty"]));
    if (col.count("aleatoric")) {
      t.aleatoric.push_back(num(need("aleatoric")));
      t.epistemic.push_back(num(need("epistemic")));
    }
    for (std::size_t c = 0; c < t.classes; ++c) {
      if (col.count("p" + std::to_string(c))) t.probs.push_back(num(col["p" + std::to_string(c)]));
      if (col.count("in_set" + std::to_string(c))) {
        t.in_set.push_back(static_cast<std::uint8_t>(num(col["in_set" + std::to_string(c)]) != 0.0));
      }
    }
    if (col.count("group")) t.groups.push_back(cells[col["group"]]);
  }
  if (t.y.empty()) throw ParseError(path.string() + ": no prediction rows");
  return t;
}

// ---- metrics document --------------------------------------------------------------

inline std::vector<double> abs_errors(const PredictionTable& t) {
  std::vector<double> e(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) e[i] = std::fabs(t.y[i] - t.mean[i]);
  return e;
}

inline std::vector<double> zero_one_errors(const PredictionTable& t) {
  std::vector<double> e(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) e[i] = t.y[i] != t.mean[i] ? 1.0 : 0.0;
  return e;
}

inline void put_optional(nlohmann::json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

inline double mean_or_zero(const std::vector<double>& v) { return v.empty() ? 0.0 : mean_of(v); }

/// Core metrics for one table. `threshold` is the selective cut-off fixed on
/// validation uncertainties (absent for methods without uncertainty).
inline nlohmann::json table_metrics(const PredictionTable& t, const EvalConfig& eval, std::optional<double> threshold) {
  nlohmann::json j;
  j["n"] = t.size();
  const bool cls = t.task == Task::kClassification;
  std::vector<double> losses;
  SelectiveRisk risk;
  if (cls) {
    losses = zero_one_errors(t);
    risk = SelectiveRisk::kMeanLoss;
    j["accuracy"] = 1.0 - mean_of(losses);
    if (!t.probs.empty()) {
      double nll = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double p = t.probs[i * t.classes + static_cast<std::size_t>(t.y[i])];
        nll -= std::log(std::max(p, 1e-300));
      }
      j["nll"] = nll / static_cast<double>(t.size());
    }
    if (t.has_uncertainty()) j["mean_entropy"] = mean_of(t.uncertainty);
    if (t.has_sets()) {
      std::size_t hit = 0, total = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        hit += t.in_set[i * t.classes + static_cast<std::size_t>(t.y[i])];
        for (std::size_t c = 0; c < t.classes; ++c) total += t.in_set[i * t.classes + c];
      }
      j["coverage"] = static_cast<double>(hit) / static_cast<double>(t.size());
      j["mean_set_size"] = static_cast<double>(total) / static_cast<double>(t.size());
    }
  } else {
    losses = squared_errors(t.mean, t.y);
    risk = SelectiveRisk::kRmse;
    j["rmse"] = rmse(t.mean, t.y);
    j["mae"] = mae(t.mean, t.y);
    if (t.has_gaussian()) {
      j["nll"] = nll_gaussian(t.gaussian(), t.y);
      j["mace"] = mace(t.gaussian(), t.y, eval.mace_levels);
    }
    if (t.has_interval()) {
      const CoverageWidth cw = coverage_width(t.interval(), t.y);
      j["coverage"] = cw.coverage;
      if (cw.infinite_width) {
        j["interval_unbounded"] = true;
      } else {
        j["mean_interval_width"] = cw.mean_width;
      }
    }
    if (t.has_uncertainty()) j["mean_std"] = mean_of(t.uncertainty);
  }
  if (!t.aleatoric.empty()) {
    j["mean_aleatoric"] = mean_or_zero(t.aleatoric);
    j["mean_epistemic"] = mean_or_zero(t.epistemic);
  }

  nlohmann::json sel;
  sel["quantile_level"] = eval.selective_quantile;
  if (threshold && t.has_uncertainty()) {
    const SelectiveRecord r = selective_by_loss(t.uncertainty, losses, *threshold, risk);
    sel["threshold"] = r.threshold;
    sel["kept_fraction"] = r.kept_fraction;
    sel["risk_all"] = r.risk_all;
    put_optional(sel, "risk_kept", r.risk_kept);
    put_optional(sel, "risk_delta", r.risk_delta);
  } else {
    // No uncertainty to threshold: everything is kept and the delta is 0.
    const double all = aggregate_risk(losses, risk);
    sel["kept_fraction"] = 1.0;
    sel["risk_all"] = all;
    sel["risk_kept"] = all;
    sel["risk_delta"] = 0.0;
  }
  sel["risk"] = cls ? "error_rate" : "rmse";
  j["selective"] = sel;

  if (t.has_uncertainty()) {
    put_optional(j, "error_uncert_corr", error_uncert_correlation(t.uncertainty, cls ? losses : abs_errors(t)));
  }
  return j;
}

inline std::vector<std::string> group_names(const std::vector<std::string>& groups) {
  std::vector<std::string> names = groups;
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return names;
}

/// Full metrics document: header fields, overall metrics, and one
/// sub-report per group label when the data carries groups.
inline nlohmann::json metrics_document(const ExperimentConfig& c, const PredictionTable& test,
                                       std::optional<double> threshold) {
  const MethodInfo& info = find_method(c.method, c.task);
  nlohmann::json j = table_metrics(test, c.eval, threshold);
  j["format"] = "uqkit-metrics";
  j["version"] = 1;
  j["task"] = to_string(c.task);
  j["method"] = c.method;
  j["family"] = info.family;
  j["alpha"] = c.eval.alpha;
  if (!test.groups.empty()) {
    nlohmann::json groups = nlohmann::json::object();
    for (const auto& g : group_names(test.groups)) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < test.size(); ++i) {
        if (test.groups[i] == g) rows.push_back(i);
      }
      groups[g] = table_metrics(test.subset(rows), c.eval, threshold);
    }
    j["groups"] = groups;
  }
  return j;
}

// ---- plot data ----------------------------------------------------------------------

inline const std::vector<std::string>& plot_kinds() {
  static const std::vector<std::string> kinds{"calibration-curve", "selective-curve", "interval-series", "group-bars"};
  return kinds;
}

inline bool plot_available(const PredictionTable& t, const std::string& kind) {
  if (kind == "calibration-curve") return t.has_gaussian();
  if (kind == "selective-curve") return t.has_uncertainty();
  if (kind == "interval-series") return t.has_interval();
  if (kind == "group-bars") return !t.groups.empty();
  throw ConfigError("unknown plot kind '" + kind + "'");
}

/// Columnar CSV text for one plot kind.
///   calibration-curve: level, empirical_coverage
///   selective-curve:   kept_fraction, rmse (or error_rate); thresholds sweep
///                      every distinct test uncertainty, ending at 1.0
///   interval-series:   index, y, mean, lo, hi
///   group-bars:        group, metric, value
inline std::string plot_data(const PredictionTable& t, const EvalConfig& eval, const std::string& kind) {
  if (!plot_available(t, kind)) throw ContractError("predictions lack the fields needed for plot kind '" + kind + "'");
  const bool cls = t.task == Task::kClassification;
  std::ostringstream out;
  if (kind == "calibration-curve") {
    out << "level,empirical_coverage\n";
    const auto cov = calibration_curve(t.gaussian(), t.y, eval.mace_levels);
    for (std::size_t k = 0; k < cov.size(); ++k) {
      out << format_double(eval.mace_levels[k]) << ',' << format_double(cov[k]) << '\n';
    }
  } else if (kind == "selective-curve") {
    out << "kept_fraction," << (cls ? "error_rate" : "rmse") << '\n';
    const std::vector<double> losses = cls ? zero_one_errors(t) : squared_errors(t.mean, t.y);
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return t.uncertainty[a] < t.uncertainty[b]; });
    double sum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      sum += losses[order[k]];
      const bool last_of_tie = k + 1 == order.size() || t.uncertainty[order[k + 1]] != t.uncertainty[order[k]];
      if (!last_of_tie) continue;
      const double kept = static_cast<double>(k + 1);
      const double risk = sum / kept;
      out << format_double(kept / static_cast<double>(order.size())) << ','
          << format_double(cls ? risk : std::sqrt(risk)) << '\n';
    }
  } else if (kind == "interval-series") {
    out << "index,y,mean,lo,hi\n";
    for (std::size_t i = 0; i < t.size(); ++i) {
      out << i << ',' << format_double(t.y[i]) << ',' << format_double(t.mean[i]) << ',' << format_double(t.lo[i])
          << ',' << format_double(t.hi[i]) << '\n';
    }
  } else {
    out << "group,metric,value\n";
    for (const auto& g : group_names(t.groups)) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t.groups[i] == g) rows.push_back(i);
      }
      const PredictionTable sub = t.subset(rows);
      if (cls) {
        out << g << ",error_rate," << format_double(mean_of(zero_one_errors(sub))) << '\n';
      } else {
        out << g << ",mae," << format_double(mae(sub.mean, sub.y)) << '\n';
        out << g << ",rmse," << format_double(rmse(sub.mean, sub.y)) << '\n';
      }
      if (sub.has_uncertainty()) {
        out << g << ',' << (cls ? "mean_entropy" : "mean_std") << ',' << format_double(mean_of(sub.uncertainty)) << '\n';
      }
      if (sub.has_gaussian()) out << g << ",nll," << format_double(nll_gaussian(sub.gaussian(), sub.y)) << '\n';
    }
  }
  return out.str();
}

}  // namespace uqkit::harness
