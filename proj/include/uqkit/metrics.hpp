#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "uqkit/error.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/special.hpp"

namespace uqkit {

inline void check_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": length mismatch");
  if (a == 0) throw ContractError(std::string(what) + ": empty input");
}

inline double rmse(std::span<const double> pred, std::span<const double> y) {
  check_same_length(pred.size(), y.size(), "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - pred[i]) * (y[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

inline double mae(std::span<const double> pred, std::span<const double> y) {
  check_same_length(pred.size(), y.size(), "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - pred[i]);
  return s / static_cast<double>(y.size());
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of empty input");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Mean of 0.5 ln(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
inline double nll_gaussian(const GaussianPrediction& pred, std::span<const double> y) {
  check_same_length(pred.size(), y.size(), "nll_gaussian");
  pred.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double var = pred.std[i] * pred.std[i];
    const double r = y[i] - pred.mean[i];
    s += 0.5 * std::log(2.0 * std::numbers::pi * var) + r * r / (2.0 * var);
  }
  return s / static_cast<double>(y.size());
}

// 0.05, 0.10, ..., 0.95
inline std::vector<double> default_mace_levels() {
  std::vector<double> levels;
  for (int k = 1; k <= 19; ++k) levels.push_back(0.05 * k);
  return levels;
}

/// Empirical coverage of the centered intervals mu +- z_{(1+p)/2} sigma, one
/// entry per level p. Intervals are closed.
inline std::vector<double> calibration_curve(const GaussianPrediction& pred, std::span<const double> y,
                                             std::span<const double> levels) {
  check_same_length(pred.size(), y.size(), "calibration_curve");
  pred.validate();
  std::vector<double> coverage;
  for (double p : levels) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("calibration level outside (0, 1)");
    const double z = special::normal_quantile(0.5 * (1.0 + p));
    std::size_t hit = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hit += std::fabs(y[i] - pred.mean[i]) <= z * pred.std[i];
    coverage.push_back(static_cast<double>(hit) / static_cast<double>(y.size()));
  }
  return coverage;
}

/// Mean absolute calibration error: mean_p |coverage(p) - p|.
inline double mace(const GaussianPrediction& pred, std::span<const double> y,
                   std::span<const double> levels = {}) {
  const std::vector<double> defaults = default_mace_levels();
  if (levels.empty()) levels = defaults;
  const std::vector<double> cov = calibration_curve(pred, y, levels);
  double s = 0.0;
  for (std::size_t k = 0; k < levels.size(); ++k) s += std::fabs(cov[k] - levels[k]);
  return s / static_cast<double>(levels.size());
}

struct CoverageWidth {
  double coverage = 0.0;
  double mean_width = 0.0;  // +inf when any interval is unbounded
  bool infinite_width = false;
};

inline CoverageWidth coverage_width(const IntervalPrediction& iv, std::span<const double> y) {
  check_same_length(iv.size(), y.size(), "coverage_width");
  iv.validate();
  CoverageWidth cw;
  std::size_t hit = 0;
  double width = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    hit += (iv.lo[i] <= y[i] && y[i] <= iv.hi[i]);
    width += iv.hi[i] - iv.lo[i];
  }
  cw.coverage = static_cast<double>(hit) / static_cast<double>(y.size());
  cw.infinite_width = iv.unbounded || std::isinf(width);
  cw.mean_width = cw.infinite_width ? std::numeric_limits<double>::infinity() : width / static_cast<double>(y.size());
  return cw;
}

/// Type-1 (inverse ECDF) quantile: the ceil(q n)-th smallest value.
inline double quantile_type1(std::span<const double> values, double q) {
  if (values.empty()) throw ContractError("quantile of empty sample");
  if (!(q > 0.0 && q <= 1.0)) throw DomainError("quantile level must lie in (0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::size_t k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, v.size());
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end());
  return v[k - 1];
}

struct SelectiveConfig {
  std::vector<double> val_uncertainties;
  double quantile_level = 0.8;
};

enum class SelectiveRisk {
  kRmse,      // sqrt(mean(loss)), loss = squared error
  kMeanLoss,  // mean(loss), e.g. 0/1 error
};

struct SelectiveRecord {
  double threshold = 0.0;
  double kept_fraction = 0.0;
  std::size_t kept = 0;
  double risk_all = 0.0;
  std::optional<double> risk_kept;   // absent when everything is rejected
  std::optional<double> risk_delta;  // risk_all - risk_kept
};

inline double aggregate_risk(std::span<const double> losses, SelectiveRisk risk) {
  const double m = mean_of(losses);
  return risk == SelectiveRisk::kRmse ? std::sqrt(m) : m;
}

/// Keeps samples with uncertainty <= threshold.
inline SelectiveRecord selective_by_loss(std::span<const double> uncerts, std::span<const double> losses,
                                         double threshold, SelectiveRisk risk) {
  check_same_length(uncerts.size(), losses.size(), "selective prediction");
  SelectiveRecord r;
  r.threshold = threshold;
  std::vector<double> kept;
  for (std::size_t i = 0; i < uncerts.size(); ++i) {
    if (uncerts[i] <= threshold) kept.push_back(losses[i]);
  }
  r.kept = kept.size();
  r.kept_fraction = static_cast<double>(kept.size()) / static_cast<double>(uncerts.size());
  r.risk_all = aggregate_risk(losses, risk);
  if (!kept.empty()) {
    r.risk_kept = aggregate_risk(kept, risk);
    r.risk_delta = r.risk_all - *r.risk_kept;
  }
  return r;
}

inline std::vector<double> squared_errors(std::span<const double> pred, std::span<const double> y) {
  check_same_length(pred.size(), y.size(), "squared errors");
  std::vector<double> e(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) e[i] = (y[i] - pred[i]) * (y[i] - pred[i]);
  return e;
}

inline SelectiveRecord selective_at_threshold(std::span<const double> uncerts, std::span<const double> pred,
                                              std::span<const double> y, double threshold) {
  return selective_by_loss(uncerts, squared_errors(pred, y), threshold, SelectiveRisk::kRmse);
}

/// Threshold = type-1 quantile of the validation uncertainties at
/// cfg.quantile_level; RMSE before and after abstention.
inline SelectiveRecord selective_prediction(std::span<const double> uncerts, std::span<const double> pred,
                                            std::span<const double> y, const SelectiveConfig& cfg) {
  if (!(cfg.quantile_level > 0.0 && cfg.quantile_level < 1.0)) {
    throw ContractError("selective quantile level must lie in (0, 1)");
  }
  if (cfg.val_uncertainties.empty()) throw ContractError("selective prediction needs validation uncertainties");
  return selective_at_threshold(uncerts, pred, y, quantile_type1(cfg.val_uncertainties, cfg.quantile_level));
}

/// Pearson correlation; absent when either input is constant.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
  check_same_length(a.size(), b.size(), "pearson");
  if (a.size() < 2) return std::nullopt;
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline std::optional<double> error_uncert_correlation(std::span<const double> uncerts,
                                                      std::span<const double> abs_errors) {
  return pearson(uncerts, abs_errors);
}

}  // namespace uqkit
