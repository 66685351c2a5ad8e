#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "uqkit/classification.hpp"
#include "uqkit/error.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/rng.hpp"

namespace uqkit {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("miscoverage alpha must lie in (0, 1)");
}

/// Order-statistic rank k = ceil((n + 1)(1 - alpha)), 1-based. A 1e-9
/// allowance keeps products like 10 * 0.9 from rounding up to the next
/// integer.
inline std::size_t conformal_rank(std::size_t n, double alpha) {
  check_alpha(alpha);
  const double v = static_cast<double>(n + 1) * (1.0 - alpha);
  return static_cast<std::size_t>(std::ceil(v - 1e-9));
}

/// Split-conformal calibration: qhat is the k-th smallest score with
/// duplicates retained, or +infinity when k > n.
struct ConformalCalibration {
  std::vector<double> scores;
  double alpha = 0.1;
  double qhat = 0.0;

  bool infinite() const { return std::isinf(qhat); }
};

inline ConformalCalibration calibrate_scores(std::vector<double> scores, double alpha) {
  check_alpha(alpha);
  if (scores.empty()) throw ContractError("conformal calibration needs at least one score");
  ConformalCalibration c;
  c.alpha = alpha;
  const std::size_t k = conformal_rank(scores.size(), alpha);
  if (k > scores.size()) {
    c.qhat = std::numeric_limits<double>::infinity();
  } else {
    std::vector<double> sorted = scores;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    c.qhat = sorted[k - 1];
  }
  c.scores = std::move(scores);
  return c;
}

// ---- conformalized quantile regression ----------------------------------------

inline void check_cqr_levels(const QuantilePrediction& q, double alpha) {
  q.validate();
  if (q.levels.size() != 2 || std::fabs(q.levels[0] - alpha / 2) > 1e-9 ||
      std::fabs(q.levels[1] - (1.0 - alpha / 2)) > 1e-9) {
    throw ContractError("CQR needs exactly the levels (alpha/2, 1 - alpha/2)");
  }
}

/// Scores s_i = max(q_lo(x_i) - y_i, y_i - q_hi(x_i)).
inline ConformalCalibration cqr_calibrate(const QuantilePrediction& q, std::span<const double> y, double alpha) {
  check_alpha(alpha);
  check_cqr_levels(q, alpha);
  if (q.size() != y.size()) throw DimensionError("CQR calibration: prediction/target length mismatch");
  std::vector<double> scores(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) scores[i] = std::max(q.at(i, 0) - y[i], y[i] - q.at(i, 1));
  return calibrate_scores(std::move(scores), alpha);
}

/// [q_lo - qhat, q_hi + qhat]; (-inf, inf) and `unbounded` when qhat is infinite.
inline IntervalPrediction cqr_predict(const QuantilePrediction& q, const ConformalCalibration& calib) {
  check_cqr_levels(q, calib.alpha);
  IntervalPrediction out;
  out.unbounded = calib.infinite();
  for (std::size_t i = 0; i < q.size(); ++i) {
    // Negative qhat can invert a narrow interval; collapse to the midpoint.
    double lo = q.at(i, 0) - calib.qhat, hi = q.at(i, 1) + calib.qhat;
    if (lo > hi) lo = hi = 0.5 * (lo + hi);
    out.lo.push_back(lo);
    out.hi.push_back(hi);
  }
  return out;
}

// ---- residual conformal ----------------------------------------------------------

/// Split conformal around a Gaussian predictor: score |y - mu|, or
/// |y - mu| / sigma when normalized; intervals mu +- qhat (times sigma).
struct ResidualConformal {
  ConformalCalibration calibration;
  bool normalized = false;

  IntervalPrediction apply(const GaussianPrediction& pred) const {
    if (normalized) pred.validate();
    IntervalPrediction out;
    out.unbounded = calibration.infinite();
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double half = normalized ? calibration.qhat * pred.std[i] : calibration.qhat;
      out.lo.push_back(pred.mean[i] - half);
      out.hi.push_back(pred.mean[i] + half);
    }
    return out;
  }
};

inline ResidualConformal residual_conformal(const GaussianPrediction& pred, std::span<const double> y, double alpha,
                                            bool normalized) {
  if (pred.size() != y.size()) throw DimensionError("residual conformal: prediction/target length mismatch");
  if (normalized) pred.validate();
  std::vector<double> scores(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = std::fabs(y[i] - pred.mean[i]);
    scores[i] = normalized ? r / pred.std[i] : r;
  }
  return {calibrate_scores(std::move(scores), alpha), normalized};
}

// ---- RAPS ----------------------------------------------------------------------------

struct RapsConfig {
  std::size_t k_reg = 1;
  double lambda = 0.01;
  bool randomized = false;
  std::uint64_t seed = 0;
};

// Per-sample membership over C classes, row-major [n x C].
struct PredictionSet {
  std::size_t classes = 0;
  std::vector<std::uint8_t> membership;

  std::size_t size() const { return classes ? membership.size() / classes : 0; }
  bool contains(std::size_t i, std::size_t c) const { return membership[i * classes + c] != 0; }
  std::size_t set_size(std::size_t i) const {
    return static_cast<std::size_t>(std::count(membership.begin() + static_cast<std::ptrdiff_t>(i * classes),
                                               membership.begin() + static_cast<std::ptrdiff_t>((i + 1) * classes), 1));
  }
};

// Class indices by descending probability; ties keep the lower index first.
inline std::vector<std::size_t> descending_order(std::span<const double> row) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  return order;
}

/// Scores of every rank position j (1-based) for one sample:
///   sum_{i<j} p_(i) + u * p_(j) + lambda * max(0, j - k_reg),
/// with u = 1 when randomization is off. Cumulative mass is capped at 1.
inline std::vector<double> raps_rank_scores(std::span<const double> row, const std::vector<std::size_t>& order,
                                            const RapsConfig& cfg, double u) {
  std::vector<double> s(row.size());
  double cum = 0.0;
  for (std::size_t j = 0; j < order.size(); ++j) {
    const double p = row[order[j]];
    const double own = cfg.randomized ? u * p : p;
    const double rank = static_cast<double>(j + 1);
    const double penalty = cfg.lambda * std::max(0.0, rank - static_cast<double>(cfg.k_reg));
    s[j] = std::min(cum + own, 1.0) + penalty;
    cum += p;
  }
  return s;
}

inline double raps_score(std::span<const double> row, std::size_t label, const RapsConfig& cfg, double u = 1.0) {
  const auto order = descending_order(row);
  const auto scores = raps_rank_scores(row, order, cfg, u);
  const std::size_t pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), label) - order.begin());
  return scores[pos];
}

struct RapsCalibration {
  ConformalCalibration calibration;
  RapsConfig config;
};

inline void check_raps(const RapsConfig& cfg) {
  if (cfg.lambda < 0.0) throw ContractError("RAPS lambda must be non-negative");
}

inline RapsCalibration raps_calibrate(const CategoricalPrediction& probs, std::span<const int> labels, double alpha,
                                      const RapsConfig& cfg) {
  check_alpha(alpha);
  check_raps(cfg);
  probs.validate();
  if (labels.size() != probs.size()) throw DimensionError("RAPS calibration: label count mismatch");
  check_labels(labels, probs.classes);
  Rng rng(derive_seed(cfg.seed, "raps-calibrate"));
  std::vector<double> scores(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double u = cfg.randomized ? rng.uniform() : 1.0;
    scores[i] = raps_score(probs.row(i), static_cast<std::size_t>(labels[i]), cfg, u);
  }
  return {calibrate_scores(std::move(scores), alpha), cfg};
}

/// Includes classes in descending-probability order while their rank score
/// is <= qhat.
inline PredictionSet raps_predict(const CategoricalPrediction& probs, const RapsCalibration& calib) {
  const RapsConfig& cfg = calib.config;
  Rng rng(derive_seed(cfg.seed, "raps-predict"));
  PredictionSet set{probs.classes, std::vector<std::uint8_t>(probs.probs.size(), 0)};
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto row = probs.row(i);
    const auto order = descending_order(row);
    const double u = cfg.randomized ? rng.uniform() : 1.0;
    const auto scores = raps_rank_scores(row, order, cfg, u);
    for (std::size_t j = 0; j < order.size(); ++j) {
      if (scores[j] <= calib.calibration.qhat) set.membership[i * probs.classes + order[j]] = 1;
    }
  }
  return set;
}

inline double set_coverage(const PredictionSet& set, std::span<const int> labels) {
  if (labels.size() != set.size()) throw DimensionError("set coverage: label count mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += set.contains(i, static_cast<std::size_t>(labels[i]));
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace uqkit
