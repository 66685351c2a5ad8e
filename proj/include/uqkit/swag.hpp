#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "uqkit/error.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/train.hpp"

namespace uqkit {

// Concatenates the parameters of non-frozen layers.
inline std::vector<double> flatten_trainable(const MLPModel& model) {
  std::vector<double> flat;
  for (const auto& l : model.layers()) {
    if (l.frozen) continue;
    flat.insert(flat.end(), l.weight.values().begin(), l.weight.values().end());
    flat.insert(flat.end(), l.bias.values().begin(), l.bias.values().end());
  }
  return flat;
}

inline std::vector<double> flatten_trainable(std::span<const Tensor> params, const std::vector<bool>& trainable) {
  std::vector<double> flat;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable[i]) flat.insert(flat.end(), params[i].values().begin(), params[i].values().end());
  }
  return flat;
}

// Inverse of flatten_trainable: frozen layers keep the template's values.
inline MLPModel with_trainable(const MLPModel& tmpl, std::span<const double> flat) {
  std::vector<Tensor> params = tmpl.parameters();
  const std::vector<bool> mask = tmpl.trainable_mask();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask[i]) continue;
    auto dst = params[i].data();
    if (offset + dst.size() > flat.size()) throw DimensionError("flat parameter vector too short for template");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + dst.size()), dst.begin());
    offset += dst.size();
  }
  if (offset != flat.size()) throw DimensionError("flat parameter vector does not match template");
  MLPModel m = tmpl;
  m.set_parameters(params);
  return m;
}

/// SWAG moments over parameter snapshots.
///
/// mean and second_moment are running averages of theta and theta^2. The
/// deviation buffer keeps theta_i - mean_i (mean_i includes snapshot i) for
/// the most recent max_rank snapshots.
class SwagStats {
 public:
  SwagStats(std::size_t dim, std::size_t max_rank)
      : mean_(dim, 0.0), second_(dim, 0.0), max_rank_(max_rank) {
    if (max_rank < 2) throw ContractError("SWAG rank K must be at least 2");
  }

  void add_snapshot(std::span<const double> theta) {
    if (theta.size() != mean_.size()) throw DimensionError("SWAG snapshot length mismatch");
    const double n = static_cast<double>(count_);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      // Incremental form keeps constant snapshots exactly constant.
      mean_[i] += (theta[i] - mean_[i]) / (n + 1.0);
      second_[i] += (theta[i] * theta[i] - second_[i]) / (n + 1.0);
    }
    ++count_;
    std::vector<double> dev(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) dev[i] = theta[i] - mean_[i];
    deviations_.push_back(std::move(dev));
    if (deviations_.size() > max_rank_) deviations_.pop_front();
  }

  std::size_t dim() const { return mean_.size(); }
  std::size_t count() const { return count_; }
  std::size_t rank() const { return deviations_.size(); }
  std::size_t max_rank() const { return max_rank_; }
  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& second_moment() const { return second_; }
  const std::deque<std::vector<double>>& deviations() const { return deviations_; }

  std::vector<double> diag_variance() const {
    std::vector<double> v(mean_.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, second_[i] - mean_[i] * mean_[i]);
    return v;
  }

  /// theta = mean + scale/sqrt(2) * sqrt(diag) * z1 + scale/sqrt(2(K-1)) * D z2
  std::vector<double> sample(Rng& rng, double scale) const {
    if (rank() < 2) throw ContractError("SWAG sampling needs at least 2 deviation columns");
    std::vector<double> theta = mean_;
    if (scale == 0.0) return theta;
    const std::vector<double> var = diag_variance();
    const double c1 = scale / std::sqrt(2.0);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += c1 * std::sqrt(var[i]) * rng.normal();
    const double c2 = scale / std::sqrt(2.0 * static_cast<double>(rank() - 1));
    for (const auto& col : deviations_) {
      const double z = rng.normal();
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += c2 * col[i] * z;
    }
    return theta;
  }

 private:
  std::vector<double> mean_;
  std::vector<double> second_;
  std::deque<std::vector<double>> deviations_;
  std::size_t max_rank_;
  std::size_t count_ = 0;
};

/// Continues training a copy of `model` for `snapshot_epochs` epochs at
/// learning rate `swag_lr` (other settings from `base`), snapshotting the
/// non-frozen parameters after every epoch.
inline SwagStats swag_collect(const MLPModel& model, const Tensor& x, const Tensor& y, const LossFn& loss,
                              int snapshot_epochs, std::size_t max_rank, double swag_lr, TrainConfig base) {
  if (max_rank < 2) throw ContractError("SWAG rank K must be at least 2");
  if (snapshot_epochs < static_cast<int>(max_rank)) {
    throw ContractError("SWAG needs snapshot epochs >= K (" + std::to_string(snapshot_epochs) + " < " +
                        std::to_string(max_rank) + ")");
  }
  MLPModel work = model;
  const std::vector<bool> mask = work.trainable_mask();
  SwagStats stats(flatten_trainable(work).size(), max_rank);
  base.epochs = snapshot_epochs;
  base.learning_rate = swag_lr;
  EpochCallback collect = [&](const EpochSnapshot& snap) {
    stats.add_snapshot(flatten_trainable(snap.parameters, mask));
  };
  fit(work, x, y, loss, base, std::span<const EpochCallback>(&collect, 1));
  return stats;
}

/// Draws S parameter vectors from the SWAG posterior, loads each into the
/// template and runs an MVE forward pass; one mixture member per draw.
inline MixturePrediction swag_sample_predict(const SwagStats& stats, const MLPModel& tmpl, const Tensor& x,
                                             std::size_t samples, std::uint64_t seed, double scale) {
  if (samples < 2) throw ContractError("SWAG prediction needs at least 2 samples");
  if (flatten_trainable(tmpl).size() != stats.dim()) {
    throw DimensionError("SWAG statistics do not match the template's trainable parameters");
  }
  require_output_dim(tmpl.config(), 2, "SWAG");
  Rng rng(derive_seed(seed, "swag-sample"));
  MixturePrediction mix;
  for (std::size_t s = 0; s < samples; ++s) {
    const MLPModel m = with_trainable(tmpl, stats.sample(rng, scale));
    GaussianPrediction g = gaussian_from_output(m.predict(x));
    mix.member_means.push_back(std::move(g.mean));
    mix.member_stds.push_back(std::move(g.std));
  }
  return mix;
}

}  // namespace uqkit
