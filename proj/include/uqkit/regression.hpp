#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/losses.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/parallel.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/train.hpp"

namespace uqkit {

// Lower bound added to every softplus-parameterized scale.
inline constexpr double kScaleFloor = 1e-6;

inline void require_output_dim(const MLPConfig& config, std::size_t expected, const char* method) {
  if (config.output_dim != expected) {
    throw ConfigError(std::string(method) + " needs output dim " + std::to_string(expected) + ", got " +
                      std::to_string(config.output_dim));
  }
}

// ---- heads -----------------------------------------------------------------

// MVE head: column 0 is the mean, column 1 the pre-softplus std.
struct GaussianHeadVars {
  Var mean;
  Var std;
};

inline GaussianHeadVars gaussian_head(Var output) {
  return {column(output, 0), softplus(column(output, 1)) + kScaleFloor};
}

inline GaussianPrediction gaussian_from_output(const Tensor& out) {
  GaussianPrediction g{std::vector<double>(out.rows()), std::vector<double>(out.rows())};
  for (std::size_t i = 0; i < out.rows(); ++i) {
    g.mean[i] = out.at(i, 0);
    g.std[i] = special::softplus(out.at(i, 1)) + kScaleFloor;
  }
  return g;
}

// DER head: gamma, nu = softplus, alpha = 1 + softplus, beta = softplus.
struct NigHeadVars {
  Var gamma, nu, alpha, beta;
};

inline NigHeadVars nig_head(Var output) {
  return {column(output, 0), softplus(column(output, 1)) + kScaleFloor,
          softplus(column(output, 2)) + (1.0 + kScaleFloor), softplus(column(output, 3)) + kScaleFloor};
}

inline NIGPrediction nig_from_output(const Tensor& out) {
  const std::size_t n = out.rows();
  NIGPrediction p{std::vector<double>(n), std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    p.gamma[i] = out.at(i, 0);
    p.nu[i] = special::softplus(out.at(i, 1)) + kScaleFloor;
    p.alpha[i] = special::softplus(out.at(i, 2)) + 1.0 + kScaleFloor;
    p.beta[i] = special::softplus(out.at(i, 3)) + kScaleFloor;
  }
  return p;
}

inline LossFn mse_loss() {
  return {"mse", [](Tape& t, Var out, const Tensor& y) { return mean(square(t.constant(y) - column(out, 0))); }};
}

inline LossFn mve_loss() {
  return {"gaussian-nll", [](Tape&, Var out, const Tensor& y) {
            GaussianHeadVars h = gaussian_head(out);
            return gaussian_nll_loss(h.mean, h.std, y);
          }};
}

inline LossFn pinball_loss_fn(std::vector<double> levels) {
  return {"pinball", [levels = std::move(levels)](Tape&, Var out, const Tensor& y) {
            return pinball_loss(out, levels, y);
          }};
}

inline LossFn der_loss_fn(double lambda) {
  return {"der", [lambda](Tape&, Var out, const Tensor& y) {
            NigHeadVars h = nig_head(out);
            return der_loss(h.gamma, h.nu, h.alpha, h.beta, y, lambda);
          }};
}

// ---- single-network predictors ---------------------------------------------

class DeterministicRegressor {
 public:
  static DeterministicRegressor fit(const Tensor& x, const Tensor& y, const MLPConfig& config,
                                    const TrainConfig& train) {
    require_output_dim(config, 1, "deterministic regressor");
    DeterministicRegressor r;
    r.model_ = MLPModel::build(config);
    r.trace_ = uqkit::fit(r.model_, x, y, mse_loss(), train).loss_trace;
    return r;
  }

  std::vector<double> predict(const Tensor& x) const { return model_.predict(x).vector(); }
  const MLPModel& model() const { return model_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  MLPModel model_;
  std::vector<double> trace_;
};

/// Mean-variance estimation network trained by Gaussian NLL.
class MveRegressor {
 public:
  static MveRegressor fit(const Tensor& x, const Tensor& y, const MLPConfig& config, const TrainConfig& train) {
    require_output_dim(config, 2, "MVE");
    return fit_model(MLPModel::build(config), x, y, train);
  }

  // Continues training from an existing network (e.g. with frozen layers).
  static MveRegressor fit_model(MLPModel model, const Tensor& x, const Tensor& y, const TrainConfig& train) {
    require_output_dim(model.config(), 2, "MVE");
    MveRegressor r;
    r.model_ = std::move(model);
    r.trace_ = uqkit::fit(r.model_, x, y, mve_loss(), train).loss_trace;
    return r;
  }

  static MveRegressor from_model(MLPModel model) {
    require_output_dim(model.config(), 2, "MVE");
    MveRegressor r;
    r.model_ = std::move(model);
    return r;
  }

  GaussianPrediction predict(const Tensor& x, DropoutMode dropout = DropoutMode::off()) const {
    return gaussian_from_output(model_.predict(x, dropout));
  }
  const MLPModel& model() const { return model_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  MLPModel model_;
  std::vector<double> trace_;
};

/// Quantile regression network, one output per level, trained by pinball loss.
/// Predictions are sorted per sample to remove quantile crossing.
class QuantileRegressor {
 public:
  static QuantileRegressor fit(const Tensor& x, const Tensor& y, const MLPConfig& config, const TrainConfig& train,
                               std::vector<double> levels) {
    QuantilePrediction{levels, {}}.validate();
    require_output_dim(config, levels.size(), "quantile regression");
    QuantileRegressor r;
    r.levels_ = std::move(levels);
    r.model_ = MLPModel::build(config);
    r.trace_ = uqkit::fit(r.model_, x, y, pinball_loss_fn(r.levels_), train).loss_trace;
    return r;
  }

  QuantilePrediction predict(const Tensor& x) const {
    QuantilePrediction q{levels_, model_.predict(x).vector()};
    q.sort_rows();
    return q;
  }
  const std::vector<double>& levels() const { return levels_; }
  const MLPModel& model() const { return model_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  std::vector<double> levels_;
  MLPModel model_;
  std::vector<double> trace_;
};

/// Deep evidential regression: NIG head trained with der_loss.
class DerRegressor {
 public:
  static DerRegressor fit(const Tensor& x, const Tensor& y, const MLPConfig& config, const TrainConfig& train,
                          double lambda) {
    require_output_dim(config, 4, "DER");
    DerRegressor r;
    r.model_ = MLPModel::build(config);
    r.trace_ = uqkit::fit(r.model_, x, y, der_loss_fn(lambda), train).loss_trace;
    return r;
  }

  NIGPrediction predict(const Tensor& x) const { return nig_from_output(model_.predict(x)); }
  const MLPModel& model() const { return model_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  MLPModel model_;
  std::vector<double> trace_;
};

// ---- ensembles and MC dropout ------------------------------------------------

struct MemberSeeds {
  std::uint64_t init;
  std::uint64_t train;
};

inline MemberSeeds ensemble_member_seeds(std::uint64_t base_seed, std::size_t member) {
  const std::uint64_t s = derive_seed(derive_seed(base_seed, "ensemble"), member);
  return {derive_seed(s, "init"), derive_seed(s, "train")};
}

/// Deep ensemble of independently initialized MVE networks.
class DeepEnsemble {
 public:
  static DeepEnsemble fit(const Tensor& x, const Tensor& y, const MLPConfig& config, const TrainConfig& train,
                          std::size_t members, std::uint64_t base_seed, std::size_t threads = 1) {
    if (members < 2) throw ContractError("deep ensemble needs at least 2 members");
    std::vector<MemberSeeds> seeds;
    for (std::size_t m = 0; m < members; ++m) seeds.push_back(ensemble_member_seeds(base_seed, m));
    return fit_with_seeds(x, y, config, train, seeds, threads);
  }

  static DeepEnsemble fit_with_seeds(const Tensor& x, const Tensor& y, const MLPConfig& config,
                                     const TrainConfig& train, std::span<const MemberSeeds> seeds,
                                     std::size_t threads = 1) {
    if (seeds.size() < 2) throw ContractError("deep ensemble needs at least 2 members");
    DeepEnsemble e;
    e.members_.resize(seeds.size());
    parallel_for(seeds.size(), threads, [&](std::size_t m) {
      MLPConfig c = config;
      c.init_seed = seeds[m].init;
      TrainConfig t = train;
      t.seed = seeds[m].train;
      e.members_[m] = MveRegressor::fit(x, y, c, t);
    });
    return e;
  }

  MixturePrediction predict(const Tensor& x) const {
    MixturePrediction mix;
    for (const auto& m : members_) {
      GaussianPrediction g = m.predict(x);
      mix.member_means.push_back(std::move(g.mean));
      mix.member_stds.push_back(std::move(g.std));
    }
    return mix;
  }

  const std::vector<MveRegressor>& members() const { return members_; }

 private:
  std::vector<MveRegressor> members_;
};

/// T stochastic forward passes of an MVE network with dropout kept on. Pass t
/// uses dropout seed derive_seed(seed, t); each pass contributes (mu_t, sigma_t).
inline MixturePrediction predict_mc_dropout(const MLPModel& model, const Tensor& x, std::size_t passes,
                                            std::uint64_t seed) {
  if (passes < 2) throw ContractError("MC dropout needs at least 2 passes");
  require_output_dim(model.config(), 2, "MC dropout");
  const auto& rates = model.config().dropout_rates;
  if (std::all_of(rates.begin(), rates.end(), [](double r) { return r == 0.0; })) {
    std::clog << "uqkit: warning: MC dropout on a model without dropout; epistemic variance will be zero\n";
  }
  MixturePrediction mix;
  for (std::size_t t = 0; t < passes; ++t) {
    GaussianPrediction g = gaussian_from_output(model.predict(x, DropoutMode::sampled(derive_seed(seed, t))));
    mix.member_means.push_back(std::move(g.mean));
    mix.member_stds.push_back(std::move(g.std));
  }
  return mix;
}

}  // namespace uqkit
