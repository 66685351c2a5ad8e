#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/losses.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/train.hpp"

namespace uqkit {

struct ViConfig {
  double prior_std = 1.0;
  double kl_weight = 1.0;         // beta in  E_q[NLL] + beta * KL / N
  int mc_train_samples = 1;       // reparameterized draws per batch
  double rho_init = -5.0;         // softplus(-5) ~ 6.7e-3
  std::vector<bool> stochastic;   // per layer; empty means every layer

  void validate(std::size_t layers) const {
    if (!(prior_std > 0.0)) throw ConfigError("VI prior std must be positive");
    if (!(kl_weight >= 0.0)) throw ConfigError("VI KL weight must be non-negative");
    if (mc_train_samples < 1) throw ConfigError("VI needs at least one training sample per batch");
    if (!stochastic.empty() && stochastic.size() != layers) {
      throw ConfigError("VI stochastic flags need one entry per layer");
    }
  }
};

// Mean-field Gaussian posterior of one dense layer: w = mu + softplus(rho) * eps.
struct ViLayerParams {
  Tensor weight_mu, weight_rho;
  Tensor bias_mu, bias_rho;
  bool stochastic = true;
  bool frozen = false;
};

/// Bayes-by-backprop network. Non-stochastic layers use their means as point
/// estimates and contribute no KL; frozen layers are not trained. Both flags
/// together give partially stochastic networks.
class VariationalMLP {
 public:
  static VariationalMLP build(const MLPConfig& arch, const ViConfig& config) {
    return from_model(MLPModel::build(arch), config);
  }

  // Means start from `model` (random init or a pretrained network); frozen
  // flags carry over.
  static VariationalMLP from_model(const MLPModel& model, const ViConfig& config) {
    config.validate(model.config().layer_count());
    VariationalMLP v;
    v.arch_ = model.config();
    v.config_ = config;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
      const DenseLayer& d = model.layers()[l];
      ViLayerParams p{d.weight, Tensor::filled(d.weight.shape(), config.rho_init), d.bias,
                      Tensor::filled(d.bias.shape(), config.rho_init),
                      config.stochastic.empty() ? true : static_cast<bool>(config.stochastic[l]), d.frozen};
      v.layers_.push_back(std::move(p));
    }
    return v;
  }

  const MLPConfig& arch() const { return arch_; }
  const ViConfig& config() const { return config_; }
  const std::vector<ViLayerParams>& layers() const { return layers_; }

  // [w_mu, w_rho, b_mu, b_rho] per layer.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p;
    for (const auto& l : layers_) {
      p.push_back(l.weight_mu);
      p.push_back(l.weight_rho);
      p.push_back(l.bias_mu);
      p.push_back(l.bias_rho);
    }
    return p;
  }

  std::vector<bool> trainable_mask() const {
    std::vector<bool> m;
    for (const auto& l : layers_) {
      const bool mu = !l.frozen, rho = !l.frozen && l.stochastic;
      m.insert(m.end(), {mu, rho, mu, rho});
    }
    return m;
  }

  void set_parameters(std::span<const Tensor> p) {
    if (p.size() != 4 * layers_.size()) throw DimensionError("VI parameter count mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layers_[l].weight_mu = p[4 * l];
      layers_[l].weight_rho = p[4 * l + 1];
      layers_[l].bias_mu = p[4 * l + 2];
      layers_[l].bias_rho = p[4 * l + 3];
    }
  }

  /// Records one reparameterized forward pass; eps for layer l is drawn from
  /// derive_seed(seed, l).
  ForwardVars sample_forward(Tape& tape, std::span<const Var> vars, Var x, std::uint64_t seed) const {
    std::vector<Var> weights;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Var* v = &vars[4 * l];
      if (!layers_[l].stochastic) {
        weights.push_back(v[0]);
        weights.push_back(v[2]);
        continue;
      }
      Rng rng(derive_seed(seed, l));
      auto draw = [&](const Tensor& like) {
        Tensor e = Tensor::zeros(like.shape());
        for (double& z : e.data()) z = rng.normal();
        return tape.constant(std::move(e));
      };
      weights.push_back(v[0] + softplus(v[1]) * draw(v[0].value()));
      weights.push_back(v[2] + softplus(v[3]) * draw(v[2].value()));
    }
    return forward(tape, arch_, weights, x, DropoutMode::off());
  }

  Var kl(std::span<const Var> vars) const {
    Var total;
    bool any = false;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (!layers_[l].stochastic) continue;
      const Var* v = &vars[4 * l];
      Var k = kl_gaussian(v[0], softplus(v[1]), config_.prior_std) +
              kl_gaussian(v[2], softplus(v[3]), config_.prior_std);
      total = any ? total + k : k;
      any = true;
    }
    if (!any) return vars[0].tape().constant(Tensor::scalar(0.0));
    return total;
  }

  // Negative ELBO per batch: mean over draws of head_loss + kl_weight * KL / N.
  TrainResult fit(const Tensor& x, const Tensor& y, const LossFn& head_loss, const TrainConfig& train) {
    const double n_train = static_cast<double>(x.rows());
    BatchObjective objective = [this, &head_loss, n_train](Tape& tape, std::span<const Var> vars,
                                                           const Tensor& xb, const Tensor& yb,
                                                           std::uint64_t seed) {
      Var xv = tape.constant(xb);
      Var nll;
      for (int s = 0; s < config_.mc_train_samples; ++s) {
        Var out = sample_forward(tape, vars, xv, derive_seed(seed, static_cast<std::uint64_t>(s))).output;
        Var term = head_loss.fn(tape, out, yb);
        nll = s == 0 ? term : nll + term;
      }
      if (config_.mc_train_samples > 1) nll = nll * (1.0 / config_.mc_train_samples);
      if (config_.kl_weight == 0.0) return nll;
      return nll + kl(vars) * (config_.kl_weight / n_train);
    };
    std::vector<Tensor> params = parameters();
    TrainResult r = fit_parameters(params, trainable_mask(), x, y, objective, train);
    set_parameters(params);
    return r;
  }

  Tensor sample_output(const Tensor& x, std::uint64_t seed) const {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& p : parameters()) vars.push_back(tape.constant(p));
    return sample_forward(tape, vars, tape.constant(x), seed).output.value();
  }

  // Network with every weight at its posterior mean.
  MLPModel mean_model() const {
    MLPModel m = MLPModel::build(arch_);
    std::vector<Tensor> p;
    for (const auto& l : layers_) {
      p.push_back(l.weight_mu);
      p.push_back(l.bias_mu);
    }
    m.set_parameters(p);
    for (std::size_t l = 0; l < layers_.size(); ++l) m.freeze(l, layers_[l].frozen);
    return m;
  }

 private:
  MLPConfig arch_;
  ViConfig config_;
  std::vector<ViLayerParams> layers_;
};

/// BNN VI ELBO regressor with an MVE head; predictions are mixtures over
/// weight draws.
class BnnViRegressor {
 public:
  static BnnViRegressor fit(const Tensor& x, const Tensor& y, const MLPConfig& arch, const TrainConfig& train,
                            const ViConfig& config) {
    require_output_dim(arch, 2, "BNN VI ELBO");
    BnnViRegressor r{VariationalMLP::build(arch, config), {}};
    r.trace_ = r.net_.fit(x, y, mve_loss(), train).loss_trace;
    return r;
  }

  MixturePrediction predict(const Tensor& x, std::size_t samples, std::uint64_t seed) const {
    if (samples < 2) throw ContractError("VI prediction needs at least 2 samples");
    MixturePrediction mix;
    for (std::size_t t = 0; t < samples; ++t) {
      GaussianPrediction g = gaussian_from_output(net_.sample_output(x, derive_seed(seed, t)));
      mix.member_means.push_back(std::move(g.mean));
      mix.member_stds.push_back(std::move(g.std));
    }
    return mix;
  }

  const VariationalMLP& network() const { return net_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  BnnViRegressor(VariationalMLP net, std::vector<double> trace) : net_(std::move(net)), trace_(std::move(trace)) {}
  VariationalMLP net_;
  std::vector<double> trace_;
};

}  // namespace uqkit
