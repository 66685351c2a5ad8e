#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/tensor.hpp"

namespace uqkit {

enum class Optimizer { kSgd, kSgdMomentum, kAdam };

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "sgd-momentum" || s == "momentum") return Optimizer::kSgdMomentum;
  if (s == "adam") return Optimizer::kAdam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

inline std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::kSgd: return "sgd";
    case Optimizer::kSgdMomentum: return "sgd-momentum";
    case Optimizer::kAdam: return "adam";
  }
  return "sgd";
}

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed = 0;
  bool shuffle = true;
  // Global-norm gradient clipping; nullopt disables it.
  std::optional<double> clip_norm = 10.0;

  void validate(std::size_t n_train) const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (batch_size > n_train) {
      throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds training set size " +
                        std::to_string(n_train));
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  }
};

struct EpochSnapshot {
  int epoch;
  double loss;
  std::span<const Tensor> parameters;
};

using EpochCallback = std::function<void(const EpochSnapshot&)>;

struct TrainResult {
  std::vector<double> loss_trace;  // batch-size weighted mean loss per epoch
};

// Loss for one mini-batch. `batch_seed` is unique per (epoch, batch) and
// feeds dropout masks or weight-noise draws.
using BatchObjective = std::function<Var(Tape& tape, std::span<const Var> params, const Tensor& x,
                                         const Tensor& y, std::uint64_t batch_seed)>;

namespace detail {

class OptimizerState {
 public:
  OptimizerState(Optimizer kind, std::span<const Tensor> params) : kind_(kind) {
    for (const auto& p : params) {
      m_.push_back(Tensor::zeros(p.shape()));
      if (kind == Optimizer::kAdam) v_.push_back(Tensor::zeros(p.shape()));
    }
  }

  void step(std::size_t slot, Tensor& param, const Tensor& grad, double lr) {
    auto p = param.data();
    auto g = grad.values();
    switch (kind_) {
      case Optimizer::kSgd:
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        break;
      case Optimizer::kSgdMomentum: {
        auto m = m_[slot].data();
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = 0.9 * m[i] + g[i];
          p[i] -= lr * m[i];
        }
        break;
      }
      case Optimizer::kAdam: {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        auto m = m_[slot].data();
        auto v = v_[slot].data();
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = b1 * m[i] + (1.0 - b1) * g[i];
          v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
          p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
        break;
      }
    }
  }

  void tick() { ++t_; }

 private:
  Optimizer kind_;
  std::vector<Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace detail

/// Mini-batch gradient descent over an arbitrary parameter list.
///
/// Each epoch draws a permutation from derive_seed(seed, epoch) (identity
/// order when shuffle is off) and walks it in contiguous batches; the final
/// batch may be short. Parameters with trainable[i] == false enter the tape
/// as constants and are never written. A non-finite loss or gradient aborts
/// with the epoch and batch index in the message.
inline TrainResult fit_parameters(std::vector<Tensor>& params, const std::vector<bool>& trainable, const Tensor& x,
                                  const Tensor& y, const BatchObjective& objective, const TrainConfig& config,
                                  std::span<const EpochCallback> callbacks = {}) {
  if (trainable.size() != params.size()) throw ContractError("trainable mask length mismatch");
  if (x.rows() != y.rows()) throw DimensionError("inputs and targets have different row counts");
  const std::size_t n = x.rows();
  config.validate(n);

  detail::OptimizerState opt(config.optimizer, params);
  TrainResult result;
  std::vector<std::size_t> order(n);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (config.shuffle) {
      Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order);
    }
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const Tensor xb = select_rows(x, rows);
      const Tensor yb = select_rows(y, rows);
      const std::uint64_t batch_seed =
          derive_seed(derive_seed(config.seed, "batch"), (static_cast<std::uint64_t>(epoch) << 32) | batch_index);

      Tape tape;
      std::vector<Var> vars;
      vars.reserve(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        vars.push_back(trainable[i] ? tape.parameter(params[i]) : tape.constant(params[i]));
      }
      Var loss;
      try {
        loss = objective(tape, vars, xb, yb, batch_seed);
      } catch (const NumericalError& e) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index) + ": " + e.what());
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      epoch_loss += lv * static_cast<double>(end - start);
      tape.backward(loss);

      std::vector<Tensor> grads(params.size());
      double norm2 = 0.0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!trainable[i]) continue;
        grads[i] = tape.grad(vars[i]);
        for (double g : grads[i].values()) norm2 += g * g;
      }
      if (!std::isfinite(norm2)) {
        throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      if (config.clip_norm && std::sqrt(norm2) > *config.clip_norm) {
        const double s = *config.clip_norm / std::sqrt(norm2);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (trainable[i]) {
            for (double& g : grads[i].data()) g *= s;
          }
        }
      }
      opt.tick();
      if (config.learning_rate > 0.0) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (trainable[i]) opt.step(i, params[i], grads[i], config.learning_rate);
        }
      }
    }
    result.loss_trace.push_back(epoch_loss / static_cast<double>(n));
    for (const auto& cb : callbacks) cb(EpochSnapshot{epoch, result.loss_trace.back(), params});
  }
  return result;
}

// A loss over network outputs: (tape, output [n x k], targets [n x 1]) -> scalar.
struct LossFn {
  std::string name;
  std::function<Var(Tape&, Var output, const Tensor& targets)> fn;
};

/// Trains an MLP in place. Dropout is sampled during training whenever the
/// model has non-zero rates. Frozen layers keep their exact values.
inline TrainResult fit(MLPModel& model, const Tensor& x, const Tensor& y, const LossFn& loss,
                       const TrainConfig& config, std::span<const EpochCallback> callbacks = {}) {
  std::vector<Tensor> params = model.parameters();
  const MLPConfig arch = model.config();
  BatchObjective objective = [&arch, &loss](Tape& tape, std::span<const Var> vars, const Tensor& xb,
                                            const Tensor& yb, std::uint64_t seed) {
    ForwardVars fv = forward(tape, arch, vars, tape.constant(xb), DropoutMode::sampled(seed));
    return loss.fn(tape, fv.output, yb);
  };
  TrainResult r = fit_parameters(params, model.trainable_mask(), x, y, objective, config, callbacks);
  model.set_parameters(params);
  return r;
}

}  // namespace uqkit
