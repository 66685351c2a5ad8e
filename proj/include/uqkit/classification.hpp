#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/losses.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/parallel.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/rng.hpp"
#include "uqkit/train.hpp"
#include "uqkit/vi.hpp"

namespace uqkit {

// Row-major [n x C] class probabilities.
struct CategoricalPrediction {
  std::size_t classes = 0;
  std::vector<double> probs;

  std::size_t size() const { return classes ? probs.size() / classes : 0; }
  std::span<const double> row(std::size_t i) const { return {probs.data() + i * classes, classes}; }
  double at(std::size_t i, std::size_t c) const { return probs[i * classes + c]; }

  std::size_t argmax(std::size_t i) const {
    auto r = row(i);
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }

  void validate() const {
    if (classes == 0 || probs.size() % classes != 0) throw DimensionError("categorical prediction shape mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      double s = 0.0;
      for (double p : row(i)) {
        if (!(p >= 0.0)) throw ContractError("categorical prediction has a negative probability");
        s += p;
      }
      if (std::fabs(s - 1.0) > 1e-9) throw ContractError("categorical prediction row does not sum to 1");
    }
  }
};

struct CategoricalEnsemble {
  std::vector<CategoricalPrediction> members;

  std::size_t size() const { return members.empty() ? 0 : members.front().size(); }
  std::size_t classes() const { return members.empty() ? 0 : members.front().classes; }

  // Uniform average of member probabilities.
  CategoricalPrediction mean() const {
    if (members.empty()) throw ContractError("empty categorical ensemble");
    CategoricalPrediction out{classes(), std::vector<double>(members.front().probs.size(), 0.0)};
    for (const auto& m : members) {
      if (m.probs.size() != out.probs.size()) throw DimensionError("ensemble members disagree in shape");
      for (std::size_t k = 0; k < out.probs.size(); ++k) out.probs[k] += m.probs[k];
    }
    for (double& p : out.probs) p /= static_cast<double>(members.size());
    return out;
  }
};

/// Row-wise softmax of logits / temperature with max subtraction.
inline CategoricalPrediction softmax_rows(const Tensor& logits, double temperature = 1.0) {
  require_matrix(logits, "softmax_rows");
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  const std::size_t n = logits.rows(), C = logits.cols();
  CategoricalPrediction p{C, std::vector<double>(n * C)};
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, logits.at(i, c) / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = std::exp(logits.at(i, c) / temperature - m);
      p.probs[i * C + c] = e;
      s += e;
    }
    for (std::size_t c = 0; c < C; ++c) p.probs[i * C + c] /= s;
  }
  return p;
}

inline CategoricalPrediction softmax_predict(const MLPModel& model, const Tensor& x) {
  return softmax_rows(model.predict(x));
}

/// Per-sample Shannon entropy in nats, with 0 ln 0 = 0.
inline std::vector<double> entropy(const CategoricalPrediction& pred) {
  std::vector<double> h(pred.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    double s = 0.0;
    for (double p : pred.row(i)) {
      if (p > 0.0) s -= p * std::log(p);
    }
    h[i] = std::max(0.0, s);
  }
  return h;
}

struct EntropyDecomposition {
  std::vector<double> total;      // H(mean member)
  std::vector<double> aleatoric;  // mean member entropy
  std::vector<double> epistemic;  // total - aleatoric (mutual information)
};

inline EntropyDecomposition ensemble_decompose(const CategoricalEnsemble& ens) {
  if (ens.members.size() < 2) throw ContractError("entropy decomposition needs at least 2 members");
  EntropyDecomposition d;
  d.total = entropy(ens.mean());
  d.aleatoric.assign(ens.size(), 0.0);
  for (const auto& m : ens.members) {
    const std::vector<double> h = entropy(m);
    for (std::size_t i = 0; i < h.size(); ++i) d.aleatoric[i] += h[i];
  }
  d.epistemic.resize(ens.size());
  for (std::size_t i = 0; i < d.total.size(); ++i) {
    d.aleatoric[i] /= static_cast<double>(ens.members.size());
    d.epistemic[i] = d.total[i] - d.aleatoric[i];
  }
  return d;
}

// Mean negative log-likelihood of integer labels under softmax(logits / T).
inline double categorical_nll(const Tensor& logits, std::span<const int> labels, double temperature = 1.0) {
  require_matrix(logits, "categorical_nll");
  const std::size_t n = logits.rows(), C = logits.cols();
  if (labels.size() != n) throw DimensionError("categorical_nll: label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) m = std::max(m, logits.at(i, c) / temperature);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(logits.at(i, c) / temperature - m);
    total += m + std::log(s) - logits.at(i, static_cast<std::size_t>(labels[i])) / temperature;
  }
  return total / static_cast<double>(n);
}

inline double categorical_nll(const CategoricalPrediction& pred, std::span<const int> labels) {
  if (labels.size() != pred.size()) throw DimensionError("categorical_nll: label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total -= std::log(std::max(pred.at(i, static_cast<std::size_t>(labels[i])), 1e-300));
  }
  return total / static_cast<double>(labels.size());
}

inline void check_labels(std::span<const int> labels, std::size_t classes) {
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// ---- temperature scaling -----------------------------------------------------

struct Temperature {
  double t = 1.0;
};

/// Minimizes validation NLL of softmax(logits / T) by golden-section search
/// on ln T in [ln 0.05, ln 20] down to a bracket width of 1e-4. When T = 1 is
/// at least as good as the optimum found (within 1e-12 relative), T = 1 wins.
inline Temperature fit_temperature(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "fit_temperature");
  if (labels.empty() || labels.size() != logits.rows()) throw ContractError("fit_temperature: bad validation set");
  check_labels(labels, logits.cols());
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
    throw ContractError("fit_temperature: validation labels contain a single class");
  }
  auto nll = [&](double log_t) { return categorical_nll(logits, labels, std::exp(log_t)); };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(0.05), b = std::log(20.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = nll(c), fd = nll(d);
  while (b - a > 1e-4) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = nll(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = nll(d);
    }
  }
  const double best = 0.5 * (a + b);
  const double f_best = nll(best), f_one = nll(0.0);
  if (f_one <= f_best + 1e-12 * std::max(1.0, std::fabs(f_best))) return {1.0};
  return {std::exp(best)};
}

// ---- test-time augmentation --------------------------------------------------

/// Tabular input perturbation. Jitter adds N(0, std^2) noise to every
/// feature; sign flip negates the listed feature columns.
struct Augmentation {
  enum class Kind { kIdentity, kJitter, kSignFlip };
  Kind kind = Kind::kIdentity;
  double jitter_std = 0.0;
  std::vector<std::size_t> flip_features;

  static Augmentation identity() { return {}; }
  static Augmentation jitter(double std) { return {Kind::kJitter, std, {}}; }
  static Augmentation sign_flip(std::vector<std::size_t> features) { return {Kind::kSignFlip, 0.0, std::move(features)}; }

  Tensor apply(const Tensor& x, std::uint64_t seed) const {
    Tensor out = x;
    switch (kind) {
      case Kind::kIdentity:
        break;
      case Kind::kJitter: {
        if (jitter_std < 0.0) throw ContractError("jitter std must be non-negative");
        if (jitter_std == 0.0) break;
        Rng rng(seed);
        for (double& v : out.data()) v += jitter_std * rng.normal();
        break;
      }
      case Kind::kSignFlip:
        for (std::size_t f : flip_features) {
          if (f >= x.cols()) throw DimensionError("sign flip feature out of range");
          for (std::size_t i = 0; i < x.rows(); ++i) out.at(i, f) = -out.at(i, f);
        }
        break;
    }
    return out;
  }
};

/// One softmax member per augmentation; member k uses seed derive_seed(seed, k).
inline CategoricalEnsemble predict_tta(const MLPModel& model, const Tensor& x, std::span<const Augmentation> augs,
                                       std::uint64_t seed) {
  if (augs.empty()) throw ContractError("TTA needs a non-empty augmentation list");
  if (augs.size() < 2) throw ContractError("TTA needs at least 2 augmentations");
  CategoricalEnsemble ens;
  for (std::size_t k = 0; k < augs.size(); ++k) {
    ens.members.push_back(softmax_predict(model, augs[k].apply(x, derive_seed(seed, k))));
  }
  return ens;
}

// ---- classifiers ---------------------------------------------------------------

inline LossFn cross_entropy_fn() {
  return {"cross-entropy", [](Tape&, Var out, const Tensor& y) { return cross_entropy_loss(out, y); }};
}

inline Tensor label_tensor(std::span<const int> labels) {
  std::vector<double> v(labels.begin(), labels.end());
  return Tensor::column(std::move(v));
}

class SoftmaxClassifier {
 public:
  static SoftmaxClassifier fit(const Tensor& x, std::span<const int> labels, const MLPConfig& config,
                               const TrainConfig& train) {
    check_labels(labels, config.output_dim);
    SoftmaxClassifier c;
    c.model_ = MLPModel::build(config);
    c.trace_ = uqkit::fit(c.model_, x, label_tensor(labels), cross_entropy_fn(), train).loss_trace;
    return c;
  }

  static SoftmaxClassifier from_model(MLPModel model) {
    SoftmaxClassifier c;
    c.model_ = std::move(model);
    return c;
  }

  Tensor logits(const Tensor& x) const { return model_.predict(x); }
  CategoricalPrediction predict(const Tensor& x, Temperature t = {}) const { return softmax_rows(logits(x), t.t); }
  const MLPModel& model() const { return model_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  MLPModel model_;
  std::vector<double> trace_;
};

class ClassifierEnsemble {
 public:
  static ClassifierEnsemble fit(const Tensor& x, std::span<const int> labels, const MLPConfig& config,
                                const TrainConfig& train, std::size_t members, std::uint64_t base_seed,
                                std::size_t threads = 1) {
    if (members < 2) throw ContractError("classifier ensemble needs at least 2 members");
    std::vector<MemberSeeds> seeds;
    for (std::size_t m = 0; m < members; ++m) seeds.push_back(ensemble_member_seeds(base_seed, m));
    return fit_with_seeds(x, labels, config, train, seeds, threads);
  }

  static ClassifierEnsemble fit_with_seeds(const Tensor& x, std::span<const int> labels, const MLPConfig& config,
                                           const TrainConfig& train, std::span<const MemberSeeds> seeds,
                                           std::size_t threads = 1) {
    if (seeds.size() < 2) throw ContractError("classifier ensemble needs at least 2 members");
    ClassifierEnsemble e;
    e.members_.resize(seeds.size());
    parallel_for(seeds.size(), threads, [&](std::size_t m) {
      MLPConfig c = config;
      c.init_seed = seeds[m].init;
      TrainConfig t = train;
      t.seed = seeds[m].train;
      e.members_[m] = SoftmaxClassifier::fit(x, labels, c, t);
    });
    return e;
  }

  CategoricalEnsemble predict(const Tensor& x) const {
    CategoricalEnsemble ens;
    for (const auto& m : members_) ens.members.push_back(m.predict(x));
    return ens;
  }

  const std::vector<SoftmaxClassifier>& members() const { return members_; }

 private:
  std::vector<SoftmaxClassifier> members_;
};

inline CategoricalEnsemble predict_mc_dropout_classifier(const MLPModel& model, const Tensor& x, std::size_t passes,
                                                         std::uint64_t seed) {
  if (passes < 2) throw ContractError("MC dropout needs at least 2 passes");
  const auto& rates = model.config().dropout_rates;
  if (std::all_of(rates.begin(), rates.end(), [](double r) { return r == 0.0; })) {
    std::clog << "uqkit: warning: MC dropout on a model without dropout; members will be identical\n";
  }
  CategoricalEnsemble ens;
  for (std::size_t t = 0; t < passes; ++t) {
    ens.members.push_back(softmax_rows(model.predict(x, DropoutMode::sampled(derive_seed(seed, t)))));
  }
  return ens;
}

class BnnViClassifier {
 public:
  static BnnViClassifier fit(const Tensor& x, std::span<const int> labels, const MLPConfig& arch,
                             const TrainConfig& train, const ViConfig& config) {
    check_labels(labels, arch.output_dim);
    BnnViClassifier c{VariationalMLP::build(arch, config)};
    c.trace_ = c.net_.fit(x, label_tensor(labels), cross_entropy_fn(), train).loss_trace;
    return c;
  }

  CategoricalEnsemble predict(const Tensor& x, std::size_t samples, std::uint64_t seed) const {
    if (samples < 2) throw ContractError("VI prediction needs at least 2 samples");
    CategoricalEnsemble ens;
    for (std::size_t t = 0; t < samples; ++t) ens.members.push_back(softmax_rows(net_.sample_output(x, derive_seed(seed, t))));
    return ens;
  }

  const VariationalMLP& network() const { return net_; }
  const std::vector<double>& loss_trace() const { return trace_; }

 private:
  explicit BnnViClassifier(VariationalMLP net) : net_(std::move(net)) {}
  VariationalMLP net_;
  std::vector<double> trace_;
};

}  // namespace uqkit
