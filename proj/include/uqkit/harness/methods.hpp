#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uqkit/classification.hpp"
#include "uqkit/conformal.hpp"
#include "uqkit/datasets.hpp"
#include "uqkit/harness/config.hpp"
#include "uqkit/laplace.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/special.hpp"
#include "uqkit/swag.hpp"
#include "uqkit/vi.hpp"

namespace uqkit::harness {

/// Predictions of one method on one split. Regression fills `mean` and,
/// when the method is probabilistic, `gaussian`; classification fills
/// `probs`. `uncertainty` is the scalar used for selective prediction
/// (predictive std or entropy) and is empty for the deterministic baseline.
struct SplitOutput {
  std::vector<double> mean;
  std::optional<GaussianPrediction> gaussian;
  std::optional<IntervalPrediction> interval;
  std::optional<UncertaintySplit> decomposition;  // variances
  std::optional<CategoricalPrediction> probs;
  std::optional<EntropyDecomposition> entropy_split;
  std::optional<PredictionSet> sets;
  std::vector<double> uncertainty;
};

struct MethodOutput {
  SplitOutput val;
  SplitOutput test;
  std::vector<std::pair<std::string, nlohmann::json>> checkpoints;  // file stem -> document
  nlohmann::json extras = nlohmann::json::object();                 // fitted scalars (qhat, T, ...)
};

inline MLPConfig build_arch(const ExperimentConfig& c, std::size_t input_dim, std::size_t output_dim,
                            std::uint64_t init_seed) {
  MLPConfig m;
  m.input_dim = input_dim;
  m.hidden_sizes = c.model.hidden;
  m.output_dim = output_dim;
  m.activation = c.model.activation;
  m.dropout_rates = c.model.dropout;
  m.init_seed = init_seed;
  m.validate();
  return m;
}

// Central (1 - alpha) interval of a Gaussian predictor.
inline IntervalPrediction gaussian_interval(const GaussianPrediction& g, double alpha) {
  const double z = special::normal_quantile(1.0 - alpha / 2.0);
  IntervalPrediction iv;
  for (std::size_t i = 0; i < g.size(); ++i) {
    iv.lo.push_back(g.mean[i] - z * g.std[i]);
    iv.hi.push_back(g.mean[i] + z * g.std[i]);
  }
  return iv;
}

/// Gaussian stand-in for a quantile predictor so NLL and MACE can be
/// reported: mean = median column when present (else interval midpoint),
/// sigma = (q_hi - q_lo) / (z_hi - z_lo) from the outermost levels.
inline GaussianPrediction gaussian_from_quantiles(const QuantilePrediction& q) {
  const std::size_t L = q.levels.size();
  const double span_z = special::normal_quantile(q.levels[L - 1]) - special::normal_quantile(q.levels[0]);
  std::optional<std::size_t> median;
  for (std::size_t l = 0; l < L; ++l) {
    if (std::fabs(q.levels[l] - 0.5) < 1e-12) median = l;
  }
  GaussianPrediction g;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double lo = q.at(i, 0), hi = q.at(i, L - 1);
    g.mean.push_back(median ? q.at(i, *median) : 0.5 * (lo + hi));
    g.std.push_back(std::max((hi - lo) / span_z, kScaleFloor));
  }
  return g;
}

inline SplitOutput gaussian_output(GaussianPrediction g, double alpha) {
  SplitOutput s;
  s.mean = g.mean;
  s.uncertainty = g.std;
  s.interval = gaussian_interval(g, alpha);
  s.gaussian = std::move(g);
  return s;
}

inline SplitOutput mixture_output(const MixturePrediction& mix, double alpha) {
  SplitOutput s = gaussian_output(mixture_moments(mix), alpha);
  if (mix.members() >= 2) s.decomposition = variance_decomposition(mix);
  return s;
}

inline SplitOutput categorical_output(CategoricalPrediction p) {
  SplitOutput s;
  s.uncertainty = entropy(p);
  for (std::size_t i = 0; i < p.size(); ++i) s.mean.push_back(static_cast<double>(p.argmax(i)));
  s.probs = std::move(p);
  return s;
}

inline SplitOutput ensemble_output(const CategoricalEnsemble& ens) {
  SplitOutput s = categorical_output(ens.mean());
  if (ens.members.size() >= 2) s.entropy_split = ensemble_decompose(ens);
  return s;
}

inline ViConfig vi_config(const ExperimentConfig& c, std::size_t layers) {
  ViConfig v;
  v.prior_std = method_param(c, "prior_std", v.prior_std);
  v.kl_weight = method_param(c, "kl_weight", v.kl_weight);
  v.mc_train_samples = method_param(c, "mc_train_samples", v.mc_train_samples);
  v.rho_init = method_param(c, "rho_init", v.rho_init);
  v.stochastic = method_param(c, "stochastic", v.stochastic);
  v.validate(layers);
  return v;
}

// ---- regression ------------------------------------------------------------------

inline MethodOutput run_regression_method(const ExperimentConfig& c, const DataSplits& data, std::size_t threads) {
  const std::uint64_t seed = c.method_seed();
  const std::uint64_t init_seed = derive_seed(seed, "init");
  TrainConfig train = c.train;
  train.seed = derive_seed(seed, "train");
  const Tensor x = data.train.x_tensor(), y = data.train.y_tensor();
  const Tensor xv = data.val.x_tensor(), xt = data.test.x_tensor();
  const std::size_t d = data.train.d;
  const double alpha = c.eval.alpha;
  MethodOutput out;

  const std::string& m = c.method;
  if (m == "deterministic") {
    const auto r = DeterministicRegressor::fit(x, y, build_arch(c, d, 1, init_seed), train);
    out.val.mean = r.predict(xv);
    out.test.mean = r.predict(xt);
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "mve" || m == "mve_conformal") {
    const auto r = MveRegressor::fit(x, y, build_arch(c, d, 2, init_seed), train);
    out.val = gaussian_output(r.predict(xv), alpha);
    out.test = gaussian_output(r.predict(xt), alpha);
    if (m == "mve_conformal") {
      const bool normalized = method_param(c, "normalized", true);
      const auto rc = residual_conformal(r.predict(data.calib.x_tensor()), data.calib.y, alpha, normalized);
      out.val.interval = rc.apply(*out.val.gaussian);
      out.test.interval = rc.apply(*out.test.gaussian);
      out.extras["qhat"] = rc.calibration.infinite() ? nlohmann::json("inf") : nlohmann::json(rc.calibration.qhat);
      out.extras["normalized"] = normalized;
    }
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "der") {
    const auto r = DerRegressor::fit(x, y, build_arch(c, d, 4, init_seed), train, method_param(c, "lambda", 0.01));
    for (auto* split : {&out.val, &out.test}) {
      const NigMoments mo = nig_moments(r.predict(split == &out.val ? xv : xt));
      *split = gaussian_output(mo.gaussian(), alpha);
      split->decomposition = UncertaintySplit{mo.aleatoric, mo.epistemic};
    }
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "qr" || m == "cqr") {
    std::vector<double> levels = {alpha / 2.0, 0.5, 1.0 - alpha / 2.0};
    if (m == "qr") levels = method_param(c, "levels", levels);
    const auto r = QuantileRegressor::fit(x, y, build_arch(c, d, levels.size(), init_seed), train, levels);
    std::optional<ConformalCalibration> calib;
    if (m == "cqr") {
      QuantilePrediction qc = r.predict(data.calib.x_tensor());
      QuantilePrediction outer{{levels.front(), levels.back()}, {}};
      for (std::size_t i = 0; i < qc.size(); ++i) {
        outer.values.push_back(qc.at(i, 0));
        outer.values.push_back(qc.at(i, 2));
      }
      calib = cqr_calibrate(outer, data.calib.y, alpha);
      out.extras["qhat"] = calib->infinite() ? nlohmann::json("inf") : nlohmann::json(calib->qhat);
    }
    for (auto* split : {&out.val, &out.test}) {
      const QuantilePrediction q = r.predict(split == &out.val ? xv : xt);
      *split = gaussian_output(gaussian_from_quantiles(q), alpha);
      const std::size_t L = q.levels.size();
      IntervalPrediction iv{q.column(0), q.column(L - 1)};
      if (calib) {
        QuantilePrediction outer{{levels.front(), levels.back()}, {}};
        for (std::size_t i = 0; i < q.size(); ++i) {
          outer.values.push_back(q.at(i, 0));
          outer.values.push_back(q.at(i, L - 1));
        }
        iv = cqr_predict(outer, *calib);
      }
      split->interval = std::move(iv);
    }
    out.extras["levels"] = levels;
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "ensemble") {
    const int members = method_param(c, "members", 5);
    const auto e = DeepEnsemble::fit(x, y, build_arch(c, d, 2, init_seed), train, static_cast<std::size_t>(members),
                                     seed, threads);
    out.val = mixture_output(e.predict(xv), alpha);
    out.test = mixture_output(e.predict(xt), alpha);
    for (std::size_t k = 0; k < e.members().size(); ++k) {
      out.checkpoints.emplace_back("member-" + std::to_string(k), save_checkpoint(e.members()[k].model()));
    }
  } else if (m == "mc_dropout") {
    MLPConfig arch = build_arch(c, d, 2, init_seed);
    if (arch.dropout_rates.empty()) arch.dropout_rates.assign(arch.hidden_sizes.size(), method_param(c, "rate", 0.1));
    const auto passes = static_cast<std::size_t>(method_param(c, "passes", 50));
    const auto r = MveRegressor::fit(x, y, arch, train);
    const std::uint64_t pred_seed = derive_seed(seed, "mc-dropout");
    out.val = mixture_output(predict_mc_dropout(r.model(), xv, passes, derive_seed(pred_seed, "val")), alpha);
    out.test = mixture_output(predict_mc_dropout(r.model(), xt, passes, derive_seed(pred_seed, "test")), alpha);
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "swag") {
    const auto r = MveRegressor::fit(x, y, build_arch(c, d, 2, init_seed), train);
    const int snapshot_epochs = method_param(c, "snapshot_epochs", 20);
    const auto max_rank = static_cast<std::size_t>(method_param(c, "max_rank", 10));
    const auto samples = static_cast<std::size_t>(method_param(c, "samples", 30));
    const double swag_lr = method_param(c, "swag_lr", c.train.learning_rate);
    const double scale = method_param(c, "scale", 1.0);
    TrainConfig swag_train = train;
    swag_train.seed = derive_seed(seed, "swag-train");
    const SwagStats stats = swag_collect(r.model(), x, y, mve_loss(), snapshot_epochs, max_rank, swag_lr, swag_train);
    const std::uint64_t pred_seed = derive_seed(seed, "swag-predict");
    out.val = mixture_output(swag_sample_predict(stats, r.model(), xv, samples, derive_seed(pred_seed, "val"), scale),
                             alpha);
    out.test = mixture_output(
        swag_sample_predict(stats, r.model(), xt, samples, derive_seed(pred_seed, "test"), scale), alpha);
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(with_trainable(r.model(), stats.mean())));
  } else if (m == "laplace") {
    LaplaceConfig lc;
    lc.prior_precision = method_param(c, "prior_precision", 1.0);
    const std::string noise = method_param<std::string>(c, "noise", "mve-head");
    if (noise == "fixed") {
      lc.noise = LaplaceNoise::kFixed;
      if (c.method_params.contains("noise_var")) lc.noise_var = method_param(c, "noise_var", 1.0);
    } else if (noise == "mve-head") {
      lc.noise = LaplaceNoise::kMveHead;
    } else {
      throw ConfigError("laplace noise must be 'fixed' or 'mve-head'");
    }
    const auto r = MveRegressor::fit(x, y, build_arch(c, d, 2, init_seed), train);
    const auto lap = LaplaceRegressor::fit(r.model(), x, y, lc);
    for (auto* split : {&out.val, &out.test}) {
      const Tensor& xs = split == &out.val ? xv : xt;
      GaussianPrediction g = lap.predict(xs);
      // Split the predictive variance back into noise and weight parts.
      const ForwardResult fr = r.model().forward(xs);
      UncertaintySplit u;
      std::vector<double> phi(fr.features.cols() + 1, 1.0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = 0; j < fr.features.cols(); ++j) phi[j] = fr.features.at(i, j);
        const double epi = posterior_quadratic(lap.posterior(), phi);
        u.epistemic.push_back(epi);
        u.aleatoric.push_back(std::max(0.0, g.std[i] * g.std[i] - epi));
      }
      *split = gaussian_output(std::move(g), alpha);
      split->decomposition = std::move(u);
    }
    out.extras["noise_var"] = lap.posterior().noise_var;
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "bnn_vi_elbo") {
    const MLPConfig arch = build_arch(c, d, 2, init_seed);
    const auto samples = static_cast<std::size_t>(method_param(c, "samples", 30));
    const auto r = BnnViRegressor::fit(x, y, arch, train, vi_config(c, arch.layer_count()));
    const std::uint64_t pred_seed = derive_seed(seed, "vi-predict");
    out.val = mixture_output(r.predict(xv, samples, derive_seed(pred_seed, "val")), alpha);
    out.test = mixture_output(r.predict(xt, samples, derive_seed(pred_seed, "test")), alpha);
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.network().mean_model()));
  } else {
    throw ConfigError("unknown regression method '" + m + "'");
  }
  return out;
}

// ---- classification --------------------------------------------------------------

inline MethodOutput run_classification_method(const ExperimentConfig& c, const DataSplits& data,
                                              std::size_t classes, std::size_t threads) {
  const std::uint64_t seed = c.method_seed();
  const std::uint64_t init_seed = derive_seed(seed, "init");
  TrainConfig train = c.train;
  train.seed = derive_seed(seed, "train");
  const Tensor x = data.train.x_tensor();
  const Tensor xv = data.val.x_tensor(), xt = data.test.x_tensor();
  const std::size_t d = data.train.d;
  const std::span<const int> labels = data.train.labels;
  MethodOutput out;

  const std::string& m = c.method;
  if (m == "softmax" || m == "temperature_scaling" || m == "raps" || m == "tta") {
    const auto r = SoftmaxClassifier::fit(x, labels, build_arch(c, d, classes, init_seed), train);
    Temperature temp;
    if (m == "temperature_scaling") {
      temp = fit_temperature(r.logits(xv), data.val.labels);
      out.extras["temperature"] = temp.t;
    }
    if (m == "tta") {
      const double jitter = method_param(c, "jitter", 0.05);
      const int copies = method_param(c, "copies", 8);
      if (copies < 1) throw ConfigError("tta needs at least one jittered copy");
      std::vector<Augmentation> augs{Augmentation::identity()};
      for (int k = 0; k < copies; ++k) augs.push_back(Augmentation::jitter(jitter));
      const std::uint64_t pred_seed = derive_seed(seed, "tta");
      out.val = ensemble_output(predict_tta(r.model(), xv, augs, derive_seed(pred_seed, "val")));
      out.test = ensemble_output(predict_tta(r.model(), xt, augs, derive_seed(pred_seed, "test")));
    } else {
      out.val = categorical_output(r.predict(xv, temp));
      out.test = categorical_output(r.predict(xt, temp));
    }
    if (m == "raps") {
      RapsConfig rc;
      rc.k_reg = static_cast<std::size_t>(method_param(c, "k_reg", 1));
      rc.lambda = method_param(c, "lambda", 0.01);
      rc.randomized = method_param(c, "randomized", false);
      rc.seed = derive_seed(seed, "raps");
      const auto calib = raps_calibrate(r.predict(data.calib.x_tensor()), data.calib.labels, c.eval.alpha, rc);
      out.val.sets = raps_predict(*out.val.probs, calib);
      out.test.sets = raps_predict(*out.test.probs, calib);
      out.extras["qhat"] =
          calib.calibration.infinite() ? nlohmann::json("inf") : nlohmann::json(calib.calibration.qhat);
    }
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "ensemble") {
    const int members = method_param(c, "members", 5);
    const auto e = ClassifierEnsemble::fit(x, labels, build_arch(c, d, classes, init_seed), train,
                                           static_cast<std::size_t>(members), seed, threads);
    out.val = ensemble_output(e.predict(xv));
    out.test = ensemble_output(e.predict(xt));
    for (std::size_t k = 0; k < e.members().size(); ++k) {
      out.checkpoints.emplace_back("member-" + std::to_string(k), save_checkpoint(e.members()[k].model()));
    }
  } else if (m == "mc_dropout") {
    MLPConfig arch = build_arch(c, d, classes, init_seed);
    if (arch.dropout_rates.empty()) arch.dropout_rates.assign(arch.hidden_sizes.size(), method_param(c, "rate", 0.1));
    const auto passes = static_cast<std::size_t>(method_param(c, "passes", 50));
    const auto r = SoftmaxClassifier::fit(x, labels, arch, train);
    const std::uint64_t pred_seed = derive_seed(seed, "mc-dropout");
    out.val = ensemble_output(predict_mc_dropout_classifier(r.model(), xv, passes, derive_seed(pred_seed, "val")));
    out.test = ensemble_output(predict_mc_dropout_classifier(r.model(), xt, passes, derive_seed(pred_seed, "test")));
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.model()));
  } else if (m == "bnn_vi_elbo") {
    const MLPConfig arch = build_arch(c, d, classes, init_seed);
    const auto samples = static_cast<std::size_t>(method_param(c, "samples", 30));
    const auto r = BnnViClassifier::fit(x, labels, arch, train, vi_config(c, arch.layer_count()));
    const std::uint64_t pred_seed = derive_seed(seed, "vi-predict");
    out.val = ensemble_output(r.predict(xv, samples, derive_seed(pred_seed, "val")));
    out.test = ensemble_output(r.predict(xt, samples, derive_seed(pred_seed, "test")));
    out.checkpoints.emplace_back("checkpoint", save_checkpoint(r.network().mean_model()));
  } else {
    throw ConfigError("unknown classification method '" + m + "'");
  }
  return out;
}

}  // namespace uqkit::harness
