#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "uqkit/error.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/predictions.hpp"
#include "uqkit/regression.hpp"

namespace uqkit {

enum class LaplaceNoise {
  kFixed,    // one noise variance for every point
  kMveHead,  // per-point sigma^2 from an MVE head
};

struct LaplaceConfig {
  double prior_precision = 1.0;
  LaplaceNoise noise = LaplaceNoise::kFixed;
  // Fixed mode only. When absent, the mean squared training residual is used.
  std::optional<double> noise_var;
};

/// Gaussian posterior over the last-layer mean weights [w; b] with the
/// feature map phi~(x) = [phi(x); 1].
struct LaplacePosterior {
  std::vector<double> map_weights;
  Eigen::MatrixXd covariance;
  double noise_var = 1.0;
  double prior_precision = 1.0;
  LaplaceNoise noise = LaplaceNoise::kFixed;

  std::size_t dim() const { return map_weights.size(); }
};

// phi~^T Sigma phi~
inline double posterior_quadratic(const LaplacePosterior& post, std::span<const double> phi_tilde) {
  if (phi_tilde.size() != post.dim()) throw DimensionError("feature vector does not match Laplace posterior");
  Eigen::Map<const Eigen::VectorXd> phi(phi_tilde.data(), static_cast<Eigen::Index>(phi_tilde.size()));
  return phi.dot(post.covariance * phi);
}

inline double predictive_variance(const LaplacePosterior& post, std::span<const double> phi_tilde,
                                  double noise_var) {
  return noise_var + posterior_quadratic(post, phi_tilde);
}

// Inverts a symmetric positive-definite precision via Cholesky.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& precision) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("Laplace precision is not positive definite");
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
  return 0.5 * (cov + cov.transpose());
}

/// Gauss-Newton last-layer Laplace for a Gaussian likelihood:
///   precision = sum_i w_i phi~_i phi~_i^T + prior_precision * I,
/// with w_i = 1 / noise_var (fixed) or 1 / sigma_i^2 (MVE head).
/// The model's output column 0 is the mean; column 1, when present, is the
/// MVE pre-softplus std.
inline LaplacePosterior fit_laplace_last_layer(const MLPModel& model, const Tensor& x, const Tensor& y,
                                               const LaplaceConfig& config) {
  if (!(config.prior_precision > 0.0)) throw ConfigError("Laplace prior precision must be positive");
  const std::size_t out_dim = model.config().output_dim;
  if (out_dim != 1 && out_dim != 2) throw ConfigError("Laplace needs a deterministic (1) or MVE (2) head");
  if (config.noise == LaplaceNoise::kMveHead && out_dim != 2) {
    throw ConfigError("Laplace mve-head noise mode needs an MVE model");
  }
  const ForwardResult fr = model.forward(x);
  const std::size_t n = x.rows(), f = fr.features.cols(), d = f + 1;

  LaplacePosterior post;
  post.prior_precision = config.prior_precision;
  post.noise = config.noise;
  if (config.noise == LaplaceNoise::kFixed) {
    if (config.noise_var) {
      if (!(*config.noise_var > 0.0)) throw ConfigError("Laplace noise variance must be positive");
      post.noise_var = *config.noise_var;
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - fr.output.at(i, 0);
        s += r * r;
      }
      post.noise_var = std::max(s / static_cast<double>(n), kScaleFloor * kScaleFloor);
    }
  }

  Eigen::MatrixXd precision = config.prior_precision * Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd phi(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) phi[j] = fr.features.at(i, j);
    phi[f] = 1.0;
    double w;
    if (config.noise == LaplaceNoise::kFixed) {
      w = 1.0 / post.noise_var;
    } else {
      const double s = special::softplus(fr.output.at(i, 1)) + kScaleFloor;
      w = 1.0 / (s * s);
    }
    precision.selfadjointView<Eigen::Lower>().rankUpdate(phi, w);
  }
  precision = precision.selfadjointView<Eigen::Lower>();
  post.covariance = spd_inverse(precision);

  const DenseLayer& last = model.layers().back();
  for (std::size_t j = 0; j < f; ++j) post.map_weights.push_back(last.weight.at(j, 0));
  post.map_weights.push_back(last.bias.at(0, 0));
  return post;
}

class LaplaceRegressor {
 public:
  LaplaceRegressor(MLPModel model, LaplacePosterior posterior)
      : model_(std::move(model)), posterior_(std::move(posterior)) {}

  static LaplaceRegressor fit(const MLPModel& model, const Tensor& x, const Tensor& y, const LaplaceConfig& config) {
    return LaplaceRegressor(model, fit_laplace_last_layer(model, x, y, config));
  }

  /// Mean is the MAP network mean; variance is noise + phi~^T Sigma phi~.
  GaussianPrediction predict(const Tensor& x) const {
    const ForwardResult fr = model_.forward(x);
    const std::size_t n = x.rows(), f = fr.features.cols();
    GaussianPrediction g{std::vector<double>(n), std::vector<double>(n)};
    std::vector<double> phi(f + 1, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < f; ++j) phi[j] = fr.features.at(i, j);
      double noise = posterior_.noise_var;
      if (posterior_.noise == LaplaceNoise::kMveHead) {
        const double s = special::softplus(fr.output.at(i, 1)) + kScaleFloor;
        noise = s * s;
      }
      g.mean[i] = fr.output.at(i, 0);
      g.std[i] = std::sqrt(predictive_variance(posterior_, phi, noise));
    }
    return g;
  }

  const MLPModel& model() const { return model_; }
  const LaplacePosterior& posterior() const { return posterior_; }

 private:
  MLPModel model_;
  LaplacePosterior posterior_;
};

}  // namespace uqkit
