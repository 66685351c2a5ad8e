#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/tensor.hpp"

namespace uqkit {

/// Gaussian negative log-likelihood averaged over the batch:
/// 0.5 ln(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
inline Var gaussian_nll_loss(Var mean, Var std, const Tensor& target) {
  for (double s : std.value().values()) {
    if (!(s > 0.0)) throw ContractError("gaussian_nll_loss: std must be positive");
  }
  Tape& t = mean.tape();
  Var y = t.constant(target);
  Var resid2 = square(y - mean);
  Var per_point = 0.5 * std::log(2.0 * std::numbers::pi) + log(std) + resid2 / (2.0 * square(std));
  return uqkit::mean(per_point);
}

/// Pinball loss rho_tau(u) = u (tau - 1[u < 0]) with u = y - q, summed over
/// levels and averaged over the batch. `quantiles` is [n x L].
inline Var pinball_loss(Var quantiles, std::span<const double> levels, const Tensor& target) {
  const Tensor& q = quantiles.value();
  require_matrix(q, "pinball_loss");
  if (q.cols() != levels.size()) throw DimensionError("pinball_loss: one column per level expected");
  if (target.rows() != q.rows()) throw DimensionError("pinball_loss: target length mismatch");
  for (double tau : levels) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("pinball_loss: level outside (0, 1)");
  }
  const std::size_t n = q.rows(), L = levels.size();
  Tensor ybroad = Tensor::zeros({n, L});
  Tensor tau = Tensor::zeros({n, L});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < L; ++l) {
      ybroad.at(i, l) = target[i];
      tau.at(i, l) = levels[l];
    }
  }
  Tape& t = quantiles.tape();
  Var u = t.constant(std::move(ybroad)) - quantiles;
  Var tau_v = t.constant(tau);
  Var one_minus_tau = t.constant(map(tau, [](double v) { return 1.0 - v; }));
  // tau * max(u, 0) + (1 - tau) * max(-u, 0)
  Var per = tau_v * relu(u) + one_minus_tau * relu(-u);
  return sum(per) * (1.0 / static_cast<double>(n));
}

/// Deep evidential regression loss (NIG marginal likelihood plus evidence
/// regularizer), averaged over the batch. With Omega = 2 beta (1 + nu):
///   0.5 ln(pi / nu) - alpha ln Omega + (alpha + 0.5) ln((y - gamma)^2 nu + Omega)
///   + ln Gamma(alpha) - ln Gamma(alpha + 0.5) + lambda |y - gamma| (2 nu + alpha)
inline Var der_loss(Var gamma, Var nu, Var alpha, Var beta, const Tensor& target, double lambda) {
  if (lambda < 0.0) throw ContractError("der_loss: lambda must be non-negative");
  for (std::size_t i = 0; i < nu.value().size(); ++i) {
    if (!(nu.value()[i] > 0.0 && beta.value()[i] > 0.0 && alpha.value()[i] > 1.0)) {
      throw ContractError("der_loss: NIG parameters need nu > 0, alpha > 1, beta > 0");
    }
  }
  Tape& t = gamma.tape();
  Var y = t.constant(target);
  Var resid = y - gamma;
  Var omega = 2.0 * beta * (nu + 1.0);
  Var nll = 0.5 * (std::log(std::numbers::pi) - log(nu)) - alpha * log(omega) +
            (alpha + 0.5) * log(square(resid) * nu + omega) + lgamma(alpha) - lgamma(alpha + 0.5);
  if (lambda == 0.0) return mean(nll);
  Var reg = abs(resid) * (2.0 * nu + alpha);
  return mean(nll + lambda * reg);
}

/// KL(N(mu, sigma^2) || N(0, s^2)) = ln(s / sigma) + (sigma^2 + mu^2) / (2 s^2) - 1/2,
/// summed over all elements.
inline Var kl_gaussian(Var mu, Var sigma, double prior_std) {
  if (!(prior_std > 0.0)) throw ContractError("kl_gaussian: prior std must be positive");
  for (double s : sigma.value().values()) {
    if (!(s > 0.0)) throw ContractError("kl_gaussian: sigma must be positive");
  }
  const double s2 = prior_std * prior_std;
  Var per = (std::log(prior_std) - 0.5) - log(sigma) + (square(sigma) + square(mu)) * (1.0 / (2.0 * s2));
  return sum(per);
}

/// Mean categorical cross-entropy from logits [n x C] and integer labels
/// stored as doubles in a [n x 1] tensor. Uses the log-sum-exp form.
inline Var cross_entropy_loss(Var logits, const Tensor& labels) {
  const Tensor& z = logits.value();
  require_matrix(z, "cross_entropy_loss");
  const std::size_t n = z.rows(), C = z.cols();
  if (labels.rows() != n) throw DimensionError("cross_entropy_loss: label count mismatch");
  Tensor onehot = Tensor::zeros({n, C});
  for (std::size_t i = 0; i < n; ++i) {
    const double lab = labels[i];
    if (!(lab >= 0.0 && lab < static_cast<double>(C)) || lab != std::floor(lab)) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(lab) + " outside [0, " +
                          std::to_string(C) + ")");
    }
    onehot.at(i, static_cast<std::size_t>(lab)) = 1.0;
  }
  Var logp = log_softmax_rows(logits);
  return sum(logp * logits.tape().constant(std::move(onehot))) * (-1.0 / static_cast<double>(n));
}

}  // namespace uqkit
