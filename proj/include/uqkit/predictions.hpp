#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uqkit/error.hpp"

namespace uqkit {

// Per-sample Gaussian p(y | x) = N(mean, std^2).
struct GaussianPrediction {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t size() const { return mean.size(); }
  void validate() const {
    if (mean.size() != std.size()) throw DimensionError("gaussian prediction: mean/std length mismatch");
    for (double s : std) {
      if (!(s > 0.0)) throw ContractError("gaussian prediction: std must be positive");
    }
  }
};

// Predicted quantiles, values stored row-major [n x levels].
struct QuantilePrediction {
  std::vector<double> levels;
  std::vector<double> values;

  std::size_t size() const { return levels.empty() ? 0 : values.size() / levels.size(); }
  double at(std::size_t i, std::size_t l) const { return values[i * levels.size() + l]; }
  std::vector<double> column(std::size_t l) const {
    std::vector<double> c(size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = at(i, l);
    return c;
  }

  void validate() const {
    if (levels.empty()) throw ContractError("quantile prediction needs at least one level");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (!(levels[l] > 0.0 && levels[l] < 1.0)) throw DomainError("quantile level outside (0, 1)");
      if (l && !(levels[l] > levels[l - 1])) throw ContractError("quantile levels must be strictly ascending");
    }
    if (values.size() % levels.size() != 0) throw DimensionError("quantile values not a multiple of level count");
  }

  // Repairs crossing by sorting each sample's quantiles ascending.
  void sort_rows() {
    const std::size_t L = levels.size();
    for (std::size_t i = 0; i < size(); ++i) {
      std::sort(values.begin() + static_cast<std::ptrdiff_t>(i * L),
                values.begin() + static_cast<std::ptrdiff_t>((i + 1) * L));
    }
  }
};

// Uniform-weight Gaussian mixture, indexed [member][sample].
struct MixturePrediction {
  std::vector<std::vector<double>> member_means;
  std::vector<std::vector<double>> member_stds;

  std::size_t members() const { return member_means.size(); }
  std::size_t size() const { return member_means.empty() ? 0 : member_means.front().size(); }

  void validate() const {
    if (member_means.empty()) throw ContractError("mixture needs at least one member");
    if (member_stds.size() != member_means.size()) throw DimensionError("mixture member count mismatch");
    for (std::size_t m = 0; m < members(); ++m) {
      if (member_means[m].size() != size() || member_stds[m].size() != size()) {
        throw DimensionError("mixture members disagree on sample count");
      }
    }
  }
};

// Normal-Inverse-Gamma evidential parameters per sample.
struct NIGPrediction {
  std::vector<double> gamma, nu, alpha, beta;

  std::size_t size() const { return gamma.size(); }
  void validate() const {
    const std::size_t n = gamma.size();
    if (nu.size() != n || alpha.size() != n || beta.size() != n) throw DimensionError("NIG field length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if (!(nu[i] > 0.0 && beta[i] > 0.0)) throw ContractError("NIG requires nu > 0 and beta > 0");
      if (!(alpha[i] > 1.0)) throw ContractError("NIG requires alpha > 1");
    }
  }
};

// Closed intervals [lo, hi] per sample. `unbounded` marks the infinite
// fallback of a conformal calibration that cannot reach the requested level.
struct IntervalPrediction {
  std::vector<double> lo;
  std::vector<double> hi;
  bool unbounded = false;

  std::size_t size() const { return lo.size(); }
  void validate() const {
    if (lo.size() != hi.size()) throw DimensionError("interval bounds length mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (!(lo[i] <= hi[i])) throw ContractError("interval with lo > hi");
    }
  }
};

struct UncertaintySplit {
  std::vector<double> aleatoric;  // variances
  std::vector<double> epistemic;
};

/// Aleatoric = mean member variance, epistemic = variance of member means
/// (population form, divisor M).
inline UncertaintySplit variance_decomposition(const MixturePrediction& mix) {
  mix.validate();
  const std::size_t M = mix.members(), n = mix.size();
  if (M < 2) throw ContractError("variance decomposition needs at least two members");
  UncertaintySplit u{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0, alea = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      mu += mix.member_means[m][i];
      alea += mix.member_stds[m][i] * mix.member_stds[m][i];
    }
    mu /= static_cast<double>(M);
    double epi = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      const double d = mix.member_means[m][i] - mu;
      epi += d * d;
    }
    u.aleatoric[i] = alea / static_cast<double>(M);
    u.epistemic[i] = epi / static_cast<double>(M);
  }
  return u;
}

// Total mixture variance per sample, aleatoric + epistemic.
inline std::vector<double> mixture_variance(const MixturePrediction& mix) {
  const UncertaintySplit u = variance_decomposition(mix);
  std::vector<double> v(u.aleatoric.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = u.aleatoric[i] + u.epistemic[i];
  return v;
}

/// Moment-matches a uniform mixture to one Gaussian per sample:
/// mean* = mean_m(mu_m), var* = mean_m(sigma_m^2 + mu_m^2) - mean*^2.
/// The variance is evaluated in the centered form
/// mean_m(sigma_m^2) + mean_m((mu_m - mean*)^2), which is the same quantity
/// without cancellation, and clamped at zero before the square root.
/// A single member is returned unchanged.
inline GaussianPrediction mixture_moments(const MixturePrediction& mix) {
  mix.validate();
  if (mix.members() == 1) return {mix.member_means[0], mix.member_stds[0]};
  const std::size_t M = mix.members(), n = mix.size();
  const std::vector<double> var = mixture_variance(mix);
  GaussianPrediction g{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t m = 0; m < M; ++m) mu += mix.member_means[m][i];
    g.mean[i] = mu / static_cast<double>(M);
    g.std[i] = std::sqrt(std::max(0.0, var[i]));
  }
  return g;
}

struct NigMoments {
  std::vector<double> mean;
  std::vector<double> aleatoric;  // beta / (alpha - 1)
  std::vector<double> epistemic;  // beta / (nu (alpha - 1))

  GaussianPrediction gaussian() const {
    GaussianPrediction g{mean, std::vector<double>(mean.size())};
    for (std::size_t i = 0; i < mean.size(); ++i) g.std[i] = std::sqrt(aleatoric[i] + epistemic[i]);
    return g;
  }
};

inline NigMoments nig_moments(const NIGPrediction& nig) {
  nig.validate();
  const std::size_t n = nig.size();
  NigMoments out{nig.gamma, std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double am1 = nig.alpha[i] - 1.0;
    out.aleatoric[i] = nig.beta[i] / am1;
    out.epistemic[i] = nig.beta[i] / (nig.nu[i] * am1);
  }
  return out;
}

}  // namespace uqkit
