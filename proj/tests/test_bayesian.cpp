#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "uqkit/datasets.hpp"
#include "uqkit/error.hpp"
#include "uqkit/laplace.hpp"
#include "uqkit/metrics.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/swag.hpp"
#include "uqkit/vi.hpp"

using namespace uqkit;
using uqtest::random_tensor;

namespace {

TrainConfig quick_train(int epochs, std::uint64_t seed, double lr = 3e-3) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 64;
  t.learning_rate = lr;
  t.seed = seed;
  return t;
}

}  // namespace

// ---- SWAG ---------------------------------------------------------------------------

TEST(Swag, HandFedScalarSnapshots) {
  SwagStats s(1, 2);
  const std::vector<double> a{1.0}, b{3.0};
  s.add_snapshot(a);
  s.add_snapshot(b);
  EXPECT_DOUBLE_EQ(s.mean()[0], 2.0);
  EXPECT_DOUBLE_EQ(s.second_moment()[0], 5.0);
  EXPECT_DOUBLE_EQ(s.diag_variance()[0], 1.0);
  EXPECT_EQ(s.count(), 2u);
  // Deviations use the running mean at each snapshot: 1 - 1, 3 - 2.
  EXPECT_DOUBLE_EQ(s.deviations()[0][0], 0.0);
  EXPECT_DOUBLE_EQ(s.deviations()[1][0], 1.0);
}

TEST(Swag, DeviationBufferKeepsLastK) {
  SwagStats s(1, 3);
  for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    const std::vector<double> t{v};
    s.add_snapshot(t);
  }
  EXPECT_EQ(s.rank(), 3u);
  EXPECT_EQ(s.count(), 5u);
  EXPECT_DOUBLE_EQ(s.deviations().back()[0], 5.0 - 3.0);
  EXPECT_THROW(SwagStats(1, 1), ContractError);
}

TEST(Swag, ZeroLearningRateGivesDegenerateStats) {
  const TabularDataset d = gen_heteroscedastic_sine(128, 1);
  const MLPModel m = MLPModel::build({1, {8}, 2});
  const SwagStats s = swag_collect(m, d.x_tensor(), d.y_tensor(), mve_loss(), 6, 4, 0.0, quick_train(1, 2));
  EXPECT_EQ(s.count(), 6u);
  for (double v : s.diag_variance()) EXPECT_LT(v, 1e-20);
  for (const auto& col : s.deviations()) {
    for (double v : col) EXPECT_LT(std::fabs(v), 1e-12);
  }
  EXPECT_THROW(swag_collect(m, d.x_tensor(), d.y_tensor(), mve_loss(), 3, 4, 0.0, quick_train(1, 2)), ContractError);
}

TEST(Swag, ZeroScaleCollapsesToSwaMean) {
  const TabularDataset d = gen_heteroscedastic_sine(128, 2);
  const MLPModel m = MLPModel::build({1, {8}, 2});
  const SwagStats s = swag_collect(m, d.x_tensor(), d.y_tensor(), mve_loss(), 5, 3, 1e-2, quick_train(1, 3));
  const Tensor x = d.x_tensor();
  const MixturePrediction mix = swag_sample_predict(s, m, x, 4, 7, 0.0);
  const std::vector<double> swa = gaussian_from_output(with_trainable(m, s.mean()).predict(x)).mean;
  for (const auto& member : mix.member_means) EXPECT_EQ(member, swa);
  for (double v : variance_decomposition(mix).epistemic) EXPECT_EQ(v, 0.0);
}

TEST(Swag, SampleCovarianceMatchesLowRankPlusDiagonal) {
  // Two-dimensional toy statistics; oracle: 1/2 diag(var) + 1/2 D D^T / (K - 1).
  SwagStats s(2, 4);
  Rng feed(3);
  for (int k = 0; k < 8; ++k) {
    const double z = feed.normal();
    const std::vector<double> t{1.0 + z, -0.5 + 0.7 * z + 0.3 * feed.normal()};
    s.add_snapshot(t);
  }
  double oracle[2][2] = {{0, 0}, {0, 0}};
  const auto var = s.diag_variance();
  for (int i = 0; i < 2; ++i) oracle[i][i] += 0.5 * var[i];
  for (const auto& col : s.deviations()) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) oracle[i][j] += 0.5 * col[i] * col[j] / (s.rank() - 1.0);
    }
  }
  Rng rng(4);
  const int S = 5000;
  double mean[2] = {0, 0}, cov[2][2] = {{0, 0}, {0, 0}};
  std::vector<std::vector<double>> draws;
  for (int k = 0; k < S; ++k) draws.push_back(s.sample(rng, 1.0));
  for (const auto& d : draws) {
    for (int i = 0; i < 2; ++i) mean[i] += d[i] / S;
  }
  for (const auto& d : draws) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) cov[i][j] += (d[i] - mean[i]) * (d[j] - mean[j]) / (S - 1);
    }
  }
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(cov[i][j], oracle[i][j], 0.1 * std::sqrt(oracle[i][i] * oracle[j][j])) << i << j;
    }
  }
}

TEST(Swag, TemplateMismatchIsDimensionError) {
  SwagStats s(3, 2);
  const std::vector<double> t{0, 0, 0};
  s.add_snapshot(t);
  s.add_snapshot(t);
  EXPECT_THROW(swag_sample_predict(s, MLPModel::build({1, {4}, 2}), Tensor::column({0.0}), 2, 1, 1.0), DimensionError);
}

// ---- variational inference -------------------------------------------------------------

TEST(Vi, ReparameterizationGradientWrtMeanIsOne) {
  for (double eps : {-1.3, 0.0, 0.4, 2.2}) {
    Tape tape;
    Var mu = tape.parameter(Tensor::scalar(0.3));
    Var rho = tape.parameter(Tensor::scalar(-2.0));
    tape.backward(mu + softplus(rho) * eps);
    EXPECT_DOUBLE_EQ(tape.grad(mu).item(), 1.0);
  }
}

TEST(Vi, FixedSeedGivesReproducibleElboTrace) {
  const TabularDataset d = gen_heteroscedastic_sine(256, 4);
  const ViConfig vc;
  const auto a = BnnViRegressor::fit(d.x_tensor(), d.y_tensor(), {1, {8}, 2}, quick_train(4, 5), vc);
  const auto b = BnnViRegressor::fit(d.x_tensor(), d.y_tensor(), {1, {8}, 2}, quick_train(4, 5), vc);
  EXPECT_EQ(a.loss_trace(), b.loss_trace());
  EXPECT_EQ(a.predict(d.x_tensor(), 3, 1).member_means, b.predict(d.x_tensor(), 3, 1).member_means);
}

TEST(Vi, ZeroKlWeightWithTinySigmaBehavesLikeMve) {
  const TabularDataset train = gen_heteroscedastic_sine(2000, 6), test = gen_heteroscedastic_sine(500, 7);
  const MLPConfig arch{1, {32, 32}, 2, Activation::kRelu, {}, 8};
  const TrainConfig t = quick_train(60, 9);
  ViConfig vc;
  vc.kl_weight = 0.0;
  vc.rho_init = -12.0;
  const auto vi = BnnViRegressor::fit(train.x_tensor(), train.y_tensor(), arch, t, vc);
  const auto mve = MveRegressor::fit(train.x_tensor(), train.y_tensor(), arch, t);
  const double rmse_vi = rmse(mixture_moments(vi.predict(test.x_tensor(), 10, 1)).mean, test.y);
  const double rmse_mve = rmse(mve.predict(test.x_tensor()).mean, test.y);
  EXPECT_LE(std::fabs(rmse_vi - rmse_mve), 0.2 * rmse_mve) << rmse_vi << " vs " << rmse_mve;
}

TEST(Vi, InvalidConfigIsRejected) {
  ViConfig vc;
  vc.prior_std = 0.0;
  EXPECT_THROW(VariationalMLP::build({1, {4}, 2}, vc), ConfigError);
  vc = {};
  vc.kl_weight = -1.0;
  EXPECT_THROW(VariationalMLP::build({1, {4}, 2}, vc), ConfigError);
  vc = {};
  vc.stochastic = {true};
  EXPECT_THROW(VariationalMLP::build({1, {4}, 2}, vc), ConfigError);
}

TEST(Vi, NonStochasticFrozenLayersStayFixed) {
  const TabularDataset d = gen_heteroscedastic_sine(128, 10);
  MLPModel base = MLPModel::build({1, {8}, 2});
  base.freeze(0);
  ViConfig vc;
  vc.stochastic = {false, true};
  VariationalMLP v = VariationalMLP::from_model(base, vc);
  const Tensor before = v.layers()[0].weight_mu;
  v.fit(d.x_tensor(), d.y_tensor(), mve_loss(), quick_train(3, 1));
  EXPECT_EQ(v.layers()[0].weight_mu, before);
  EXPECT_FALSE(v.layers()[1].weight_mu == base.layers()[1].weight);
}

// ---- last-layer Laplace ---------------------------------------------------------------------

TEST(Laplace, OneDimensionalPlugIn) {
  LaplacePosterior post;
  post.map_weights = {0.0};
  post.covariance = Eigen::MatrixXd::Constant(1, 1, 0.5);
  const std::vector<double> phi{1.0};
  EXPECT_DOUBLE_EQ(predictive_variance(post, phi, 1.0), 1.5);
}

TEST(Laplace, MatchesConjugateBayesianLinearRegression) {
  // hidden = [] makes the last layer the whole model, phi~ = [x, 1].
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 50;
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = rng.uniform(-2, 2);
      ys[i] = 0.8 * xs[i] + 0.1 + 0.3 * rng.normal();
    }
    const double noise = rng.uniform(0.05, 1.0), prior = rng.uniform(0.1, 5.0);
    const MLPModel m = MLPModel::build({1, {}, 1, Activation::kRelu, {}, static_cast<std::uint64_t>(trial)});
    const LaplacePosterior post =
        fit_laplace_last_layer(m, Tensor::column(xs), Tensor::column(ys), {prior, LaplaceNoise::kFixed, noise});

    // Closed form: Sigma = (X~^T X~ / s^2 + lambda I)^{-1}, 2x2 inverse by hand.
    double a = prior, b = 0.0, d = prior;
    for (double x : xs) {
      a += x * x / noise;
      b += x / noise;
      d += 1.0 / noise;
    }
    const double det = a * d - b * b;
    EXPECT_NEAR(post.covariance(0, 0), d / det, 1e-8);
    EXPECT_NEAR(post.covariance(0, 1), -b / det, 1e-8);
    EXPECT_NEAR(post.covariance(1, 0), -b / det, 1e-8);
    EXPECT_NEAR(post.covariance(1, 1), a / det, 1e-8);
    EXPECT_DOUBLE_EQ(post.noise_var, noise);
  }
}

TEST(Laplace, HugePriorPrecisionCollapsesToNoise) {
  const TabularDataset d = gen_heteroscedastic_sine(200, 12);
  const MLPModel m = MLPModel::build({1, {8}, 1});
  const LaplaceRegressor r = LaplaceRegressor::fit(m, d.x_tensor(), d.y_tensor(), {1e12, LaplaceNoise::kFixed, 0.25});
  for (double s : r.predict(d.x_tensor()).std) EXPECT_NEAR(s * s, 0.25, 1e-6);
}

TEST(Laplace, PosteriorIsSymmetricPositiveDefinite) {
  const TabularDataset d = gen_heteroscedastic_sine(300, 13);
  const MLPModel m = MLPModel::build({1, {6}, 2});
  const LaplacePosterior post = fit_laplace_last_layer(m, d.x_tensor(), d.y_tensor(), {1.0, LaplaceNoise::kMveHead, {}});
  EXPECT_EQ(post.dim(), 7u);
  EXPECT_LT((post.covariance - post.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(post.covariance);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
}

TEST(Laplace, InvalidConfigurationsAreRejected) {
  const Tensor x = Tensor::column({0.0, 1.0}), y = Tensor::column({0.0, 1.0});
  EXPECT_THROW(fit_laplace_last_layer(MLPModel::build({1, {4}, 1}), x, y, {0.0}), ConfigError);
  EXPECT_THROW(fit_laplace_last_layer(MLPModel::build({1, {4}, 1}), x, y, {1.0, LaplaceNoise::kMveHead, {}}),
               ConfigError);
  EXPECT_THROW(fit_laplace_last_layer(MLPModel::build({1, {4}, 3}), x, y, {1.0}), ConfigError);
}
