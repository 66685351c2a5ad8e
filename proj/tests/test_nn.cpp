#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "uqkit/error.hpp"
#include "uqkit/nn.hpp"
#include "uqkit/regression.hpp"
#include "uqkit/train.hpp"

using namespace uqkit;
using uqtest::random_tensor;

TEST(MLP, LayerShapes) {
  const MLPModel m = MLPModel::build({1, {16, 16}, 2});
  ASSERT_EQ(m.layers().size(), 3u);
  EXPECT_EQ(m.layers()[0].weight.shape(), (Shape{1, 16}));
  EXPECT_EQ(m.layers()[1].weight.shape(), (Shape{16, 16}));
  EXPECT_EQ(m.layers()[2].weight.shape(), (Shape{16, 2}));
  EXPECT_EQ(m.layers()[2].bias.shape(), (Shape{1, 2}));
  EXPECT_EQ(m.feature_dim(), 16u);
}

TEST(MLP, EmptyHiddenIsLinearAndZeroDimsRejected) {
  const MLPModel m = MLPModel::build({3, {}, 1});
  EXPECT_EQ(m.layers().size(), 1u);
  EXPECT_EQ(m.feature_dim(), 3u);
  EXPECT_THROW(MLPModel::build({0, {4}, 1}), ConfigError);
  EXPECT_THROW(MLPModel::build({1, {0}, 1}), ConfigError);
  EXPECT_THROW(MLPModel::build({1, {4}, 0}), ConfigError);
  EXPECT_THROW(MLPModel::build({1, {4, 4}, 1, Activation::kRelu, {0.1}}), ConfigError);
  EXPECT_THROW(MLPModel::build({1, {4}, 1, Activation::kRelu, {1.0}}), ConfigError);
}

TEST(MLP, BuildIsDeterministic) {
  const MLPConfig cfg{2, {8, 8}, 2, Activation::kRelu, {}, 99};
  const MLPModel a = MLPModel::build(cfg), b = MLPModel::build(cfg);
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    EXPECT_EQ(a.layers()[l].weight, b.layers()[l].weight);
    EXPECT_EQ(a.layers()[l].bias, b.layers()[l].bias);
  }
  MLPConfig other = cfg;
  other.init_seed = 100;
  EXPECT_FALSE(MLPModel::build(other).layers()[0].weight == a.layers()[0].weight);
}

TEST(MLP, InitStatisticsMatchScheme) {
  for (Activation act : {Activation::kRelu, Activation::kTanh}) {
    const double target = init_stddev(act, 50);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const MLPModel m = MLPModel::build({50, {200}, 1, act, {}, seed});
      const std::vector<double>& w = m.layers()[0].weight.vector();
      const double sd = std::sqrt(uqtest::sample_variance(w));
      EXPECT_NEAR(sd, target, 0.2 * target);
    }
  }
  EXPECT_DOUBLE_EQ(init_stddev(Activation::kRelu, 8), 0.5);
  EXPECT_DOUBLE_EQ(init_stddev(Activation::kTanh, 4), 0.5);
}

TEST(MLP, ForwardShapesAndFeatures) {
  Rng rng(1);
  const MLPModel m = MLPModel::build({3, {5, 7}, 2});
  const ForwardResult fr = m.forward(random_tensor(rng, {4, 3}));
  EXPECT_EQ(fr.output.shape(), (Shape{4, 2}));
  EXPECT_EQ(fr.features.shape(), (Shape{4, 7}));
  EXPECT_THROW(m.forward(random_tensor(rng, {4, 2})), DimensionError);
}

TEST(MLP, ZeroDropoutModesAgree) {
  Rng rng(2);
  const MLPModel m = MLPModel::build({2, {6, 6}, 1, Activation::kRelu, {0.0, 0.0}});
  const Tensor x = random_tensor(rng, {5, 2});
  EXPECT_EQ(m.predict(x), m.predict(x, DropoutMode::sampled(7)));
}

TEST(MLP, SampledDropoutIsSeedDeterministic) {
  Rng rng(3);
  const MLPModel m = MLPModel::build({2, {16}, 1, Activation::kRelu, {0.5}});
  const Tensor x = random_tensor(rng, {5, 2});
  EXPECT_EQ(m.predict(x, DropoutMode::sampled(4)), m.predict(x, DropoutMode::sampled(4)));
  EXPECT_FALSE(m.predict(x, DropoutMode::sampled(4)) == m.predict(x, DropoutMode::sampled(5)));
}

TEST(MLP, InvertedDropoutExpectation) {
  // Linear network with one hidden layer: the output is linear in the
  // hidden activation, so E[sampled] must equal the off-mode output.
  Rng rng(4);
  MLPConfig cfg{3, {32}, 1, Activation::kRelu, {0.5}, 5};
  MLPModel m = MLPModel::build(cfg);
  const Tensor x = random_tensor(rng, {1, 3}, 0.5, 1.5);
  const Tensor h_off = m.forward(x).features;
  std::vector<double> mean_h(32, 0.0);
  const int passes = 10000;
  for (int t = 0; t < passes; ++t) {
    const Tensor h = m.forward(x, DropoutMode::sampled(derive_seed(77, t))).features;
    for (std::size_t j = 0; j < 32; ++j) mean_h[j] += h[j] / passes;
  }
  for (std::size_t j = 0; j < 32; ++j) {
    if (h_off[j] > 1e-3) {
      EXPECT_NEAR(mean_h[j], h_off[j], 0.05 * h_off[j]) << j;
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(5);
  MLPModel m = MLPModel::build({3, {7, 4}, 2, Activation::kTanh, {0.1, 0.2}, 8});
  m.freeze(0);
  const nlohmann::json doc = save_checkpoint(m);
  const MLPModel back = load_checkpoint(nlohmann::json::parse(doc.dump()));
  const Tensor x = random_tensor(rng, {10, 3});
  EXPECT_EQ(back.predict(x), m.predict(x));
  EXPECT_TRUE(back.is_frozen(0));
  EXPECT_FALSE(back.is_frozen(1));
  EXPECT_EQ(back.config().dropout_rates, m.config().dropout_rates);
}

TEST(Checkpoint, CorruptShapeIsRejected) {
  nlohmann::json doc = save_checkpoint(MLPModel::build({2, {3}, 1}));
  doc["layers"][0]["weight"]["shape"] = {3, 3};
  EXPECT_THROW(load_checkpoint(doc), ParseError);
}

TEST(Checkpoint, VersionMismatchAndMalformedAreRejected) {
  nlohmann::json doc = save_checkpoint(MLPModel::build({2, {3}, 1}));
  nlohmann::json v2 = doc;
  v2["version"] = 2;
  EXPECT_THROW(load_checkpoint(v2), ParseError);
  nlohmann::json broken = doc;
  broken["layers"][0].erase("bias");
  EXPECT_THROW(load_checkpoint(broken), ParseError);
  nlohmann::json bad_float = doc;
  bad_float["layers"][0]["weight"]["values"][0] = "abc";
  EXPECT_THROW(load_checkpoint(bad_float), ParseError);
}

TEST(Freeze, FrozenModelIsBitIdenticalAfterTraining) {
  Rng rng(6);
  MLPModel m = MLPModel::build({2, {8}, 1});
  m.freeze_all();
  const auto before = m.parameters();
  const Tensor x = random_tensor(rng, {32, 2}), y = random_tensor(rng, {32, 1});
  TrainConfig t;
  t.epochs = 5;
  t.batch_size = 8;
  t.learning_rate = 0.1;
  fit(m, x, y, mse_loss(), t);
  const auto after = m.parameters();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(Freeze, OnlyUnfrozenLayersChange) {
  Rng rng(7);
  MLPModel m = MLPModel::build({2, {8, 8}, 1});
  m.freeze(0);
  m.freeze(1);
  const auto before = m.parameters();
  const Tensor x = random_tensor(rng, {32, 2}), y = random_tensor(rng, {32, 1});
  TrainConfig t;
  t.epochs = 3;
  t.batch_size = 8;
  fit(m, x, y, mse_loss(), t);
  const auto after = m.parameters();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(before[i], after[i]);
  EXPECT_FALSE(before[4] == after[4]);
}
