#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "uqkit/classification.hpp"
#include "uqkit/datasets.hpp"
#include "uqkit/error.hpp"
#include "uqkit/losses.hpp"

using namespace uqkit;
using uqtest::GraphFn;
using uqtest::gradient_error;
using uqtest::random_tensor;

namespace {

TrainConfig quick_train(int epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.learning_rate = 1e-2;
  t.seed = seed;
  return t;
}

CategoricalPrediction random_simplex(Rng& rng, std::size_t n, std::size_t C) {
  CategoricalPrediction p{C, std::vector<double>(n * C)};
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      // Exponential draws give a uniform point on the simplex; occasionally zero a class.
      const double e = rng.uniform() < 0.1 ? 0.0 : -std::log(1.0 - rng.uniform());
      p.probs[i * C + c] = e;
      s += e;
    }
    if (s == 0.0) {
      p.probs[i * C] = 1.0;
      s = 1.0;
    }
    for (std::size_t c = 0; c < C; ++c) p.probs[i * C + c] /= s;
  }
  return p;
}

double accuracy(const CategoricalPrediction& p, const std::vector<int>& labels) {
  double hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += static_cast<int>(p.argmax(i)) == labels[i];
  return hit / static_cast<double>(labels.size());
}

}  // namespace

TEST(Softmax, UniformAndStableCases) {
  const CategoricalPrediction u = softmax_rows(Tensor::matrix(1, 4, {0, 0, 0, 0}));
  for (double p : u.probs) EXPECT_DOUBLE_EQ(p, 0.25);
  const CategoricalPrediction big = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
  EXPECT_DOUBLE_EQ(big.probs[0], 1.0);
  EXPECT_DOUBLE_EQ(big.probs[1], 0.0);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const Tensor z = random_tensor(rng, {3, 5}, -5, 5);
    const double shift = rng.uniform(-50, 50);
    const CategoricalPrediction a = softmax_rows(z), b = softmax_rows(z + Tensor::scalar(shift));
    for (std::size_t j = 0; j < a.probs.size(); ++j) EXPECT_NEAR(a.probs[j], b.probs[j], 1e-12);
    EXPECT_NO_THROW(a.validate());
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  Tape t;
  const double v = cross_entropy_loss(t.constant(Tensor::matrix(2, 4, std::vector<double>(8, 0.0))),
                                      Tensor::column({0, 3}))
                       .value()
                       .item();
  EXPECT_NEAR(v, std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectLogitsGiveNearZero) {
  Tape t;
  const double v = cross_entropy_loss(t.constant(Tensor::matrix(1, 3, {0, 100, 0})), Tensor::column({1})).value().item();
  EXPECT_LT(v, 1e-40);
  EXPECT_GE(v, 0.0);
}

TEST(CrossEntropy, LabelOutOfRangeIsRejected) {
  Tape t;
  EXPECT_THROW(cross_entropy_loss(t.constant(Tensor::zeros({1, 3})), Tensor::column({3})), Error);
  EXPECT_THROW(cross_entropy_loss(t.constant(Tensor::zeros({1, 3})), Tensor::column({-1})), Error);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor labels = Tensor::zeros({6, 1});
    for (std::size_t i = 0; i < 6; ++i) labels.data()[i] = static_cast<double>(rng.index(4));
    GraphFn f = [&](Tape&, const std::vector<Var>& v) { return cross_entropy_loss(v[0], labels); };
    EXPECT_LE(gradient_error(f, {random_tensor(rng, {6, 4}, -3, 3)}), 1e-4);
  }
}

TEST(Entropy, Examples) {
  const std::vector<double> h = entropy({4, {0.25, 0.25, 0.25, 0.25, 1, 0, 0, 0, 0.5, 0.5, 0, 0}});
  EXPECT_NEAR(h[0], std::log(4.0), 1e-15);
  EXPECT_EQ(h[1], 0.0);
  EXPECT_NEAR(h[2], std::log(2.0), 1e-15);
}

TEST(Entropy, BoundsOnRandomSimplexPoints) {
  Rng rng(3);
  for (std::size_t C : {2u, 3u, 7u}) {
    const CategoricalPrediction p = random_simplex(rng, 500, C);
    for (double h : entropy(p)) {
      EXPECT_GE(h, 0.0);
      EXPECT_LE(h, std::log(static_cast<double>(C)) + 1e-12);
    }
  }
}

TEST(Decomposition, DisagreeingOneHotMembers) {
  CategoricalEnsemble ens{{{2, {1, 0}}, {2, {0, 1}}}};
  const EntropyDecomposition d = ensemble_decompose(ens);
  EXPECT_NEAR(d.total[0], std::log(2.0), 1e-15);
  EXPECT_EQ(d.aleatoric[0], 0.0);
  EXPECT_NEAR(d.epistemic[0], std::log(2.0), 1e-15);
}

TEST(Decomposition, IdenticalMembersHaveNoEpistemic) {
  Rng rng(4);
  const CategoricalPrediction p = random_simplex(rng, 50, 3);
  const EntropyDecomposition d = ensemble_decompose({{p, p, p}});
  for (double e : d.epistemic) EXPECT_NEAR(e, 0.0, 1e-15);
  EXPECT_THROW(ensemble_decompose({{p}}), ContractError);
}

TEST(Decomposition, JensenAndAdditivityOnRandomMembers) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t M = 2 + rng.index(6), C = 2 + rng.index(5);
    CategoricalEnsemble ens;
    for (std::size_t m = 0; m < M; ++m) ens.members.push_back(random_simplex(rng, 10, C));
    const EntropyDecomposition d = ensemble_decompose(ens);
    for (std::size_t i = 0; i < 10; ++i) {
      EXPECT_GE(d.epistemic[i], -1e-12);
      EXPECT_DOUBLE_EQ(d.total[i], d.aleatoric[i] + d.epistemic[i]);
    }
  }
}

TEST(Temperature, CalibratedLogitsGiveUnitTemperature) {
  // Labels drawn from softmax(logits) are calibrated by construction.
  Rng rng(6);
  const std::size_t n = 5000;
  const Tensor z = random_tensor(rng, {n, 3}, -3, 3);
  const CategoricalPrediction p = softmax_rows(z);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    double acc = 0.0;
    labels[i] = 2;
    for (int c = 0; c < 3; ++c) {
      acc += p.at(i, c);
      if (u < acc) {
        labels[i] = c;
        break;
      }
    }
  }
  const Temperature t = fit_temperature(z, labels);
  EXPECT_GE(t.t, 0.8);
  EXPECT_LE(t.t, 1.25);
  // Doubling the logits doubles the optimum.
  const Temperature t2 = fit_temperature(z * Tensor::scalar(2.0), labels);
  EXPECT_NEAR(t2.t / t.t, 2.0, 2.0 * 2e-4);
}

TEST(Temperature, ConstantLogitsTieBreakToOne) {
  const Tensor z = Tensor::zeros({4, 2});
  const std::vector<int> labels{0, 1, 0, 1};
  EXPECT_EQ(fit_temperature(z, labels).t, 1.0);
  const std::vector<int> single{1, 1, 1, 1};
  EXPECT_THROW(fit_temperature(z, single), ContractError);
}

TEST(Temperature, ArgmaxIsInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_tensor(rng, {20, 4}, -4, 4);
    const double T = std::exp(rng.uniform(std::log(0.05), std::log(20.0)));
    const CategoricalPrediction a = softmax_rows(z), b = softmax_rows(z, T);
    for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(a.argmax(i), b.argmax(i));
    EXPECT_NO_THROW(b.validate());
  }
}

TEST(Tta, IdentityAndZeroJitterGiveIdenticalMembers) {
  Rng rng(8);
  const MLPModel m = MLPModel::build({2, {8}, 3});
  const Tensor x = random_tensor(rng, {10, 2});
  const std::vector<Augmentation> ids{Augmentation::identity(), Augmentation::identity()};
  CategoricalEnsemble e = predict_tta(m, x, ids, 1);
  EXPECT_EQ(e.members[0].probs, e.members[1].probs);
  const std::vector<Augmentation> zero{Augmentation::identity(), Augmentation::jitter(0.0)};
  e = predict_tta(m, x, zero, 1);
  EXPECT_EQ(e.members[0].probs, e.members[1].probs);
}

TEST(Tta, JitterIsSeedReproducibleAndEmptyListRejected) {
  Rng rng(9);
  const MLPModel m = MLPModel::build({2, {8}, 3});
  const Tensor x = random_tensor(rng, {10, 2});
  const std::vector<Augmentation> augs{Augmentation::identity(), Augmentation::jitter(0.1), Augmentation::jitter(0.1)};
  const CategoricalEnsemble a = predict_tta(m, x, augs, 5), b = predict_tta(m, x, augs, 5);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.members[k].probs, b.members[k].probs);
  EXPECT_NE(a.members[1].probs, a.members[2].probs);
  EXPECT_THROW(predict_tta(m, x, std::vector<Augmentation>{}, 5), ContractError);
}

TEST(Tta, SignFlipNegatesListedFeatures) {
  const Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(Augmentation::sign_flip({1}).apply(x, 0), Tensor::matrix(2, 2, {1, -2, 3, -4}));
  EXPECT_THROW(Augmentation::sign_flip({2}).apply(x, 0), DimensionError);
}

TEST(Classifier, TwoMoonsAccuracy) {
  const TabularDataset train = gen_two_moons(1000, 0.1, 1), test = gen_two_moons(1000, 0.1, 2);
  const SoftmaxClassifier c =
      SoftmaxClassifier::fit(train.x_tensor(), train.labels, {2, {16, 16}, 2, Activation::kRelu, {}, 3}, quick_train(60, 4));
  EXPECT_GE(accuracy(c.predict(test.x_tensor()), test.labels), 0.95);
}

TEST(Classifier, IdenticalSeedEnsembleHasNoEpistemic) {
  const TabularDataset d = gen_two_moons(200, 0.1, 5);
  const std::vector<MemberSeeds> same(3, MemberSeeds{1, 2});
  const ClassifierEnsemble e =
      ClassifierEnsemble::fit_with_seeds(d.x_tensor(), d.labels, {2, {8}, 2}, quick_train(3, 0), same);
  for (double v : ensemble_decompose(e.predict(d.x_tensor())).epistemic) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Classifier, McDropoutEntropyIsHigherFarFromData) {
  // Far probes on a ring of radius 3 around the data centroid versus the
  // training inputs themselves. The centroid of two moons sits on the
  // decision boundary, so the in-distribution reference is the average over
  // training points. Averaged over seeds.
  double far_h = 0.0, train_h = 0.0, far_mi = 0.0, train_mi = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const TabularDataset d = gen_two_moons(400, 0.1, 100 + s);
    const SoftmaxClassifier c = SoftmaxClassifier::fit(
        d.x_tensor(), d.labels, {2, {32, 32}, 2, Activation::kRelu, {0.2, 0.2}, derive_seed(s, "init")},
        quick_train(20, s));
    double cx = 0, cy = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      cx += d.feature(i, 0) / d.size();
      cy += d.feature(i, 1) / d.size();
    }
    std::vector<double> probe;
    for (int k = 0; k < 16; ++k) {
      const double a = 2 * std::numbers::pi * k / 16;
      probe.push_back(cx + 3 * std::cos(a));
      probe.push_back(cy + 3 * std::sin(a));
    }
    const EntropyDecomposition far =
        ensemble_decompose(predict_mc_dropout_classifier(c.model(), Tensor::matrix(16, 2, probe), 50, s));
    const EntropyDecomposition in = ensemble_decompose(predict_mc_dropout_classifier(c.model(), d.x_tensor(), 50, s));
    auto avg = [](const std::vector<double>& v) {
      double t = 0;
      for (double x : v) t += x / v.size();
      return t;
    };
    far_h += avg(far.total) / seeds;
    train_h += avg(in.total) / seeds;
    far_mi += avg(far.epistemic) / seeds;
    train_mi += avg(in.epistemic) / seeds;
  }
  EXPECT_GE(far_h, train_h);
  EXPECT_GE(far_mi, train_mi);
}

TEST(Classifier, VariationalClassifierProducesSimplexMembers) {
  const TabularDataset d = gen_two_moons(200, 0.1, 6);
  const BnnViClassifier c = BnnViClassifier::fit(d.x_tensor(), d.labels, {2, {8}, 2}, quick_train(3, 1), ViConfig{});
  const CategoricalEnsemble e = c.predict(d.x_tensor(), 4, 2);
  EXPECT_EQ(e.members.size(), 4u);
  for (const auto& m : e.members) EXPECT_NO_THROW(m.validate());
}
