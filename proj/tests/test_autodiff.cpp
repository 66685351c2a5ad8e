#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "uqkit/autodiff.hpp"
#include "uqkit/error.hpp"
#include "uqkit/nn.hpp"

using namespace uqkit;
using uqtest::GraphFn;
using uqtest::gradient_error;
using uqtest::random_tensor;

TEST(Autodiff, SquareGradient) {
  Tape tape;
  Var w = tape.parameter(Tensor::scalar(3.0));
  tape.backward(w * w);
  EXPECT_DOUBLE_EQ(tape.grad(w).item(), 6.0);
}

TEST(Autodiff, InactiveReluHasZeroGradient) {
  Tape tape;
  Var w = tape.parameter(Tensor::scalar(-1.0));
  tape.backward(relu(w));
  EXPECT_EQ(tape.grad(w).item(), 0.0);
}

TEST(Autodiff, ElementwiseValues) {
  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 2, {-2.0, 3.0}));
  EXPECT_EQ(relu(x).value(), Tensor::matrix(1, 2, {0.0, 3.0}));
  Var z = tape.constant(Tensor::scalar(0.0));
  EXPECT_NEAR(softplus(z).value().item(), std::log(2.0), 1e-15);
  EXPECT_EQ(sigmoid(z).value().item(), 0.5);
}

TEST(Autodiff, UnreachedParameterGetsZeroGradient) {
  Tape tape;
  Var a = tape.parameter(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var b = tape.parameter(Tensor::scalar(5.0));
  tape.backward(sum(a));
  EXPECT_EQ(tape.grad(b), Tensor::zeros({1}));
  EXPECT_EQ(tape.grad(a), Tensor::filled({2, 2}, 1.0));
}

TEST(Autodiff, NonScalarLossIsContractError) {
  Tape tape;
  Var a = tape.parameter(Tensor::matrix(2, 1, {1, 2}));
  EXPECT_THROW(tape.backward(a * 2.0), ContractError);
}

TEST(Autodiff, EmptyTapeIsContractError) {
  Tape tape;
  EXPECT_THROW(tape.backward(Var{}), ContractError);
}

TEST(Autodiff, LogOfNonPositiveIsDomainError) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor::scalar(0.0))), DomainError);
  EXPECT_THROW(log(tape.constant(Tensor::scalar(-1.0))), DomainError);
}

TEST(Autodiff, NonFiniteResultIsSurfaced) {
  Tape tape;
  EXPECT_THROW(exp(tape.constant(Tensor::scalar(1000.0))), NumericalError);
}

TEST(Autodiff, ShapeMismatchIsDimensionError) {
  Tape tape;
  EXPECT_THROW(tape.constant(Tensor::zeros({2, 2})) + tape.constant(Tensor::zeros({2, 1})), DimensionError);
}

// Every differentiable primitive against central differences on random inputs.
struct PrimitiveCase {
  const char* name;
  GraphFn f;
  double lo, hi;
};

TEST(Autodiff, PrimitivesMatchFiniteDifferences) {
  const std::vector<PrimitiveCase> cases = {
      {"add", [](Tape&, const std::vector<Var>& v) { return sum(square(v[0] + v[1])); }, -1, 1},
      {"sub", [](Tape&, const std::vector<Var>& v) { return sum(square(v[0] - v[1])); }, -1, 1},
      {"mul", [](Tape&, const std::vector<Var>& v) { return sum(v[0] * v[1] * v[0]); }, -1, 1},
      {"div", [](Tape&, const std::vector<Var>& v) { return sum(v[0] / (v[1] * v[1] + 1.0)); }, -1, 1},
      {"relu", [](Tape&, const std::vector<Var>& v) { return sum(relu(v[0]) * v[1]); }, -1, 1},
      {"tanh", [](Tape&, const std::vector<Var>& v) { return sum(tanh(v[0]) * v[1]); }, -2, 2},
      {"exp", [](Tape&, const std::vector<Var>& v) { return sum(exp(v[0]) * v[1]); }, -2, 2},
      {"log", [](Tape&, const std::vector<Var>& v) { return sum(log(v[0] * v[0] + 0.5) * v[1]); }, -2, 2},
      {"softplus", [](Tape&, const std::vector<Var>& v) { return sum(softplus(v[0]) * v[1]); }, -3, 3},
      {"sigmoid", [](Tape&, const std::vector<Var>& v) { return sum(sigmoid(v[0]) * v[1]); }, -3, 3},
      {"abs", [](Tape&, const std::vector<Var>& v) { return sum(abs(v[0] + 2.0) * v[1]); }, -1, 1},
      {"lgamma", [](Tape&, const std::vector<Var>& v) { return sum(lgamma(v[0] * v[0] + 0.5) * v[1]); }, -2, 2},
      {"mean", [](Tape&, const std::vector<Var>& v) { return mean(square(v[0]) * v[1]); }, -1, 1},
      {"matmul",
       [](Tape&, const std::vector<Var>& v) { return sum(square(matmul(columns(v[0], 0, 3), v[1]))); }, -1, 1},
      {"columns", [](Tape&, const std::vector<Var>& v) { return sum(square(columns(v[0] * v[1], 1, 3))); }, -1, 1},
      {"log_softmax",
       [](Tape&, const std::vector<Var>& v) { return sum(log_softmax_rows(v[0] * 3.0) * v[1]); }, -1, 1},
      {"scalar-broadcast",
       [](Tape& t, const std::vector<Var>& v) {
         Var s = sum(v[1]) * (1.0 / 12.0);
         return sum(square(v[0] * s + s)) + 0.0 * sum(t.constant(Tensor::scalar(1.0)));
       },
       -1, 1},
  };
  Rng rng(11);
  for (const auto& c : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<Tensor> params{random_tensor(rng, {3, 4}, c.lo, c.hi), random_tensor(rng, {3, 4}, c.lo, c.hi)};
      EXPECT_LE(gradient_error(c.f, params), 1e-4) << c.name;
    }
  }
}

TEST(Autodiff, TwoLayerMlpLossMatchesFiniteDifferences) {
  Rng rng(12);
  MLPConfig cfg{3, {5, 4}, 2, Activation::kTanh, {}, 1};
  const MLPModel model = MLPModel::build(cfg);
  const Tensor x = random_tensor(rng, {6, 3}), y = random_tensor(rng, {6, 2});
  GraphFn f = [&](Tape& tape, const std::vector<Var>& p) {
    ForwardVars fv = forward(tape, cfg, p, tape.constant(x), DropoutMode::off());
    return mean(square(fv.output - tape.constant(y)));
  };
  EXPECT_LE(gradient_error(f, model.parameters()), 1e-4);
}

TEST(Autodiff, CompositionIsProductOfJacobians) {
  // d/dw exp(tanh(w)) = exp(tanh w) (1 - tanh^2 w)
  for (double w : {-1.3, -0.2, 0.0, 0.7, 2.1}) {
    Tape tape;
    Var v = tape.parameter(Tensor::scalar(w));
    tape.backward(exp(tanh(v)));
    const double t = std::tanh(w);
    EXPECT_NEAR(tape.grad(v).item(), std::exp(t) * (1 - t * t), 1e-14);
  }
  // d/dw softplus(w^2) = sigmoid(w^2) * 2w
  for (double w : {-1.0, 0.3, 1.5}) {
    Tape tape;
    Var v = tape.parameter(Tensor::scalar(w));
    tape.backward(softplus(square(v)));
    EXPECT_NEAR(tape.grad(v).item(), 1.0 / (1.0 + std::exp(-w * w)) * 2 * w, 1e-14);
  }
}

TEST(Autodiff, TopologicalOrder) {
  Tape tape;
  Var a = tape.parameter(Tensor::scalar(1.0));
  Var b = a * 2.0;
  Var c = b + a;
  EXPECT_LT(a.id(), b.id());
  EXPECT_LT(b.id(), c.id());
  EXPECT_EQ(tape.parameter_ids().size(), 1u);
}
