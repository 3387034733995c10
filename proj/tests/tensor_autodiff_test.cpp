// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "avae/gradcheck.hpp"
#include "avae/ops.hpp"
#include "avae/tape.hpp"
#include "test_util.hpp"

namespace avae {
namespace {

using avae::testing::uniform_tensor;

TEST(Tensor, RejectsDataOfWrongLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_EQ(Tensor({2, 3, 4}).size(), 24u);
}

TEST(Primitives, MatmulShapeRule) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}, 1.0));
  Var b = tape.constant(Tensor({3, 4}, 2.0));
  Var c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 4}));
  EXPECT_DOUBLE_EQ(c.value()[0], 6.0);
}

TEST(Primitives, MatmulMismatchNamesPrimitiveAndShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({4, 4}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("matmul"), std::string::npos);
    EXPECT_NE(what.find("(2x3)"), std::string::npos);
    EXPECT_NE(what.find("(4x4)"), std::string::npos);
  }
}

TEST(Primitives, SigmoidOfZeroIsHalf) {
  Tape tape;
  Var y = sigmoid(tape.constant(Tensor({5}, 0.0)));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(Primitives, Conv2dShapeRule) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 1, 8, 8}, 1.0));
  Var w = tape.constant(Tensor({4, 1, 2, 2}, 1.0));
  Var y = conv2d(x, w, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 4, 4, 4}));
  EXPECT_DOUBLE_EQ(y.value()[0], 4.0);
  EXPECT_THROW(conv2d(x, w, 0), ShapeError);
  EXPECT_THROW(conv2d(x, tape.constant(Tensor({4, 2, 2, 2})), 2), ShapeError);
}

TEST(Primitives, Deconv2dShapeRuleInvertsConv) {
  Tape tape;
  Var x = tape.constant(Tensor({2, 3, 4, 4}, 1.0));
  Var w = tape.constant(Tensor({3, 5, 2, 2}, 1.0));
  EXPECT_EQ(deconv2d(x, w, 2).shape(), (Shape{2, 5, 8, 8}));
  Var one = tape.constant(Tensor({1, 512, 1, 1}));
  Var k3 = tape.constant(Tensor({512, 128, 3, 3}));
  EXPECT_EQ(deconv2d(one, k3, 2).shape(), (Shape{1, 128, 3, 3}));
}

// <deconv(x), y> == <x, conv(y)> with shared weights
TEST(Primitives, DeconvIsAdjointOfConv) {
  std::mt19937_64 rng(7);
  Tape tape;
  Tensor w = uniform_tensor({3, 2, 3, 3}, rng);
  Var x = tape.constant(uniform_tensor({1, 3, 4, 4}, rng));
  Var y = tape.constant(uniform_tensor({1, 2, 9, 9}, rng));
  Var wv = tape.constant(w);
  Var lhs = sum(deconv2d(x, wv, 2) * y);
  Var rhs = sum(x * conv2d(y, tape.constant(w.reshaped({3, 2, 3, 3})), 2));
  // conv2d expects [F, C, k, k] = [3, 2, 3, 3], which is the deconv [C_in, F_out] layout
  EXPECT_NEAR(lhs.value().item(), rhs.value().item(), 1e-12);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0));
  Gradients g = tape.backward(square(x));
  EXPECT_DOUBLE_EQ(g[x].item(), 6.0);
}

TEST(Backward, SumOfSigmoidAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor({5}, 0.0));
  Gradients g = tape.backward(sum(sigmoid(x)));
  for (double v : g[x].data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Backward, RejectsNonScalarOutput) {
  Tape tape;
  Var x = tape.leaf(Tensor({3}, 1.0));
  EXPECT_THROW(tape.backward(square(x)), ShapeError);
}

TEST(Backward, DetachedLeafGetsZeroAndFlag) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0));
  Var unused = tape.leaf(Tensor({3}, 1.0));
  Gradients g = tape.backward(sum(x));
  EXPECT_TRUE(g.has_detached());
  EXPECT_TRUE(g.detached(unused));
  EXPECT_FALSE(g.detached(x));
  for (double v : g[unused].data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsForeignOutput) {
  Tape a, b;
  Var y = sum(b.leaf(Tensor({2}, 1.0)));
  EXPECT_THROW(a.backward(y), std::invalid_argument);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Tensor w1 = uniform_tensor({6, 8}, rng), w2 = uniform_tensor({8, 8}, rng),
               w3 = uniform_tensor({8, 3}, rng), b1 = uniform_tensor({8}, rng);
  ScalarFunction f = [&](Tape& t, Var x) {
    Var h = tanh(add_bias(matmul(x, t.constant(w1)), t.constant(b1)));
    h = sigmoid(matmul(h, t.constant(w2)));
    return sum(square(matmul(h, t.constant(w3))));
  };
  EXPECT_LT(finite_difference_check(f, uniform_tensor({4, 6}, rng), 1e-5), 1e-3);

  // gradient with respect to the weights as well
  const Tensor x = uniform_tensor({4, 6}, rng);
  ScalarFunction g = [&](Tape& t, Var w) {
    Var h = tanh(matmul(t.constant(x), w));
    h = sigmoid(matmul(h, t.constant(w2)));
    return sum(square(matmul(h, t.constant(w3))));
  };
  EXPECT_LT(finite_difference_check(g, w1, 1e-5), 1e-3);
}

TEST(FiniteDifference, SumOfSquares) {
  std::mt19937_64 rng(3);
  ScalarFunction f = [](Tape&, Var x) { return sum(square(x)); };
  EXPECT_LT(finite_difference_check(f, uniform_tensor({10}, rng), 1e-5), 1e-6);
}

TEST(FiniteDifference, ConstantFunctionHasZeroError) {
  ScalarFunction f = [](Tape& t, Var) { return sum(t.constant(Tensor({1}, 4.0))); };
  EXPECT_EQ(finite_difference_check(f, Tensor({3}, 0.5), 1e-5), 0.0);
}

TEST(FiniteDifference, SumOfExpAtZero) {
  ScalarFunction f = [](Tape&, Var x) { return sum(exp(x)); };
  EXPECT_LT(finite_difference_check(f, Tensor({6}, 0.0), 1e-5), 1e-6);
}

TEST(FiniteDifference, RejectsNonPositiveStepAndNonFiniteValues) {
  ScalarFunction f = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(finite_difference_check(f, Tensor({2}), 0.0), std::invalid_argument);
  ScalarFunction bad = [](Tape&, Var x) { return sum(log(x)); };
  EXPECT_THROW(finite_difference_check(bad, Tensor({2}, 0.0), 1e-5), NumericalError);
}

// Every primitive, 100 random instances with entries in [-1, 1]. Each is
// reduced to a scalar through a fixed random weighting so that no gradient
// entry is trivially uniform.
struct PrimitiveCase {
  std::string name;
  Shape input;
  std::function<Var(Tape&, Var, std::mt19937_64&)> build;
};

class PrimitiveGradient : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradient, MatchesCentralDifferences) {
  const PrimitiveCase& c = GetParam();
  std::mt19937_64 rng(std::hash<std::string>{}(c.name));
  for (int instance = 0; instance < 100; ++instance) {
    const std::uint64_t seed = rng();
    const Tensor point = uniform_tensor(c.input, rng);
    ScalarFunction f = [&](Tape& t, Var x) {
      std::mt19937_64 local(seed);
      Var y = c.build(t, x, local);
      return sum(y * t.constant(uniform_tensor(y.shape(), local)));
    };
    ASSERT_LT(finite_difference_check(f, point, 1e-5), 1e-3) << c.name << " instance " << instance;
  }
}

std::vector<PrimitiveCase> primitive_cases() {
  using R = std::mt19937_64;
  return {
      {"matmul_left", {3, 4}, [](Tape& t, Var x, R& r) { return matmul(x, t.constant(uniform_tensor({4, 2}, r))); }},
      {"matmul_right", {4, 2}, [](Tape& t, Var x, R& r) { return matmul(t.constant(uniform_tensor({3, 4}, r)), x); }},
      {"bmm", {2, 3, 4}, [](Tape& t, Var x, R& r) { return bmm(x, t.constant(uniform_tensor({2, 4, 2}, r))); }},
      {"bmm_right", {2, 4, 2}, [](Tape& t, Var x, R& r) { return bmm(t.constant(uniform_tensor({2, 3, 4}, r)), x); }},
      {"transpose", {2, 3, 4}, [](Tape&, Var x, R&) { return transpose(x); }},
      {"conv2d_input", {2, 2, 7, 7}, [](Tape& t, Var x, R& r) { return conv2d(x, t.constant(uniform_tensor({3, 2, 3, 3}, r)), 2); }},
      {"conv2d_weight", {3, 2, 3, 3}, [](Tape& t, Var w, R& r) { return conv2d(t.constant(uniform_tensor({2, 2, 7, 7}, r)), w, 2); }},
      {"deconv2d_input", {2, 2, 3, 3}, [](Tape& t, Var x, R& r) { return deconv2d(x, t.constant(uniform_tensor({2, 3, 3, 3}, r)), 2); }},
      {"deconv2d_weight", {2, 3, 3, 3}, [](Tape& t, Var w, R& r) { return deconv2d(t.constant(uniform_tensor({2, 2, 3, 3}, r)), w, 2); }},
      {"add", {3, 3}, [](Tape& t, Var x, R& r) { return x + t.constant(uniform_tensor({3, 3}, r)); }},
      {"sub", {3, 3}, [](Tape& t, Var x, R& r) { return t.constant(uniform_tensor({3, 3}, r)) - x; }},
      {"mul", {3, 3}, [](Tape& t, Var x, R& r) { return x * t.constant(uniform_tensor({3, 3}, r)); }},
      {"mul_self", {5}, [](Tape&, Var x, R&) { return x * x; }},
      {"add_bias", {4, 3}, [](Tape& t, Var b, R& r) { return add_bias(t.constant(uniform_tensor({2, 4, 3}, r)), reshape(slice(b, 0, 0, 1), {3})); }},
      {"add_channel_bias", {3}, [](Tape& t, Var b, R& r) { return add_channel_bias(t.constant(uniform_tensor({2, 3, 2, 2}, r)), b); }},
      {"mul_batch", {3, 2, 2}, [](Tape& t, Var x, R& r) { return mul_batch(x, t.constant(uniform_tensor({3}, r))); }},
      {"mul_batch_scale", {3}, [](Tape& t, Var s, R& r) { return mul_batch(t.constant(uniform_tensor({3, 4}, r)), s); }},
      {"sigmoid", {6}, [](Tape&, Var x, R&) { return sigmoid(scale(x, 3.0)); }},
      {"tanh", {6}, [](Tape&, Var x, R&) { return tanh(x); }},
      {"exp", {6}, [](Tape&, Var x, R&) { return exp(x); }},
      {"log", {6}, [](Tape&, Var x, R&) { return log(add_scalar(x, 2.0)); }},
      {"square", {6}, [](Tape&, Var x, R&) { return square(x); }},
      {"relu", {6}, [](Tape&, Var x, R&) { return relu(x); }},
      {"clamp", {6}, [](Tape&, Var x, R&) { return clamp(x, -0.5, 0.5); }},
      {"sum", {2, 3}, [](Tape&, Var x, R&) { return sum(square(x)); }},
      {"sum_rows", {3, 2, 2}, [](Tape&, Var x, R&) { return sum_rows(x); }},
      {"slice", {4, 5}, [](Tape&, Var x, R&) { return slice(x, 1, 1, 3); }},
      {"concat", {2, 3}, [](Tape& t, Var x, R& r) { return concat({square(x), t.constant(uniform_tensor({2, 2}, r)), x}, 1); }},
      {"reshape", {2, 6}, [](Tape&, Var x, R&) { return reshape(x, {3, 4}); }},
      {"gaussian_filterbank", {3, 3}, [](Tape&, Var p, R&) {
         Var center = reshape(add_scalar(scale(slice(p, 1, 0, 1), 3.0), 4.0), {3});
         Var delta = reshape(exp(slice(p, 1, 1, 1)), {3});
         Var var = reshape(exp(slice(p, 1, 2, 1)), {3});
         return gaussian_filterbank(center, delta, var, 4, 9);
       }},
  };
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient, ::testing::ValuesIn(primitive_cases()),
                         [](const auto& info) { return info.param.name; });

TEST(Properties, BackwardIsLinear) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor point = uniform_tensor({7}, rng);
    const double a = std::uniform_real_distribution<double>(-2, 2)(rng);
    const double b = std::uniform_real_distribution<double>(-2, 2)(rng);
    auto f = [](Var x) { return sum(sigmoid(x) * exp(x)); };
    auto g = [](Var x) { return sum(tanh(square(x))); };

    Tape t1;
    Var x1 = t1.leaf(point);
    const Tensor combined = t1.backward(f(x1) * a + g(x1) * b)[x1];
    Tape t2;
    Var x2 = t2.leaf(point);
    const Tensor gf = t2.backward(f(x2))[x2];
    Tape t3;
    Var x3 = t3.leaf(point);
    const Tensor gg = t3.backward(g(x3))[x3];
    for (std::size_t i = 0; i < point.size(); ++i) {
      EXPECT_NEAR(combined[i], a * gf[i] + b * gg[i], 1e-12);
    }
  }
}

TEST(Properties, ForwardAndBackwardAreBitDeterministic) {
  std::mt19937_64 rng(9);
  const Tensor w = uniform_tensor({5, 5}, rng), x = uniform_tensor({3, 5}, rng);
  auto run = [&] {
    Tape t;
    Var wv = t.leaf(w);
    Var y = sum(square(tanh(matmul(t.constant(x), wv))));
    return std::pair{y.value(), t.backward(y)[wv]};
  };
  const auto first = run();
  const auto second = run();
  EXPECT_TRUE(first.first == second.first);
  EXPECT_TRUE(first.second == second.second);
}

TEST(Properties, ReplayReproducesForwardValues) {
  std::mt19937_64 rng(13);
  Tape t;
  Var x = t.leaf(uniform_tensor({2, 1, 6, 6}, rng));
  Var w = t.leaf(uniform_tensor({3, 1, 2, 2}, rng));
  Var y = sum(sigmoid(conv2d(x, w, 2)));
  const double before = y.value().item();
  EXPECT_TRUE(t.replay());
  EXPECT_EQ(y.value().item(), before);

  t.assign(x, uniform_tensor({2, 1, 6, 6}, rng));
  EXPECT_FALSE(t.replay());
  EXPECT_NE(y.value().item(), before);
}

TEST(Properties, TapeIsTopologicallyOrdered) {
  Tape t;
  Var x = t.leaf(Tensor({3}, 1.0));
  Var y = sum(exp(x) * x + tanh(x));
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (std::size_t input : t.inputs(i)) EXPECT_LT(input, i);
  }
  EXPECT_EQ(y.id(), t.size() - 1);
}

TEST(Properties, ForwardStaysFiniteOnFiniteInputs) {
  std::mt19937_64 rng(21);
  Tape t;
  Var x = t.leaf(uniform_tensor({4, 8}, rng, -50.0, 50.0));
  Var y = sigmoid(x) + tanh(x) + exp(scale(x, 0.1));
  EXPECT_TRUE(y.value().all_finite());
}

}  // namespace
}  // namespace avae
