#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "kdnas/grad_check.hpp"
#include "kdnas/tensor.hpp"
#include "test_util.hpp"

namespace kdnas {
namespace {

using testing::random_matrix;

TEST(Matmul, IdentityTimesIdentity) {
  auto c = matmul(Tensor::identity(2), Tensor::identity(2));
  EXPECT_TRUE(bit_equal(c, Tensor::identity(2)));
}

TEST(Matmul, HandArithmetic) {
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto b = Tensor::matrix(2, 1, {1, 1});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 3.0);
  EXPECT_EQ(c[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(1);
  auto a = random_matrix(rng, 3, 4);
  auto b = random_matrix(rng, 4, 2, false);
  sum(matmul(a, b)).backward();
  const auto g = a.grad();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      const double expected = b.at(p, 0) + b.at(p, 1);
      EXPECT_NEAR(g[i * 4 + p], expected, 1e-14);
    }
  auto report = grad_check([&] { return sum(matmul(a, b)); }, {a});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Softmax, SymmetricRow) {
  auto y = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  auto y = softmax_rows(Tensor::matrix(1, 2, {1000, 0}));
  EXPECT_TRUE(std::isfinite(y[0]) && std::isfinite(y[1]));
  EXPECT_NEAR(y[0], 1.0, 1e-15);
  EXPECT_NEAR(y[1], 0.0, 1e-15);
}

TEST(Softmax, ClosedForm) {
  auto y = softmax_rows(Tensor::matrix(1, 2, {std::numbers::ln2, 0}));
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, NanIsNumericError) {
  EXPECT_THROW(softmax_rows(Tensor::matrix(1, 2, {std::nan(""), 0})), NumericError);
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto y = softmax_rows(random_matrix(rng, 5, 9, false, 30.0));
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GE(y.at(i, j), 0.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Activation, Origin) {
  auto zero = Tensor::matrix(1, 1, {0.0});
  for (auto a : kAllActivations) EXPECT_EQ(activation(a, zero)[0], 0.0);
}

TEST(Activation, Relu) {
  auto y = activation(Activation::relu, Tensor::matrix(1, 2, {-3, 3}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Activation, TabulatedValuesAtOne) {
  auto one = Tensor::matrix(1, 1, {1.0});
  // Phi(1) and sigma(1) to 15 digits.
  EXPECT_NEAR(activation(Activation::gelu, one)[0], 0.841344746068543, 1e-14);
  EXPECT_NEAR(activation(Activation::silu, one)[0], 0.731058578630005, 1e-14);
}

TEST(Activation, UnknownKindIsConfigError) {
  EXPECT_THROW(activation("tanh", Tensor::matrix(1, 1, {0.0})), ConfigError);
}

TEST(Mse, IdentityIsExactlyZero) {
  std::mt19937_64 rng(3);
  auto x = random_matrix(rng, 4, 3);
  EXPECT_EQ(mse(x, x).item(), 0.0);
}

TEST(Mse, HandArithmetic) {
  EXPECT_EQ(mse(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {1, 1})).item(), 1.0);
}

TEST(Mse, ClosedFormGradient) {
  std::mt19937_64 rng(4);
  auto p = random_matrix(rng, 4, 3);
  auto t = random_matrix(rng, 4, 3, false);
  mse(p, t).backward();
  const auto g = p.grad();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(g[i], 2.0 * (p[i] - t[i]) / 12.0, 1e-15);
}

TEST(Mse, ShapeMismatch) {
  EXPECT_THROW(mse(Tensor::zeros({2, 2}), Tensor::zeros({4, 1})), DimensionError);
}

TEST(CrossEntropy, PointMassAgainstUniform) {
  auto t = Tensor::matrix(2, 2, {1, 0, 1, 0});
  auto p = Tensor::matrix(2, 2, {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(row_cross_entropy(t, p).item(), std::numbers::ln2, 1e-11);
}

TEST(CrossEntropy, GibbsInequality) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto target = softmax_rows(random_matrix(rng, 3, 4, false));
    auto other = softmax_rows(random_matrix(rng, 3, 4, false));
    const double self = row_cross_entropy(target, target).item();
    EXPECT_GE(self, 0.0);
    EXPECT_LE(self, row_cross_entropy(target, other).item());
  }
}

TEST(CrossEntropy, NonStochasticRowsRejected) {
  auto bad = Tensor::matrix(1, 2, {0.7, 0.7});
  auto ok = Tensor::matrix(1, 2, {0.5, 0.5});
  EXPECT_THROW(row_cross_entropy(bad, ok), ContractViolation);
  EXPECT_THROW(row_cross_entropy(ok, bad), ContractViolation);
}

TEST(CrossEntropy, GradientThroughSoftmaxMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto target = softmax_rows(random_matrix(rng, 3, 4, false));
  auto logits = random_matrix(rng, 3, 4);
  auto report = grad_check([&] { return row_cross_entropy(target, softmax_rows(logits)); }, {logits});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto y = normalize_rows(random_matrix(rng, 6, 16, false, 5.0));
    for (std::size_t i = 0; i < 6; ++i) {
      double m = 0, v = 0;
      for (std::size_t j = 0; j < 16; ++j) m += y.at(i, j);
      m /= 16;
      for (std::size_t j = 0; j < 16; ++j) v += (y.at(i, j) - m) * (y.at(i, j) - m);
      v /= 16;
      EXPECT_NEAR(m, 0.0, 1e-9);
      EXPECT_NEAR(v, 1.0, 1e-6);
    }
  }
}

TEST(GradCheck, ConstantFunctionHasZeroGradient) {
  auto x = Tensor::matrix(2, 2, {1, 2, 3, 4}, true);
  auto report = grad_check([&] { return Tensor::scalar(3.0); }, {x});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.max_abs_error, 0.0);
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, MseOnRandomTensors) {
  std::mt19937_64 rng(9);
  auto a = random_matrix(rng, 4, 3);
  auto b = random_matrix(rng, 4, 3);
  auto report = grad_check([&] { return mse(a, b); }, {a, b}, 1e-5, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

// mse(a a, b) is quartic in a, so the five-point stencil is exact up to roundoff.
TEST(GradCheck, FivePointStencilRemovesTruncationError) {
  std::mt19937_64 rng(10);
  auto a = random_matrix(rng, 3, 3);
  auto b = random_matrix(rng, 3, 3, false);
  auto f = [&] { return mse(matmul(a, a), b); };
  const auto three = grad_check(f, {a}, 1e-2, 1e-4);
  const auto five = grad_check(f, {a}, 1e-2, 1e-4, 1e-6, Stencil::central5);
  EXPECT_LT(five.max_abs_error, 1e-10);
  EXPECT_GT(three.max_abs_error, 1e3 * five.max_abs_error);
}

TEST(Backward, EveryTrackedTensorGetsSameShapeGradient) {
  std::mt19937_64 rng(10);
  auto a = random_matrix(rng, 3, 4);
  auto b = random_matrix(rng, 4, 5);
  auto mid = matmul(a, b);
  auto out = sum(softmax_rows(mid));
  out.backward();
  for (const Tensor* t : {&a, &b, &mid}) {
    EXPECT_TRUE(t->has_grad());
    EXPECT_EQ(t->grad().size(), t->size());
  }
}

// Randomized finite-difference property over every differentiable op.
class OpGradientProperty : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientProperty, MatchesCentralDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng) + 1;
  auto a = random_matrix(rng, m, k);
  auto b = random_matrix(rng, k, n);
  auto c = random_matrix(rng, m, n);
  auto row = random_matrix(rng, 1, n);
  auto target = softmax_rows(random_matrix(rng, m, n, false));
  std::vector<int> ids;
  std::uniform_int_distribution<int> id(0, static_cast<int>(k) - 1);
  for (std::size_t i = 0; i < m + 2; ++i) ids.push_back(id(rng));

  const auto check = [&](auto f, std::vector<Tensor> inputs, const char* what) {
    auto r = grad_check(f, std::move(inputs));
    EXPECT_TRUE(r.passed) << what << " rel err " << r.max_rel_error;
  };
  check([&] { return sum(hadamard(matmul(a, b), c)); }, {a, b, c}, "matmul");
  check([&] { return sum(hadamard(transpose(c), transpose(c))); }, {c}, "transpose");
  check([&] { return mse(add(c, c), sub(c, hadamard(c, c))); }, {c}, "add/sub/hadamard");
  check([&] { return sum(hadamard(add_row(c, row), mul_row(c, row))); }, {c, row}, "row broadcast");
  for (auto act : kAllActivations)
    check([&] { return sum(hadamard(activation(act, c), c)); }, {c}, "activation");
  check([&] { return sum(hadamard(sigmoid(c), tanh(c))); }, {c}, "sigmoid/tanh");
  check([&] { return sum(hadamard(softmax_rows(c), c)); }, {c}, "softmax");
  check([&] { return sum(hadamard(layer_norm(c, row, row), c)); }, {c, row}, "layer_norm");
  check([&] { return sum(hadamard(hcat({c, slice(c, 0, m, 1, n - 1)}), hcat({c, slice(c, 0, m, 0, n - 1)}))); }, {c},
        "slice/hcat");
  check([&] { return sum(hadamard(vcat({c, c}), vcat({c, softmax_rows(c)}))); }, {c}, "vcat");
  check([&] { return sum(hadamard(gather_rows(b, ids), gather_rows(b, ids))); }, {b}, "gather_rows");
  check([&] { return row_cross_entropy(target, softmax_rows(c)); }, {c}, "cross entropy");
  check([&] { return mse(matmul(a, b), c); }, {a, b, c}, "mse");
}

INSTANTIATE_TEST_SUITE_P(Randomized, OpGradientProperty, ::testing::Range(0, 20));

}  // namespace
}  // namespace kdnas
