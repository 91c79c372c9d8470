#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dit/errors.hpp"
#include "dit/grad_check.hpp"
#include "dit/ops.hpp"

using namespace dit;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t key, double stddev = 1.0) {
  KeyedRng rng({key, 99});
  auto t = Tensor<double>::randn(std::move(shape), rng, stddev);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST(Tensor, ZeroExtentIsRejected) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Tensor, NegativeAxisAndItem) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.dim(-1), 4u);
  EXPECT_EQ(t.dim(0), 2u);
  EXPECT_THROW(t.dim(3), IndexError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_FLOAT_EQ(Tensor<float>::scalar(2.5f).item(), 2.5f);
}

TEST(Tensor, BackwardNeedsScalarTrackedRoot) {
  auto a = random_tensor({2, 2}, 1);
  EXPECT_THROW((a * a).backward(), ContractError);
  Tensor<double> c(Shape{1}, 1.0);
  EXPECT_THROW(c.backward(), ContractError);
}

TEST(Tensor, BackwardTwiceAccumulatesLeafGradients) {
  auto a = random_tensor({3}, 2);
  auto loss = sum(square(a));
  loss.backward();
  std::vector<double> once(a.grad().begin(), a.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(a.grad()[i], 2 * once[i]);
}

TEST(Tensor, SharedSubexpressionGradientsSum) {
  auto a = random_tensor({4}, 3);
  auto b = a * a;
  auto loss = sum(b + b);
  loss.backward();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a.grad()[i], 4 * a.data()[i], 1e-14);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  auto a = random_tensor({2}, 4);
  {
    NoGradGuard guard;
    auto b = a * a;
    EXPECT_FALSE(b.requires_grad());
    EXPECT_EQ(b.node()->inputs.size(), 0u);
  }
  EXPECT_TRUE((a * a).requires_grad());
}

TEST(Tensor, DetachAndCloneShareNoHistory) {
  auto a = random_tensor({2}, 5);
  auto b = (a * a).detach();
  EXPECT_FALSE(b.requires_grad());
  auto c = a.clone();
  c.data()[0] = 42.0;
  EXPECT_NE(a.data()[0], 42.0);
  EXPECT_TRUE(c.requires_grad());
}

TEST(Tensor, FiniteChecksFlagNaN) {
  const bool previous = finite_checks();
  set_finite_checks(true);
  Tensor<double> x(Shape{2}, std::vector<double>{1.0, -1.0});
  EXPECT_THROW(dit::log(x), NumericError);
  set_finite_checks(previous);
}

TEST(Ops, BroadcastShapes) {
  EXPECT_EQ(broadcast_shape({2, 1, 4}, {3, 1}), (Shape{2, 3, 4}));
  EXPECT_EQ(broadcast_shape({5}, {1}), (Shape{5}));
  EXPECT_THROW(broadcast_shape({2, 3}, {4}), ShapeError);
}

TEST(Ops, BroadcastAddValuesAndGradients) {
  auto a = random_tensor({2, 3}, 6);
  auto b = random_tensor({3}, 7);
  auto c = a + b;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(c.data()[i * 3 + j], a.data()[i * 3 + j] + b.data()[j]);
  }
  sum(c).backward();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(b.grad()[j], 2.0);
}

TEST(Ops, MatmulMatchesTripleLoop) {
  auto a = random_tensor({3, 5, 4}, 8);
  auto b = random_tensor({4, 6}, 9);
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 5, 6}));
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 6; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.data()[(n * 5 + i) * 4 + k] * b.data()[k * 6 + j];
        EXPECT_NEAR(c.data()[(n * 5 + i) * 6 + j], acc, 1e-13);
      }
    }
  }
  EXPECT_THROW(matmul(a, random_tensor({5, 2}, 1)), ShapeError);
}

TEST(Ops, BatchedMatmulMatchesTripleLoop) {
  auto a = random_tensor({2, 3, 4}, 10);
  auto b = random_tensor({2, 4, 2}, 11);
  auto c = matmul(a, b);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.data()[(n * 3 + i) * 4 + k] * b.data()[(n * 4 + k) * 2 + j];
        EXPECT_NEAR(c.data()[(n * 3 + i) * 2 + j], acc, 1e-13);
      }
    }
  }
}

TEST(Ops, MatmulGradientOfSumProduct) {
  auto a = random_tensor({3, 4}, 12);
  auto b = random_tensor({4, 2}, 13);
  Tensor<double> leaves[] = {a, b};
  const auto r = grad_check([&] { return sum(matmul(leaves[0], leaves[1])); }, leaves);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Ops, PermuteAndReshape) {
  std::vector<double> v(24);
  std::iota(v.begin(), v.end(), 0.0);
  Tensor<double> x(Shape{2, 3, 4}, v);
  auto p = permute(x, {2, 0, 1});
  ASSERT_EQ(p.shape(), (Shape{4, 2, 3}));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p.data()[(k * 2 + i) * 3 + j], v[(i * 3 + j) * 4 + k]);
    }
  }
  EXPECT_THROW(reshape(x, Shape{5, 5}), ShapeError);
  EXPECT_THROW(permute(x, {0, 0, 1}), ShapeError);
}

TEST(Ops, ConcatAndSliceRoundTrip) {
  auto a = random_tensor({2, 3}, 14);
  auto b = random_tensor({2, 2}, 15);
  const Tensor<double> parts[] = {a, b};
  auto c = concat<double>(parts, 1);
  ASSERT_EQ(c.shape(), (Shape{2, 5}));
  auto back = slice(c, 1, 3, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(back.data()[i], b.data()[i]);
  EXPECT_THROW(slice(c, 1, 4, 2), IndexError);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  auto x = random_tensor({3, 5}, 16, 3.0);
  auto s = softmax_lastdim(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double acc = 0;
    for (std::size_t j = 0; j < 5; ++j) acc += s.data()[r * 5 + j];
    EXPECT_NEAR(acc, 1.0, 1e-14);
  }
}

TEST(Ops, LayerNormStatistics) {
  auto x = random_tensor({4, 16}, 17, 5.0);
  auto y = layer_norm(x, 1e-6);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y.data()[r * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += (y.data()[r * 16 + j] - m) * (y.data()[r * 16 + j] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-5);
  }
}

TEST(Ops, EmbeddingRejectsOutOfRangeRows) {
  auto table = random_tensor({4, 3}, 18);
  const std::int64_t ok[] = {0, 3, 3};
  EXPECT_EQ(embedding(table, std::span<const std::int64_t>(ok)).shape(), (Shape{3, 3}));
  const std::int64_t bad[] = {4};
  EXPECT_THROW(embedding(table, std::span<const std::int64_t>(bad)), IndexError);
}

TEST(Ops, AbsGradientAtZeroIsZero) {
  Tensor<double> x(Shape{1}, 0.0);
  x.set_requires_grad(true);
  sum(dit::abs(x)).backward();
  EXPECT_EQ(x.grad()[0], 0.0);
}

// Every differentiable primitive against central differences on small inputs.
struct PrimitiveCase {
  const char* name;
  std::function<Tensor<double>(const Tensor<double>&, const Tensor<double>&)> f;
  Shape a, b;
};

void PrintTo(const PrimitiveCase& c, std::ostream* os) { *os << c.name; }

class PrimitiveGrad : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const auto& c = GetParam();
  auto a = random_tensor(c.a, 21);
  auto b = random_tensor(c.b, 22);
  // Random projection so the loss is not symmetric in the outputs.
  Tensor<double> leaves[] = {a, b};
  auto probe = c.f(a, b);
  auto w = random_tensor(probe.shape(), 23);
  w.set_requires_grad(false);
  const auto r = grad_check([&] { return sum(c.f(leaves[0], leaves[1]) * w); }, leaves);
  EXPECT_LT(r.max_rel_error, 1e-5) << c.name;
}

INSTANTIATE_TEST_SUITE_P(
    AllPrimitives, PrimitiveGrad,
    ::testing::Values(
        PrimitiveCase{"add", [](auto& a, auto& b) { return a + b; }, {4, 4, 8}, {4, 8}},
        PrimitiveCase{"sub", [](auto& a, auto& b) { return a - b; }, {4, 1, 8}, {4, 8}},
        PrimitiveCase{"mul", [](auto& a, auto& b) { return a * b; }, {4, 4, 8}, {1, 8}},
        PrimitiveCase{"scale", [](auto& a, auto&) { return scale(a, -1.7); }, {4, 8}, {1}},
        PrimitiveCase{"add_scalar", [](auto& a, auto&) { return add_scalar(a, 0.3); }, {4, 8}, {1}},
        PrimitiveCase{"matmul", [](auto& a, auto& b) { return matmul(a, b); }, {2, 4, 8}, {8, 4}},
        PrimitiveCase{"linear", [](auto& a, auto& b) { return linear(a, b, reshape(slice(b, 0, 0, 1), Shape{4})); }, {4, 4}, {4, 4}},
        PrimitiveCase{"reshape", [](auto& a, auto&) { return reshape(a, Shape{8, 4}); }, {4, 8}, {1}},
        PrimitiveCase{"permute", [](auto& a, auto&) { return permute(a, {2, 0, 1}); }, {2, 3, 4}, {1}},
        PrimitiveCase{"transpose", [](auto& a, auto&) { return transpose(a, -1, -2); }, {2, 3, 4}, {1}},
        PrimitiveCase{"concat", [](auto& a, auto& b) { const Tensor<double> p[] = {a, b}; return concat<double>(p, 0); },
                      {2, 4}, {3, 4}},
        PrimitiveCase{"slice", [](auto& a, auto&) { return slice(a, -1, 1, 2); }, {3, 4}, {1}},
        PrimitiveCase{"sum_axis", [](auto& a, auto&) { return sum_axis(a, 1, true); }, {3, 4, 2}, {1}},
        PrimitiveCase{"mean_axis", [](auto& a, auto&) { return mean_axis(a, 0); }, {3, 4}, {1}},
        PrimitiveCase{"mean", [](auto& a, auto&) { return mean(a); }, {3, 4}, {1}},
        PrimitiveCase{"layer_norm", [](auto& a, auto&) { return layer_norm(a, 1e-6); }, {4, 8}, {1}},
        PrimitiveCase{"gelu_tanh", [](auto& a, auto&) { return gelu_tanh(a); }, {4, 8}, {1}},
        PrimitiveCase{"silu", [](auto& a, auto&) { return silu(a); }, {4, 8}, {1}},
        PrimitiveCase{"tanh", [](auto& a, auto&) { return dit::tanh(a); }, {4, 8}, {1}},
        PrimitiveCase{"exp", [](auto& a, auto&) { return dit::exp(a); }, {4, 8}, {1}},
        PrimitiveCase{"log", [](auto& a, auto&) { return dit::log(add_scalar(square(a), 0.5)); }, {4, 8}, {1}},
        PrimitiveCase{"square", [](auto& a, auto&) { return square(a); }, {4, 8}, {1}},
        PrimitiveCase{"abs", [](auto& a, auto&) { return dit::abs(a); }, {4, 8}, {1}},
        PrimitiveCase{"softmax", [](auto& a, auto&) { return softmax_lastdim(a); }, {4, 8}, {1}},
        PrimitiveCase{"embedding",
                      [](auto& a, auto&) {
                        static const std::int64_t rows[] = {2, 0, 2, 3};
                        return embedding(a, std::span<const std::int64_t>(rows));
                      },
                      {4, 8}, {1}}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(GradCheck, QuadraticIsExactUnderCentralDifferences) {
  const auto point = random_tensor({4, 4}, 30);
  const double err = grad_check([](const Tensor<double>& x) { return sum(square(x)); }, point);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // d/dx of x * stopgrad(x) is reported as stopgrad(x), but the function is x^2.
  const auto point = random_tensor({3}, 31);
  const double err = grad_check([](const Tensor<double>& x) { return sum(x * x.detach()); }, point);
  EXPECT_GT(err, 0.1);
}

TEST(GradCheck, LeavesAreRestored) {
  auto a = random_tensor({5}, 32);
  std::vector<double> before(a.data().begin(), a.data().end());
  Tensor<double> leaves[] = {a};
  grad_check([&] { return sum(dit::exp(leaves[0])); }, leaves);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(a.data()[i], before[i]);
}

TEST(GradCheck, AbsNearItsKinkIsADocumentedFailure) {
  // Within one step of the kink the central difference straddles it.
  Tensor<double> point(Shape{3}, std::vector<double>{0.5, 1e-9, -2.0});
  EXPECT_GT(grad_check([](const Tensor<double>& x) { return sum(dit::abs(x)); }, point), 0.5);
  // Exactly at zero both estimates are 0 by symmetry.
  Tensor<double> at_zero(Shape{2}, std::vector<double>{0.0, 1.0});
  EXPECT_LT(grad_check([](const Tensor<double>& x) { return sum(dit::abs(x)); }, at_zero), 1e-8);
}

TEST(GradCheck, FourPointStencilIsExactForCubics) {
  auto x = random_tensor({4}, 33);
  Tensor<double> leaves[] = {x};
  const auto cubic = [&] { return sum(leaves[0] * leaves[0] * leaves[0]); };
  EXPECT_GT(grad_check(cubic, leaves, 1e-2).max_rel_error, 1e-6);
  EXPECT_LT(grad_check(cubic, leaves, 1e-2, Stencil::kFourPoint).max_rel_error, 1e-10);
}

TEST(Ops, MatmulHandExample) {
  Tensor<double> a(Shape{2, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> b(Shape{2, 2}, std::vector<double>{5, 6, 7, 8});
  const auto c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
  Tensor<double> eye(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  const auto same = matmul(a, eye);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(same.data()[i], a.data()[i]);
}

TEST(Ops, LayerNormHandExamples) {
  Tensor<double> x(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 4, 4});
  const auto y = layer_norm(slice(x, 0, 0, 1), 0.0);
  EXPECT_NEAR(y.data()[0], -std::sqrt(1.5), 1e-12);
  EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
  EXPECT_NEAR(y.data()[2], std::sqrt(1.5), 1e-12);
  const auto c = layer_norm(slice(x, 0, 1, 1), 1e-6);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, ActivationScalarOracles) {
  Tensor<double> x(Shape{4}, std::vector<double>{0.0, 1.0, 30.0, -30.0});
  const auto g = gelu_tanh(x);
  const long double k = std::sqrt(2.0L / 3.14159265358979323846264338327950288L);
  const long double oracle = 0.5L * (1.0L + std::tanh(k * (1.0L + 0.044715L)));
  EXPECT_EQ(g.data()[0], 0.0);
  EXPECT_NEAR(g.data()[1], static_cast<double>(oracle), 1e-15);
  EXPECT_NEAR(g.data()[2], 30.0, 1e-12);
  EXPECT_NEAR(g.data()[3], 0.0, 1e-12);
  const auto s = silu(x);
  EXPECT_EQ(s.data()[0], 0.0);
  EXPECT_NEAR(s.data()[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(s.data()[1], 0.7311, 1e-4);
}

TEST(Ops, SoftmaxExamples) {
  Tensor<double> x(Shape{3, 2}, std::vector<double>{0.0, std::log(3.0), 2.0, 2.0, 100.0, 100.0 + std::log(3.0)});
  const auto s = softmax_lastdim(x);
  EXPECT_NEAR(s.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.data()[1], 0.75, 1e-15);
  EXPECT_EQ(s.data()[2], 0.5);
  EXPECT_NEAR(s.data()[4], 0.25, 1e-15);
  EXPECT_NEAR(s.data()[5], 0.75, 1e-15);
}

TEST(Ops, SiluGradientTightTolerance) {
  const auto point = random_tensor({4, 4}, 34);
  EXPECT_LT(grad_check([](const Tensor<double>& x) { return sum(silu(x)); }, point), 1e-6);
}

TEST(Ops, FloatAndDoubleAgree) {
  auto d = random_tensor({3, 8}, 35);
  auto f = tensor_cast<float>(d);
  const auto yd = layer_norm(gelu_tanh(d), 1e-6);
  const auto yf = layer_norm(gelu_tanh(f), 1e-6);
  for (std::size_t i = 0; i < yd.numel(); ++i) EXPECT_NEAR(yf.data()[i], yd.data()[i], 1e-5);
}

TEST(Ops, DeterministicBits) {
  auto a = random_tensor({4, 8}, 36);
  auto b = random_tensor({8, 8}, 37);
  const auto y1 = softmax_lastdim(matmul(a, b));
  const auto y2 = softmax_lastdim(matmul(a, b));
  EXPECT_TRUE(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}
