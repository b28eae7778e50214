#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "peft/errors.hpp"
#include "peft/gradcheck.hpp"
#include "peft/graph.hpp"
#include "peft/ops.hpp"
#include "test_util.hpp"

using namespace peft;
using peft::test::max_abs_diff;
using peft::test::random_tensor;

TEST(Tensor, ShapeAndDataAgree) {
  const Tensor t = Tensor::zeros({3, 4});
  EXPECT_EQ(t.numel(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, FrozenTensorNeverAccumulatesGrad) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}}, true);
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  Graph g;
  Tensor loss;
  {
    auto rec = g.record();
    loss = sum(matmul(a, b));
  }
  g.backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(Matmul, IdentityCase) {
  const Tensor c = matmul(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.at(0, 0), 3);
  EXPECT_EQ(c.at(0, 1), 4);
  EXPECT_EQ(c.at(1, 0), 5);
  EXPECT_EQ(c.at(1, 1), 6);
}

TEST(Matmul, RowTimesColumn) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c.item(), 11);
}

TEST(Matmul, InnerExtentMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({4, 4}, rng, 1.0, true);
    Tensor b = random_tensor({4, 4}, rng);
    GradCheckOptions opt;
    opt.tolerance = 1e-6;
    const auto report = grad_check([&] { return sum(matmul(a, b)); }, {{"a", a}}, opt);
    EXPECT_TRUE(report.passed) << "trial " << trial << " worst " << report.worst;
  }
}

TEST(Softmax, UniformForEqualInputs) {
  const Tensor y = softmax(Tensor::from({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), 1.0 / 3, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Tensor y = softmax(Tensor::from({3}, {1000, 0, 0}));
  EXPECT_NEAR(y.at(0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(1), 0.0, 1e-12);
  EXPECT_NEAR(y.at(2), 0.0, 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(3);
  const Tensor y = softmax(random_tensor({5, 7}, rng, 4.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += y.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, MaskedEntriesGetZeroAndNanThrows) {
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  const Tensor y = softmax(Tensor::from({3}, {1, -inf, 1}));
  EXPECT_EQ(y.at(1), 0);
  EXPECT_NEAR(y.at(0), 0.5, 1e-15);
  EXPECT_THROW(softmax(Tensor::from({2}, {std::nan(""), 0})), NumericError);
}

TEST(Softmax, JacobianVectorProductMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({8}, rng, 1.0, true);
    const Tensor v = random_tensor({8}, rng);
    GradCheckOptions opt;
    opt.tolerance = 1e-6;
    const auto report = grad_check([&] { return sum(mul(softmax(x), v)); }, {{"x", x}}, opt);
    EXPECT_TRUE(report.passed) << "worst " << report.worst;
  }
}

TEST(Concat, PrefixRowsWidenScoreBlock) {
  const std::size_t k = 3, m = 4, d = 5;
  const Tensor c = concat(Tensor::zeros({k, d}), Tensor::zeros({m + 1, d}), 0);
  EXPECT_EQ(c.shape(), (Shape{k + m + 1, d}));
}

TEST(Concat, EmptyOperandIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({3, 2}, rng);
  EXPECT_TRUE(test::bit_equal(concat(x, Tensor::zeros({0, 2}), 0), x));
}

TEST(Concat, SumBackwardGivesOnes) {
  Tensor a = Tensor::zeros({2, 3}, true);
  Tensor b = Tensor::zeros({4, 3}, true);
  Graph g;
  Tensor loss;
  {
    auto rec = g.record();
    loss = sum(concat(a, b, 0));
  }
  g.backward(loss);
  for (Scalar v : a.grad()) EXPECT_EQ(v, 1);
  for (Scalar v : b.grad()) EXPECT_EQ(v, 1);
}

TEST(Concat, SliceRoundTrip) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({3, 2}, rng);
  const Tensor c = concat(a, b, 1);
  EXPECT_TRUE(test::bit_equal(slice(c, 1, 0, 4), a));
  EXPECT_TRUE(test::bit_equal(slice(c, 1, 4, 6), b));
  EXPECT_THROW(concat(a, Tensor::zeros({2, 4}), 1), DimensionError);
}

TEST(Elementwise, TanhOfZeroIsZero) { EXPECT_EQ(tanh(Tensor::scalar(0)).item(), 0); }

TEST(CrossEntropy, ConfidentCorrectLogitsTendToZero) {
  const std::vector<TokenId> target{1};
  const std::vector<std::uint8_t> mask{1};
  double prev = 1e9;
  for (double m : {1.0, 10.0, 100.0}) {
    const double l = cross_entropy(Tensor::matrix({{0, m, 0}}), target, mask).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-40);
  const std::vector<std::uint8_t> none{0};
  EXPECT_THROW(cross_entropy(Tensor::matrix({{0, 1, 0}}), target, none), DataError);
}

// Every differentiable op on random inputs against central differences.
TEST(Ops, AllGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng, 1.0, true);
    Tensor b = random_tensor({4, 5}, rng, 1.0, true);
    Tensor c = random_tensor({3, 5}, rng, 1.0, true);
    Tensor w = random_tensor({5}, rng, 1.0, true);
    Tensor s = random_tensor({1}, rng, 1.0, true);
    const std::vector<std::size_t> pos{0, 3, 7};
    const std::vector<TokenId> ids{2, 0, 2};
    const std::vector<TokenId> targets{1, 4, 2};
    const std::vector<std::uint8_t> mask{1, 0, 1};
    auto f = [&] {
      Tensor h = add(matmul(a, b), c);
      h = rmsnorm(h, w, 1e-5);
      h = mul(silu(h), tanh(scale_by(h, s)));
      h = causal_mask(matmul_nt(h, transpose(transpose(c))), 1);
      h = softmax(h);
      Tensor r = rope(concat(matmul(h, c), slice(c, 1, 1, 4), 1), pos, 4, 10000);
      r = add(gather_rows(r, ids), scale(r, 0.5));
      return add(cross_entropy(r, targets, mask), sum(scale(r, 0.01)));
    };
    const auto report = grad_check(f, {{"a", a}, {"b", b}, {"c", c}, {"w", w}, {"s", s}});
    EXPECT_TRUE(report.passed) << "trial " << trial << " worst " << report.worst;
  }
}

TEST(GradCheck, IndependentParameterHasExactlyZeroGradient) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor({3, 3}, rng, 1.0, true);
  Tensor unused = random_tensor({2, 2}, rng, 1.0, true);
  const auto report = grad_check([&] { return sum(tanh(a)); }, {{"a", a}, {"unused", unused}});
  EXPECT_TRUE(report.passed);
  EXPECT_EQ(report.entries[1].max_abs_grad, 0.0);
  EXPECT_EQ(report.entries[1].max_rel_error, 0.0);
}

TEST(Graph, BackwardVisitsOpsInReverseOrder) {
  Tensor x = Tensor::scalar(0.3, true);
  Graph g;
  Tensor loss;
  {
    auto rec = g.record();
    loss = sum(tanh(scale(x, 2)));
  }
  const std::size_t n = g.size();
  ASSERT_EQ(n, 3u);
  g.backward(loss);
  EXPECT_EQ(g.visit_order(), (std::vector<long>{2, 1, 0}));
}

TEST(Graph, SecondBackwardThrows) {
  Tensor x = Tensor::scalar(0.3, true);
  Graph g;
  Tensor loss;
  {
    auto rec = g.record();
    loss = sum(tanh(x));
  }
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
}

TEST(Graph, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::scalar(0.3, true);
  Graph g;
  auto rec = g.record();
  {
    NoGradGuard guard;
    const Tensor y = tanh(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_EQ(g.size(), 0u);
}
