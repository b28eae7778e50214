#include <gtest/gtest.h>

#include <omp.h>

#include <array>
#include <cmath>
#include <limits>
#include <random>

#include "peft/kernels.hpp"

using namespace peft;
namespace k = peft::kernels;

namespace {

std::vector<Scalar> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(normal(rng));
  return v;
}

// Straight triple loop, accumulating over p from 0 like the kernels do.
std::vector<Scalar> naive(const k::GemmShape& s, const std::vector<Scalar>& a, const std::vector<Scalar>& b) {
  std::vector<Scalar> c(s.m * s.n, 0);
  for (std::size_t i = 0; i < s.m; ++i)
    for (std::size_t j = 0; j < s.n; ++j) {
      Scalar acc = 0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const Scalar x = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
        const Scalar y = s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
        acc += x * y;
      }
      c[i * s.n + j] = acc;
    }
  return c;
}

class ThreadCount : public ::testing::TestWithParam<int> {};

}  // namespace

TEST_P(ThreadCount, GemmParallelMatchesSerialBitForBit) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(GetParam());
  std::mt19937_64 rng(1);
  for (const auto& [m, n, kk] : std::vector<std::array<std::size_t, 3>>{
           {1, 1, 1}, {3, 5, 7}, {17, 33, 9}, {64, 64, 64}, {130, 70, 40}, {257, 129, 31}}) {
    for (int t = 0; t < 4; ++t) {
      const k::GemmShape s{m, n, kk, (t & 1) != 0, (t & 2) != 0};
      const auto a = random_values(m * kk, rng);
      const auto b = random_values(kk * n, rng);
      std::vector<Scalar> par(m * n, -1), ser(m * n, -2);
      k::gemm(s, a, b, par);
      k::serial::gemm(s, a, b, ser);
      EXPECT_EQ(par, ser) << m << "x" << n << "x" << kk << " t" << t;
      EXPECT_EQ(ser, naive(s, a, b)) << m << "x" << n << "x" << kk << " t" << t;
    }
  }
  omp_set_num_threads(saved);
}

TEST_P(ThreadCount, SoftmaxParallelMatchesSerialBitForBit) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(GetParam());
  std::mt19937_64 rng(2);
  const std::size_t rows = 300, n = 257;
  auto x = random_values(rows * n, rng);
  x[5] = -std::numeric_limits<Scalar>::infinity();
  std::vector<Scalar> par(rows * n), ser(rows * n);
  k::softmax_rows(rows, n, x, par);
  k::serial::softmax_rows(rows, n, x, ser);
  EXPECT_EQ(par, ser);
  EXPECT_EQ(ser[5], 0);
  omp_set_num_threads(saved);
}

INSTANTIATE_TEST_SUITE_P(Kernels, ThreadCount, ::testing::Values(1, 2, 4));
