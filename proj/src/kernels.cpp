#include "peft/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace peft::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 16;

inline Scalar a_at(const GemmShape& s, const Scalar* a, std::size_t i, std::size_t p) {
  return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;

// Register tile of C: rows [i, i + kMr), columns [j, j + kNr).
inline void tile(const GemmShape& s, const Scalar* a, const Scalar* b, Scalar* c, std::size_t i, std::size_t j) {
  Scalar acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < s.k; ++p) {
    const Scalar* brow = b + p * s.n + j;
    for (std::size_t r = 0; r < kMr; ++r) {
      const Scalar av = a_at(s, a, i + r, p);
      for (std::size_t q = 0; q < kNr; ++q) acc[r][q] += av * brow[q];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t q = 0; q < kNr; ++q) c[(i + r) * s.n + j + q] = acc[r][q];
}

// Rows [begin, end) of C = op(A)·B where B is k×n row-major. Each c[i][j]
// accumulates over p in ascending order starting from zero, whichever path
// computes it.
void gemm_rows(const GemmShape& s, const Scalar* a, const Scalar* b, Scalar* c, std::size_t begin,
               std::size_t end) {
  const std::size_t n = s.n;
  const std::size_t n_tiled = n - n % kNr;
  std::size_t i = begin;
  for (; i + kMr <= end; i += kMr)
    for (std::size_t j = 0; j < n_tiled; j += kNr) tile(s, a, b, c, i, j);
  // Leftover rows, and the leftover columns of tiled rows.
  for (std::size_t r = begin; r < end; ++r) {
    const std::size_t j0 = r < i ? n_tiled : 0;
    if (j0 == n) continue;
    Scalar* crow = c + r * n;
    std::fill(crow + j0, crow + n, Scalar{0});
    for (std::size_t p = 0; p < s.k; ++p) {
      const Scalar aip = a_at(s, a, r, p);
      const Scalar* brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// B as k×n row-major, transposing into `scratch` when stored n×k.
const Scalar* b_rowmajor(const GemmShape& s, const Scalar* b, std::vector<Scalar>& scratch) {
  if (!s.trans_b) return b;
  scratch.resize(s.k * s.n);
  for (std::size_t j = 0; j < s.n; ++j)
    for (std::size_t p = 0; p < s.k; ++p) scratch[p * s.n + j] = b[j * s.k + p];
  return scratch.data();
}

void softmax_row(std::size_t n, const Scalar* x, Scalar* y) {
  Scalar hi = -std::numeric_limits<Scalar>::infinity();
  for (std::size_t j = 0; j < n; ++j) hi = std::max(hi, x[j]);
  Scalar total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - hi);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

}  // namespace

int max_threads() { return omp_in_parallel() ? 1 : omp_get_max_threads(); }

void gemm(const GemmShape& s, std::span<const Scalar> a, std::span<const Scalar> b, std::span<Scalar> c) {
  std::vector<Scalar> scratch;
  const Scalar* bp = b_rowmajor(s, b.data(), scratch);
  const Scalar* ap = a.data();
  Scalar* cp = c.data();
  const std::size_t work = s.m * s.n * s.k;
  if (work < kParallelWork || max_threads() == 1 || s.m < 2) {
    gemm_rows(s, ap, bp, cp, 0, s.m);
    return;
  }
  const long m = static_cast<long>(s.m);
  const long blocks = (m + static_cast<long>(kMr) - 1) / static_cast<long>(kMr);
#pragma omp parallel for schedule(static)
  for (long blk = 0; blk < blocks; ++blk) {
    const auto begin = static_cast<std::size_t>(blk) * kMr;
    gemm_rows(s, ap, bp, cp, begin, std::min(s.m, begin + kMr));
  }
}

void softmax_rows(std::size_t rows, std::size_t n, std::span<const Scalar> x, std::span<Scalar> y) {
  const long r = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * n >= kParallelWork)
  for (long i = 0; i < r; ++i) {
    softmax_row(n, x.data() + static_cast<std::size_t>(i) * n, y.data() + static_cast<std::size_t>(i) * n);
  }
}

namespace serial {

void gemm(const GemmShape& s, std::span<const Scalar> a, std::span<const Scalar> b, std::span<Scalar> c) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      Scalar acc = 0;
      for (std::size_t p = 0; p < s.k; ++p) {
        const Scalar av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
        const Scalar bv = s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
        acc += av * bv;
      }
      c[i * s.n + j] = acc;
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t n, std::span<const Scalar> x, std::span<Scalar> y) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(n, x.data() + i * n, y.data() + i * n);
}

}  // namespace serial

}  // namespace peft::kernels
