#pragma once

#include <cstddef>
#include <span>

#include "peft/tensor.hpp"

// Dense kernels behind the differentiable ops.
//
// Every kernel has an OpenMP version (the default) and a plain serial
// reference in peft::kernels::serial. Both accumulate each output element in
// the same order, so they agree bit for bit regardless of thread count.

namespace peft::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // inner extent
  bool trans_a = false;  // A stored k×m
  bool trans_b = false;  // B stored n×k
};

/// C = op(A)·op(B), overwriting C (m×n, row-major).
void gemm(const GemmShape& s, std::span<const Scalar> a, std::span<const Scalar> b,
          std::span<Scalar> c);

/// Row-wise softmax over a [rows × n] block; -inf entries get weight 0.
void softmax_rows(std::size_t rows, std::size_t n, std::span<const Scalar> x,
                  std::span<Scalar> y);

/// Threads the parallel kernels may use (1 inside an enclosing parallel region).
int max_threads();

namespace serial {

void gemm(const GemmShape& s, std::span<const Scalar> a, std::span<const Scalar> b,
          std::span<Scalar> c);

void softmax_rows(std::size_t rows, std::size_t n, std::span<const Scalar> x,
                  std::span<Scalar> y);

}  // namespace serial

}  // namespace peft::kernels
