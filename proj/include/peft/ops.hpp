#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "peft/tensor.hpp"

// Differentiable tensor operations. Each op records a backward closure on the
// active Graph when any input requires grad; otherwise it is a plain kernel call.

namespace peft {

using TokenId = std::int32_t;

/// [m×k]·[k×n] → [m×n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m×k]·[n×k]ᵀ → [m×n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
/// a · s for a one-element tensor s.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sum(const Tensor& a);

/// Row-wise x / rms(x) · weight over the last axis of a 2-D tensor.
Tensor rmsnorm(const Tensor& x, const Tensor& weight, Scalar eps);

/// Softmax along `axis` (negative counts from the end). -inf entries are
/// treated as masked and receive zero weight; NaN throws NumericError.
Tensor softmax(const Tensor& x, int axis = -1);

/// Sets entry (i, j) of a 2-D score block to -inf where j > i + offset.
Tensor causal_mask(const Tensor& scores, std::size_t offset = 0);

Tensor concat(const Tensor& a, const Tensor& b, int axis);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);

/// Gathers rows of a 2-D table (embedding lookup).
Tensor gather_rows(const Tensor& table, std::span<const TokenId> ids);

/// Rotary position encoding on [n × heads·head_dim], pairing (2i, 2i+1)
/// within each head.
Tensor rope(const Tensor& x, std::span<const std::size_t> positions, std::size_t head_dim,
            Scalar theta);

/// Mean over masked rows of -log softmax(logits)[target].
/// Throws DataError when the mask selects no row.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> mask);

}  // namespace peft
