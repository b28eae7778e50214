#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "peft/model.hpp"
#include "peft/tensor.hpp"

namespace peft::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0, bool requires_grad = false) {
  std::normal_distribution<double> normal(0.0, stddev);
  std::vector<Scalar> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<Scalar>(normal(rng));
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(double(a.at(i)) - double(b.at(i))));
  return worst;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

inline std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> pick(3, static_cast<TokenId>(vocab - 1));
  std::vector<TokenId> out(n);
  for (auto& t : out) t = pick(rng);
  return out;
}

// Small config that keeps finite-difference sweeps fast.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.head_dim = 4;
  c.vocab_size = 32;
  c.max_seq = 32;
  c.d_ff = 16;
  return c;
}

}  // namespace peft::test
