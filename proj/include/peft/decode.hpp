#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "peft/model.hpp"

namespace peft {

struct DecodeConfig {
  double temperature = 0.0;  // 0 selects argmax
  double top_p = 1.0;
  std::size_t max_new_tokens = 16;
  TokenId eos = 2;

  void validate() const;
};

/// Indices of the smallest highest-probability set whose mass reaches top_p,
/// most probable first (ties broken by lower index).
std::vector<std::size_t> top_p_support(std::span<const double> probs, double top_p);

/// Temperature-scaled probabilities (softmax(logits / temperature)).
std::vector<double> tempered_probs(std::span<const Scalar> logits, double temperature);

/// Picks the next token from one logits row.
TokenId sample_next(std::span<const Scalar> logits, const DecodeConfig& decode, std::mt19937_64& rng);

/// Continues `prompt` until EOS or the token budget. Returns the new tokens
/// only (EOS included when produced).
std::vector<TokenId> generate(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const TokenId> prompt,
                              const DecodeConfig& decode, std::mt19937_64& rng);

/// Batched generate() for equal-length prompts; rngs[i] drives prompt i.
std::vector<std::vector<TokenId>> generate_batch(const BaseWeights& weights, const ForwardHooks* hooks,
                                                 std::span<const std::vector<TokenId>> prompts,
                                                 const DecodeConfig& decode, std::span<std::mt19937_64> rngs);

}  // namespace peft
