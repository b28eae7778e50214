#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "peft/adapters.hpp"
#include "peft/model.hpp"

namespace peft {

using ParamCount = std::uint64_t;

struct ParamReport {
  ParamCount total = 0;
  /// Components that make up `total`.
  std::vector<std::pair<std::string, ParamCount>> breakdown;
  /// Trainable tensors reported beside the headline (Llama-Adapter gates).
  std::vector<std::pair<std::string, ParamCount>> separate;
  /// total / 1e6 rounded half-up to two decimals, e.g. "1.23M".
  std::string human;
  /// Closed form used, in words.
  std::string formula;

  /// total plus every separately reported component.
  ParamCount all_trainable() const;
};

/// "x.xxM" rendering with round-half-up on the exact integer.
std::string human_count(ParamCount count);

/// Trainable parameters of `spec` on `config`, without allocating anything.
ParamReport count(const ModelConfig& config, const AdapterSpec& spec);
/// Every frozen parameter of the base model.
ParamReport count_base(const ModelConfig& config);

}  // namespace peft
