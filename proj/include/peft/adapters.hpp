#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "peft/model.hpp"

namespace peft {

enum LoraTarget : unsigned { kLoraQ = 1u, kLoraK = 2u, kLoraV = 4u };

/// Low-rank update ΔW = BA on the chosen projections of every layer, scaled by alpha/rank.
struct LoraSpec {
  std::size_t rank = 4;
  double alpha = 8.0;
  unsigned targets = kLoraQ | kLoraK | kLoraV;
  bool operator==(const LoraSpec&) const = default;
};

/// K learnable embeddings prepended to the input sequence.
struct SoftPromptSpec {
  std::size_t tokens = 10;
  bool operator==(const SoftPromptSpec&) const = default;
};

/// K learnable prefix vectors per layer for the final `layers` layers
/// (all layers when unset), projected by the frozen W_k / W_v.
struct PrefixSpec {
  std::size_t tokens = 10;
  std::optional<std::size_t> layers;
  bool operator==(const PrefixSpec&) const = default;
};

enum class GateGranularity { kPerLayer, kPerHead };

/// Prefix tuning with a separately softmaxed prefix block scaled by tanh(gate).
struct LlamaAdapterSpec {
  std::size_t tokens = 10;
  std::optional<std::size_t> layers;
  GateGranularity gate = GateGranularity::kPerLayer;
  bool operator==(const LlamaAdapterSpec&) const = default;
};

using AdapterSpec = std::variant<LoraSpec, SoftPromptSpec, PrefixSpec, LlamaAdapterSpec>;

/// Parses `name:key=value,...` with names lora, soft, prefix, llama_adapter.
///   lora:r=4,alpha=8,targets=qkv     soft:K=10
///   prefix:K=10,L=30                 llama_adapter:K=10,L=30,gate=layer|head
/// Throws ConfigError naming the offending key.
AdapterSpec parse_adapter_spec(std::string_view text);
std::string to_string(const AdapterSpec& spec);
std::string adapter_name(const AdapterSpec& spec);

/// Number of adapted layers (counted from the top) for prefix variants.
std::size_t adapted_layers(const AdapterSpec& spec, const ModelConfig& config);
/// Index of the lowest adapted layer.
std::size_t first_adapted_layer(const AdapterSpec& spec, const ModelConfig& config);

/// Throws ConfigError when the spec does not fit the model.
void validate(const AdapterSpec& spec, const ModelConfig& config);

/// y = h·W + (alpha/rank)·(h·Aᵀ)·Bᵀ, with W stored [in × out], A [r × in], B [out × r].
Tensor lora_project(const Tensor& w, const Tensor& a, const Tensor& b, double alpha, std::size_t rank,
                    const Tensor& h);
/// W + (alpha/rank)·(BA)ᵀ in the same [in × out] layout.
Tensor lora_merge(const Tensor& w, const Tensor& a, const Tensor& b, double alpha, std::size_t rank);

/// Single-head prefix attention over hidden states H [(M+1) × d] with
/// prefix P [K × d] and frozen projections; returns the W_o projection for
/// every row (the last row is the current token). Empty P gives plain
/// causal attention. `gate`, when defined, selects the gated form.
Tensor prefix_attend(const Tensor& prefix, const Tensor& hidden, const Tensor& wq, const Tensor& wk,
                     const Tensor& wv, const Tensor& wo, const Tensor& gate = {});

/// Trainable state of one attached adapter plus the hooks that apply it.
class Adapter : public ForwardHooks {
 public:
  /// Fresh state: LoRA A ~ N(0, 1/in), B = 0; prefixes and soft prompts
  /// N(0, 1); gates 0.
  static Adapter init(const ModelConfig& config, const AdapterSpec& spec, std::uint64_t seed);
  /// Wraps existing tensors (e.g. loaded from disk); checks names and shapes.
  static Adapter from_state(const ModelConfig& config, const AdapterSpec& spec, NamedTensors state);

  Adapter(const Adapter&) = delete;
  Adapter& operator=(const Adapter&) = delete;
  Adapter(Adapter&&) noexcept;
  Adapter& operator=(Adapter&&) noexcept;
  ~Adapter() override;

  const AdapterSpec& spec() const { return spec_; }
  const ModelConfig& config() const { return config_; }

  /// Exactly the tensors that train; all have requires_grad set.
  const NamedTensors& trainable_parameters() const { return state_; }
  /// Deep copy of the state (for snapshots).
  Adapter clone() const;

  /// Base weights with the LoRA update folded in. Throws for non-LoRA adapters.
  BaseWeights merge_into(const BaseWeights& base) const;

  Tensor input_prefix() const override;
  Tensor project(std::size_t layer, Projection which, const Tensor& x, const Tensor& w) const override;
  const AttentionTap* tap(std::size_t layer) const override;

 private:
  Adapter(const ModelConfig& config, AdapterSpec spec, NamedTensors state);
  void bind();

  ModelConfig config_;
  AdapterSpec spec_;
  NamedTensors state_;
  Tensor soft_prompt_;
  // LoRA factors per layer and projection (q, k, v): {A, B}, undefined if untargeted.
  std::vector<std::array<std::pair<Tensor, Tensor>, 3>> lora_;
  std::vector<std::unique_ptr<AttentionTap>> taps_;  // one per layer, null if not adapted
};

/// Layout of the trainable tensors an adapter allocates (names and shapes).
std::vector<std::pair<std::string, Shape>> adapter_layout(const ModelConfig& config, const AdapterSpec& spec);

}  // namespace peft
