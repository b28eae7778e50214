#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "peft/ops.hpp"
#include "peft/tensor.hpp"

namespace peft {

/// Architecture of a Llama-style decoder-only transformer.
struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_kv_heads = 2;  // grouped-query attention
  std::size_t head_dim = 16;
  std::size_t vocab_size = 512;
  std::size_t max_seq = 256;
  std::size_t d_ff = 256;
  double rope_theta = 10000.0;
  double norm_eps = 1e-5;
  bool tie_embeddings = false;

  std::size_t q_dim() const { return n_heads * head_dim; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim; }

  /// Throws ConfigError on any inconsistent extent.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Built-in configs: "toy", "llama-3.1-8B", "llama-3.2-1B", "mistral-7B-v0.3".
/// Throws ConfigError for unknown names.
ModelConfig builtin_config(std::string_view name);
std::vector<std::string> builtin_config_names();
/// `name` if built in, otherwise a key=value file (see README).
ModelConfig resolve_model_config(const std::string& name_or_path);
std::string to_key_values(const ModelConfig& config);

struct LayerWeights {
  Tensor attn_norm;  // [d]
  Tensor wq;         // [d × n_heads·head_dim]
  Tensor wk;         // [d × n_kv_heads·head_dim]
  Tensor wv;         // [d × n_kv_heads·head_dim]
  Tensor wo;         // [n_heads·head_dim × d]
  Tensor ffn_norm;   // [d]
  Tensor w1;         // [d × d_ff] gate
  Tensor w3;         // [d × d_ff] up
  Tensor w2;         // [d_ff × d] down
};

/// Frozen base model parameters.
struct BaseWeights {
  ModelConfig config;
  Tensor tok_embeddings;  // [vocab × d]
  std::vector<LayerWeights> layers;
  Tensor final_norm;  // [d]; absent when n_layers == 0
  Tensor output;      // [d × vocab]; absent when tie_embeddings

  /// Every tensor in declaration order, with stable names.
  NamedTensors named() const;
  /// Rebuilds weights from named tensors (the inverse of named()).
  static BaseWeights from_named(const ModelConfig& config, const NamedTensors& tensors);
  BaseWeights clone() const;
  void set_trainable(bool trainable);
  std::size_t element_count() const;
  /// True when every tensor is bit-identical to `other`.
  bool identical(const BaseWeights& other) const;
};

/// Names and shapes of every base tensor, in declaration order.
std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& config);

/// Default allocation budget for init_random, in elements.
inline constexpr std::size_t kDefaultElementBudget = 64u << 20;

/// Scaled-normal init: projections and output head N(0, 1/d_model), embeddings
/// N(0, 1), norms 1. Deterministic per seed. Refuses configs above the budget.
BaseWeights init_random(const ModelConfig& config, std::uint64_t seed,
                        std::size_t element_budget = kDefaultElementBudget);

enum class Projection { Q, K, V };

/// Prefix keys/values injected at one layer, [K × kv_dim] each.
struct PrefixKV {
  Tensor keys;
  Tensor values;
  std::size_t size() const { return keys.defined() ? keys.rows() : 0; }
};

/// Injection point inside one layer's attention.
///
/// prefix() supplies extra key/value slots, which the core prepends to the
/// sequence keys and values of every example: K_l = [P^K; K^H]. The slots
/// carry no rotary position and every query sees all of them. weights() turns
/// the [T × (K+T)] score block of one query head (prefix columns first,
/// sequence columns causally masked) into attention weights.
class AttentionTap {
 public:
  virtual ~AttentionTap() = default;
  virtual PrefixKV prefix(const LayerWeights& layer) const = 0;
  /// Default: one softmax over the whole row.
  virtual Tensor weights(std::size_t head, const Tensor& scores, std::size_t n_prefix) const;
};

/// Everything an adapter may change in a forward pass.
class ForwardHooks {
 public:
  virtual ~ForwardHooks() = default;
  /// Rows prepended to every sequence's embeddings (soft prompt); undefined if none.
  virtual Tensor input_prefix() const { return {}; }
  /// q/k/v projection of `x` by frozen `w` at `layer`.
  virtual Tensor project(std::size_t layer, Projection which, const Tensor& x, const Tensor& w) const;
  virtual const AttentionTap* tap(std::size_t /*layer*/) const { return nullptr; }
};

/// Observer for attention internals: (layer, example, head, scores, weights).
using AttentionObserver =
    std::function<void(std::size_t, std::size_t, std::size_t, const Tensor&, const Tensor&)>;

struct ForwardOptions {
  const ForwardHooks* hooks = nullptr;
  const AttentionObserver* observer = nullptr;
};

/// Single-head attention of queries q [T×hd] over sequence keys/values
/// [T×hd] with optional prefix slots [K×hd], combined by `tap` (or a plain
/// softmax when tap is null).
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& prefix_k, const Tensor& prefix_v,
              const AttentionTap* tap, std::size_t head, std::size_t layer = 0, std::size_t example = 0,
              const AttentionObserver* observer = nullptr);

/// Final-normed hidden states for a batch of equal-length sequences,
/// [B·T × d]. Soft-prompt rows are dropped from the result.
Tensor hidden_states(const BaseWeights& weights, std::span<const std::vector<TokenId>> batch,
                     const ForwardOptions& options = {});

/// Output-head projection of selected hidden rows → [rows × vocab].
Tensor output_logits(const BaseWeights& weights, const Tensor& hidden);

/// Logits for every position of one sequence, [T × vocab].
Tensor forward(const BaseWeights& weights, std::span<const TokenId> tokens, const ForwardHooks* hooks = nullptr);

}  // namespace peft
