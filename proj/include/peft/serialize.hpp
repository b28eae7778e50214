#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "peft/adapters.hpp"
#include "peft/model.hpp"

// Flat little-endian binary container shared by base weights and adapters:
//
//   magic   "PEFTFRG\0"          8 bytes
//   version u32 (= 1)
//   kind    u32 (1 = weights, 2 = adapter)
//   config  u64 × 8  n_layers d_model n_heads n_kv_heads head_dim vocab_size max_seq d_ff
//           f64 rope_theta, f64 norm_eps, u8 tie_embeddings
//   spec    u32 length + adapter spec text (empty for weights)
//   count   u32 number of tensors, then per tensor in declaration order:
//           u32 name length, name bytes, u32 rank, u64 × rank dims, f64 × numel data
namespace peft {

inline constexpr std::uint32_t kFormatVersion = 1;

void save_weights(const std::filesystem::path& path, const BaseWeights& weights);
BaseWeights load_weights(const std::filesystem::path& path);

void save_adapter(const std::filesystem::path& path, const Adapter& adapter);
/// The config stored in the header travels with the adapter (adapter.config()).
Adapter load_adapter(const std::filesystem::path& path);

/// FNV-1a 64-bit hash of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace peft
