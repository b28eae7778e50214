#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "peft/ops.hpp"

namespace peft {

/// Fixed 512-entry vocabulary: pad/BOS/EOS, the 256 bytes, whole template
/// phrases, and synthetic content words (" " + four letters). Encoding is a
/// greedy longest match with byte fallback, so decode(encode(s)) == s for any s.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kFirstByte = 3;
  static constexpr std::size_t kVocabSize = 512;

  /// The shipped tokenizer.
  static const Tokenizer& standard();

  std::vector<TokenId> encode(std::string_view text) const;
  /// Special tokens decode to nothing.
  std::string decode(std::span<const TokenId> ids) const;
  std::string piece(TokenId id) const;
  std::optional<TokenId> id_of(std::string_view piece) const;
  std::size_t vocab_size() const { return kVocabSize; }

  /// Ids of the content-word slots, in vocabulary order.
  const std::vector<TokenId>& word_slots() const { return words_; }
  /// Surface text of a content-word slot.
  const std::string& word(std::size_t slot) const { return pieces_[static_cast<std::size_t>(words_[slot])]; }
  TokenId response_delimiter() const { return delimiter_; }

 private:
  Tokenizer();
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> lookup_;
  // Multi-byte pieces bucketed by first byte, longest first.
  std::vector<std::vector<TokenId>> by_first_;
  std::vector<TokenId> words_;
  TokenId delimiter_ = 0;
};

}  // namespace peft
