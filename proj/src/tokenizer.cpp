#include "peft/tokenizer.hpp"

#include <algorithm>
#include <array>

#include "peft/errors.hpp"
#include "peft/templates.hpp"

namespace peft {

namespace {

// Consonant-vowel words: 14 * 5 * 14 * 5 candidates, far more than the slots.
std::string synthetic_word(std::size_t i) {
  static constexpr std::string_view kC = "bdfgklmnprstvz";
  static constexpr std::string_view kV = "aeiou";
  std::string w = " ";
  w += kC[i % kC.size()];
  i /= kC.size();
  w += kV[i % kV.size()];
  i /= kV.size();
  w += kC[i % kC.size()];
  i /= kC.size();
  w += kV[i % kV.size()];
  return w;
}

}  // namespace

const Tokenizer& Tokenizer::standard() {
  static const Tokenizer t;
  return t;
}

Tokenizer::Tokenizer() {
  namespace tp = templates;
  pieces_ = {"<pad>", "<s>", "</s>"};
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
  const std::array<std::string_view, 23> phrases = {
      tp::kHeader,          tp::kInputMarker,     tp::kResponseDelimiter, tp::kNliInstruction, tp::kQaInstruction,
      tp::kMcInstruction,   tp::kArithInstruction, tp::kNliScaffold,      tp::kMcScaffold,     tp::kQaScaffold,
      tp::kPremise,         tp::kHypothesis,      tp::kContext,           tp::kPassage,        tp::kQuestionFirst,
      tp::kQuestion,        tp::kChoices,         " 1",                   " 2",                " 3",
      " 4",                 "}",                  "\n"};
  for (std::string_view p : phrases) {
    if (p.size() > 1) pieces_.emplace_back(p);
  }
  for (std::size_t i = 0; pieces_.size() < kVocabSize; ++i) {
    words_.push_back(static_cast<TokenId>(pieces_.size()));
    pieces_.push_back(synthetic_word(i * 37 + 11));
  }
  by_first_.resize(256);
  for (std::size_t id = 0; id < pieces_.size(); ++id) {
    lookup_.emplace(pieces_[id], static_cast<TokenId>(id));
    if (id >= static_cast<std::size_t>(kFirstByte) + 256)
      by_first_[static_cast<unsigned char>(pieces_[id][0])].push_back(static_cast<TokenId>(id));
  }
  for (auto& bucket : by_first_)
    std::stable_sort(bucket.begin(), bucket.end(),
                     [&](TokenId a, TokenId b) { return pieces_[a].size() > pieces_[b].size(); });
  delimiter_ = lookup_.at(std::string(tp::kResponseDelimiter));
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto first = static_cast<unsigned char>(text[i]);
    TokenId match = kFirstByte + first;
    std::size_t len = 1;
    for (TokenId id : by_first_[first]) {
      const std::string& p = pieces_[static_cast<std::size_t>(id)];
      if (text.compare(i, p.size(), p) == 0) {
        match = id;
        len = p.size();
        break;
      }
    }
    out.push_back(match);
    i += len;
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
      throw DataError("decode: token id " + std::to_string(id) + " outside vocabulary");
    if (id >= kFirstByte) out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::string Tokenizer::piece(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
    throw DataError("piece: token id " + std::to_string(id) + " outside vocabulary");
  return pieces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Tokenizer::id_of(std::string_view piece) const {
  if (auto it = lookup_.find(std::string(piece)); it != lookup_.end()) return it->second;
  return std::nullopt;
}

}  // namespace peft
