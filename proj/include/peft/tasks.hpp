#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "peft/model.hpp"
#include "peft/tokenizer.hpp"

namespace peft {

enum class TaskKind { kNli3, kSpanQa, kMc4, kArith };

TaskKind parse_task(std::string_view name);
std::string task_name(TaskKind kind);

/// One instruction example. `prompt` is the text of the Input section
/// (e.g. "Premise:\n ...\nHypothesis:\n ..."); `response` is the answer only.
struct Example {
  std::string prompt;
  std::string response;
  int language = 0;
  TaskKind task = TaskKind::kNli3;
  bool operator==(const Example&) const = default;
};

struct LanguageFamilyConfig {
  std::size_t n_languages = 4;
  /// Share of concepts whose surface token is the same in every language.
  double anchor_fraction = 0.5;
  std::size_t n_concepts = 64;
  std::uint64_t seed = 0;
};

/// Synthetic languages over the tokenizer's content-word slots. Every
/// language expresses the same concepts; anchored concepts share one token,
/// the rest map to a private block of slots through a per-language
/// permutation. Language 0 (the source) uses the identity permutation.
class LanguageFamily {
 public:
  /// Throws ConfigError when the word slots cannot hold every private block.
  explicit LanguageFamily(const LanguageFamilyConfig& config, const Tokenizer& tokenizer = Tokenizer::standard());

  const LanguageFamilyConfig& config() const { return config_; }
  std::size_t n_languages() const { return config_.n_languages; }
  std::size_t n_concepts() const { return config_.n_concepts; }
  bool is_anchor(std::size_t concept_id) const { return anchor_[concept_id]; }
  TokenId token(std::size_t language, std::size_t concept_id) const;
  /// Surface word (no leading space).
  std::string word(std::size_t language, std::size_t concept_id) const;
  /// Tokens only `language` uses.
  std::vector<TokenId> private_tokens(std::size_t language) const;

 private:
  LanguageFamilyConfig config_;
  const Tokenizer* tokenizer_;
  std::vector<bool> anchor_;
  std::vector<std::vector<TokenId>> tokens_;  // [language][concept]
};

/// `n` parallel instances rendered in every language of the family;
/// result[l] holds language l. Deterministic per seed.
std::vector<std::vector<Example>> gen_task(TaskKind kind, std::size_t n, const LanguageFamily& family,
                                           std::uint64_t seed);

/// Full prompt text up to and including the response scaffold.
std::string render_text(const Example& example);

struct RenderedPrompt {
  std::vector<TokenId> tokens;  // BOS first
  std::size_t delimiter = 0;    // index of the response delimiter token
};

/// Tokenized prompt (generation input). Throws DataError on an empty prompt.
RenderedPrompt render_prompt(const Example& example, const Tokenizer& tokenizer = Tokenizer::standard());
/// Prompt plus " " + response (+ closing brace for span_qa) + EOS.
/// Throws DataError on an empty response.
RenderedPrompt render_training(const Example& example, const Tokenizer& tokenizer = Tokenizer::standard());

/// Streams examples from a JSONL file (fields prompt, response, language,
/// task). Errors cite the 1-based line number.
void load_jsonl(const std::filesystem::path& path, const std::function<void(Example)>& sink);
std::vector<Example> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);

/// Simulated multilingual pretraining: pulls each target-language token's
/// embedding row (and output-head column) towards its source-language
/// counterpart, row = rho * source + sqrt(1 - rho^2) * own. Anchors and
/// language 0 are untouched.
void apply_multilingual_prior(BaseWeights& weights, const LanguageFamily& family, double rho);

}  // namespace peft
