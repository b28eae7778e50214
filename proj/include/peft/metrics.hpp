#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace peft {

/// First whitespace-delimited token of `text`, read as a label in
/// [1, n_labels]. Anything else ("two", "5", "") yields nullopt.
std::optional<int> parse_label(std::string_view text, int n_labels);
/// Fraction of predictions whose parsed label equals the gold label.
double accuracy(std::span<const std::string> predictions, std::span<const int> golds, int n_labels);

/// Lowercase, replace punctuation with spaces, collapse whitespace.
std::string normalize_answer(std::string_view text);
std::vector<std::string> answer_tokens(std::string_view text);
/// Token-multiset F1 after normalization; empty vs empty scores 1.
double token_f1(std::string_view prediction, std::string_view gold);
double exact_match(std::string_view prediction, std::string_view gold);

/// Last integer or decimal literal in `text` (a leading '-' is kept).
std::optional<double> last_number(std::string_view text);
/// Fraction of responses whose last number equals the gold value.
double maj_at_1(std::span<const std::string> responses, std::span<const double> golds);

}  // namespace peft
