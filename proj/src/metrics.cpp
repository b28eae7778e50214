#include "peft/metrics.hpp"

#include <cctype>
#include <charconv>
#include <map>

#include "peft/errors.hpp"

namespace peft {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

std::optional<int> parse_label(std::string_view text, int n_labels) {
  std::size_t i = 0;
  while (i < text.size() && is_space(text[i])) ++i;
  std::size_t j = i;
  while (j < text.size() && !is_space(text[j])) ++j;
  const std::string_view token = text.substr(i, j - i);
  if (token.empty() || token.size() > 3) return std::nullopt;
  int value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  if (value < 1 || value > n_labels) return std::nullopt;
  return value;
}

double accuracy(std::span<const std::string> predictions, std::span<const int> golds, int n_labels) {
  if (predictions.size() != golds.size()) throw DimensionError("accuracy: prediction and gold counts differ");
  if (predictions.empty()) return 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto label = parse_label(predictions[i], n_labels);
    if (label && *label == golds[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u) || std::isspace(u)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(u));
  }
  return out;
}

std::vector<std::string> answer_tokens(std::string_view text) {
  const std::string norm = normalize_answer(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < norm.size()) {
    const std::size_t j = norm.find(' ', i);
    out.push_back(norm.substr(i, j == std::string::npos ? std::string::npos : j - i));
    if (j == std::string::npos) break;
    i = j + 1;
  }
  return out;
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto p = answer_tokens(prediction);
  const auto g = answer_tokens(gold);
  if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  // 2PR / (P + R) with P = c/|p|, R = c/|g|, in the form with one rounding.
  return 2.0 * static_cast<double>(common) / static_cast<double>(p.size() + g.size());
}

double exact_match(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1.0 : 0.0;
}

std::optional<double> last_number(std::string_view text) {
  std::optional<double> last;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      ++i;
      continue;
    }
    std::size_t begin = i;
    if (begin > 0 && text[begin - 1] == '-') --begin;
    while (i < text.size() && is_digit(text[i])) ++i;
    if (i + 1 < text.size() && text[i] == '.' && is_digit(text[i + 1])) {
      ++i;
      while (i < text.size() && is_digit(text[i])) ++i;
    }
    double v = 0;
    std::from_chars(text.data() + begin, text.data() + i, v);
    last = v;
  }
  return last;
}

double maj_at_1(std::span<const std::string> responses, std::span<const double> golds) {
  if (responses.size() != golds.size()) throw DimensionError("maj@1: response and gold counts differ");
  if (responses.empty()) return 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    const auto v = last_number(responses[i]);
    if (v && *v == golds[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(responses.size());
}

}  // namespace peft
