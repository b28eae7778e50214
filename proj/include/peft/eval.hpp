#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "peft/decode.hpp"
#include "peft/model.hpp"
#include "peft/tasks.hpp"

namespace peft {

struct LanguageResult {
  int language = 0;
  std::size_t n = 0;
  std::vector<std::pair<std::string, double>> metrics;  // fractions in [0, 1]
};

struct EvalReport {
  std::string method;   // "base", "full_ft", or the adapter name
  std::string adapter;  // adapter spec text, empty for none
  std::string task;
  std::vector<LanguageResult> languages;            // ascending language id
  std::vector<std::pair<std::string, double>> average;  // mean over languages
  DecodeConfig decode;
  std::uint64_t seed = 0;
  std::size_t n_examples = 0;
  double runtime_seconds = 0;

  double metric(int language, const std::string& name) const;
  double average_of(const std::string& name) const;

  /// Metrics are written ×100. Runtime is omitted unless asked for, so the
  /// report of a rerun is byte-identical.
  std::string to_json(bool include_runtime = false) const;
  /// Rows of method,language,metric,value (×100), languages then "avg".
  std::string to_csv() const;
};

/// Metric names per task: accuracy (nli3, mc4), f1 + em (span_qa), maj@1 (arith).
std::vector<std::string> task_metrics(TaskKind task);
/// Scores one decoded response (text after the scaffold) against the gold response.
std::vector<std::pair<std::string, double>> score_response(TaskKind task, const std::string& response,
                                                           const std::string& gold);

struct EvalOptions {
  DecodeConfig decode;
  std::uint64_t seed = 0;
  std::size_t threads = 1;     // language shards run concurrently
  std::size_t batch_size = 64; // prompts decoded together
  std::string method = "base";
  std::string adapter;
};

/// Decodes every example and scores it. All examples must share one task.
/// Each example draws from its own generator seeded by (seed, language,
/// index), so results do not depend on thread count or batching.
EvalReport evaluate(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const Example> examples,
                    const EvalOptions& options);

}  // namespace peft
