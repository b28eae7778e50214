#include "peft/eval.hpp"

#include <chrono>
#include <exception>
#include <map>
#include <random>
#include <sstream>

#include <omp.h>

#include <json.hpp>

#include "peft/errors.hpp"
#include "peft/metrics.hpp"

namespace peft {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string strip_answer(const std::string& text) {
  // span_qa responses close the dict; everything from the brace on is dropped.
  const auto brace = text.find('}');
  return brace == std::string::npos ? text : text.substr(0, brace);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

double EvalReport::metric(int language, const std::string& name) const {
  for (const auto& l : languages)
    if (l.language == language)
      for (const auto& [k, v] : l.metrics)
        if (k == name) return v;
  throw ConfigError("report has no metric '" + name + "' for language " + std::to_string(language));
}

double EvalReport::average_of(const std::string& name) const {
  for (const auto& [k, v] : average)
    if (k == name) return v;
  throw ConfigError("report has no metric '" + name + "'");
}

std::string EvalReport::to_json(bool include_runtime) const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["adapter"] = adapter;
  j["task"] = task;
  j["n_examples"] = n_examples;
  j["seed"] = seed;
  j["decode"] = {{"temperature", decode.temperature},
                 {"top_p", decode.top_p},
                 {"max_new_tokens", decode.max_new_tokens}};
  if (task == "arith") j["answer_extraction"] = "last integer or decimal literal in the response";
  auto& langs = j["languages"] = nlohmann::ordered_json::array();
  for (const auto& l : languages) {
    nlohmann::ordered_json row;
    row["language"] = l.language;
    row["n"] = l.n;
    for (const auto& [k, v] : l.metrics) row[k] = v * 100;
    langs.push_back(row);
  }
  nlohmann::ordered_json avg;
  for (const auto& [k, v] : average) avg[k] = v * 100;
  j["average"] = avg;
  if (include_runtime) j["runtime_seconds"] = runtime_seconds;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "method,language,metric,value\n";
  for (const auto& l : languages)
    for (const auto& [k, v] : l.metrics) out << csv_quote(method) << ",l" << l.language << ',' << k << ',' << v * 100 << '\n';
  for (const auto& [k, v] : average) out << csv_quote(method) << ",avg," << k << ',' << v * 100 << '\n';
  return out.str();
}

std::vector<std::string> task_metrics(TaskKind task) {
  switch (task) {
    case TaskKind::kNli3:
    case TaskKind::kMc4: return {"accuracy"};
    case TaskKind::kSpanQa: return {"f1", "em"};
    case TaskKind::kArith: return {"maj@1"};
  }
  return {};
}

std::vector<std::pair<std::string, double>> score_response(TaskKind task, const std::string& response,
                                                           const std::string& gold) {
  switch (task) {
    case TaskKind::kNli3:
    case TaskKind::kMc4: {
      const int n = task == TaskKind::kNli3 ? 3 : 4;
      const auto label = parse_label(response, n);
      const auto want = parse_label(gold, n);
      return {{"accuracy", label && want && *label == *want ? 1.0 : 0.0}};
    }
    case TaskKind::kSpanQa: {
      const std::string answer = strip_answer(response);
      return {{"f1", token_f1(answer, gold)}, {"em", exact_match(answer, gold)}};
    }
    case TaskKind::kArith: {
      const auto got = last_number(response);
      const auto want = last_number(gold);
      return {{"maj@1", got && want && *got == *want ? 1.0 : 0.0}};
    }
  }
  return {};
}

EvalReport evaluate(const BaseWeights& weights, const ForwardHooks* hooks, std::span<const Example> examples,
                    const EvalOptions& options) {
  options.decode.validate();
  if (examples.empty()) throw DataError("evaluate: empty dataset");
  const auto started = std::chrono::steady_clock::now();
  const TaskKind task = examples[0].task;
  std::map<int, std::vector<std::size_t>> by_language;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].task != task)
      throw DataError("evaluate: mixed tasks (" + task_name(task) + " and " + task_name(examples[i].task) + ")");
    by_language[examples[i].language].push_back(i);
  }
  const std::vector<std::string> names = task_metrics(task);
  std::vector<int> langs;
  for (const auto& [l, idx] : by_language) langs.push_back(l);
  std::vector<LanguageResult> results(langs.size());
  std::vector<std::exception_ptr> errors(langs.size());
  const Tokenizer& tok = Tokenizer::standard();
  const int threads = static_cast<int>(std::max<std::size_t>(1, std::min(options.threads, langs.size())));

#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::size_t li = 0; li < langs.size(); ++li) {
    try {
      const int lang = langs[li];
      const auto& idx = by_language.at(lang);
      std::vector<double> sums(names.size(), 0.0);
      // Equal-length prompts decode together.
      std::map<std::size_t, std::vector<std::size_t>> by_len;
      std::vector<std::vector<TokenId>> prompts(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        prompts[k] = render_prompt(examples[idx[k]], tok).tokens;
        by_len[prompts[k].size()].push_back(k);
      }
      for (const auto& [len, members] : by_len) {
        for (std::size_t start = 0; start < members.size(); start += options.batch_size) {
          const std::size_t end = std::min(members.size(), start + options.batch_size);
          std::vector<std::vector<TokenId>> batch;
          std::vector<std::mt19937_64> rngs;
          for (std::size_t m = start; m < end; ++m) {
            batch.push_back(prompts[members[m]]);
            rngs.emplace_back(splitmix(options.seed ^ splitmix(static_cast<std::uint64_t>(lang) * 1000003u +
                                                               members[m])));
          }
          const auto outs = generate_batch(weights, hooks, batch, options.decode, rngs);
          for (std::size_t m = start; m < end; ++m) {
            const std::string text = tok.decode(outs[m - start]);
            const auto scores = score_response(task, text, examples[idx[members[m]]].response);
            for (std::size_t s = 0; s < names.size(); ++s) sums[s] += scores[s].second;
          }
        }
      }
      LanguageResult r;
      r.language = lang;
      r.n = idx.size();
      for (std::size_t s = 0; s < names.size(); ++s) r.metrics.emplace_back(names[s], sums[s] / static_cast<double>(idx.size()));
      results[li] = std::move(r);
    } catch (...) {
      errors[li] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalReport report;
  report.method = options.method;
  report.adapter = options.adapter;
  report.task = task_name(task);
  report.languages = std::move(results);
  report.decode = options.decode;
  report.seed = options.seed;
  report.n_examples = examples.size();
  for (std::size_t s = 0; s < names.size(); ++s) {
    double sum = 0;
    for (const auto& l : report.languages) sum += l.metrics[s].second;
    report.average.emplace_back(names[s], sum / static_cast<double>(report.languages.size()));
  }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace peft
