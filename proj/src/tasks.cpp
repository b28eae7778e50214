#include "peft/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "peft/errors.hpp"
#include "peft/templates.hpp"

namespace peft {

namespace tp = templates;

TaskKind parse_task(std::string_view name) {
  if (name == "nli3") return TaskKind::kNli3;
  if (name == "span_qa") return TaskKind::kSpanQa;
  if (name == "mc4") return TaskKind::kMc4;
  if (name == "arith") return TaskKind::kArith;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected nli3, span_qa, mc4, arith)");
}

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNli3: return "nli3";
    case TaskKind::kSpanQa: return "span_qa";
    case TaskKind::kMc4: return "mc4";
    case TaskKind::kArith: return "arith";
  }
  return "?";
}

LanguageFamily::LanguageFamily(const LanguageFamilyConfig& config, const Tokenizer& tokenizer)
    : config_(config), tokenizer_(&tokenizer) {
  if (config.n_languages < 1) throw ConfigError("language family: n_languages must be >= 1");
  if (config.n_concepts < 8) throw ConfigError("language family: n_concepts must be >= 8");
  if (!(config.anchor_fraction >= 0 && config.anchor_fraction <= 1))
    throw ConfigError("language family: anchor_fraction must lie in [0, 1]");
  const std::size_t n_anchor =
      static_cast<std::size_t>(std::llround(config.anchor_fraction * static_cast<double>(config.n_concepts)));
  const std::size_t n_private = config.n_concepts - n_anchor;
  const std::size_t needed = n_anchor + n_private * config.n_languages;
  const auto& slots = tokenizer.word_slots();
  if (needed > slots.size())
    throw ConfigError("language family needs " + std::to_string(needed) + " word slots but the vocabulary has " +
                      std::to_string(slots.size()));

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(config.n_concepts);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  anchor_.assign(config.n_concepts, false);
  for (std::size_t i = 0; i < n_anchor; ++i) anchor_[order[i]] = true;

  tokens_.assign(config.n_languages, std::vector<TokenId>(config.n_concepts));
  std::vector<std::size_t> privates;
  std::size_t next_anchor = 0;
  for (std::size_t c = 0; c < config.n_concepts; ++c) {
    if (anchor_[c]) {
      for (auto& lang : tokens_) lang[c] = slots[next_anchor];
      ++next_anchor;
    } else {
      privates.push_back(c);
    }
  }
  for (std::size_t l = 0; l < config.n_languages; ++l) {
    std::vector<std::size_t> perm(n_private);
    std::iota(perm.begin(), perm.end(), 0);
    if (l > 0) std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t base = n_anchor + l * n_private;
    for (std::size_t i = 0; i < n_private; ++i) tokens_[l][privates[i]] = slots[base + perm[i]];
  }
}

TokenId LanguageFamily::token(std::size_t language, std::size_t concept_id) const {
  return tokens_.at(language).at(concept_id);
}

std::string LanguageFamily::word(std::size_t language, std::size_t concept_id) const {
  return tokenizer_->piece(token(language, concept_id)).substr(1);
}

std::vector<TokenId> LanguageFamily::private_tokens(std::size_t language) const {
  std::vector<TokenId> out;
  for (std::size_t c = 0; c < config_.n_concepts; ++c)
    if (!anchor_[c]) out.push_back(token(language, c));
  return out;
}

namespace {

// Concept roles per task. Each task draws its content from fixed concept ranges.
constexpr std::size_t kCuesPerLabel = 1;

std::size_t uniform(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// k distinct values from [lo, hi).
std::vector<std::size_t> distinct(std::mt19937_64& rng, std::size_t lo, std::size_t hi, std::size_t k) {
  std::vector<std::size_t> out;
  while (out.size() < k) {
    const std::size_t v = lo + uniform(rng, hi - lo);
    if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
  }
  return out;
}

struct Instance {
  std::vector<std::size_t> a, b, c;  // concept lists per field
  std::vector<std::size_t> answer_concepts;
  std::string answer;  // non-word answers (labels, numbers)
};

std::string words(const LanguageFamily& f, std::size_t lang, const std::vector<std::size_t>& concepts) {
  std::string out;
  for (std::size_t c : concepts) out += " " + f.word(lang, c);
  return out;
}

Example surface(TaskKind kind, const Instance& in, const LanguageFamily& f, std::size_t lang) {
  Example e;
  e.task = kind;
  e.language = static_cast<int>(lang);
  switch (kind) {
    case TaskKind::kNli3:
      e.prompt = std::string(tp::kPremise) + words(f, lang, in.a) + std::string(tp::kHypothesis) + words(f, lang, in.b);
      e.response = in.answer;
      break;
    case TaskKind::kSpanQa:
      e.prompt = std::string(tp::kContext) + words(f, lang, in.a) + std::string(tp::kQuestion) + words(f, lang, in.b);
      e.response = words(f, lang, in.answer_concepts).substr(1);
      break;
    case TaskKind::kMc4: {
      e.prompt = std::string(tp::kPassage) + words(f, lang, in.a) + std::string(tp::kQuestion) +
                 words(f, lang, in.b) + std::string(tp::kChoices);
      for (std::size_t i = 0; i < in.c.size(); ++i)
        e.prompt += (i ? "\n" : "") + std::to_string(i + 1) + "." + words(f, lang, {in.c[i]});
      e.response = in.answer;
      break;
    }
    case TaskKind::kArith: {
      // a holds the two operands as raw numbers, b the operator concept.
      e.prompt = std::string(tp::kQuestionFirst) + " " + std::to_string(in.a[0]) + words(f, lang, in.b) + " " +
                 std::to_string(in.a[1]);
      e.response = in.answer;
      break;
    }
  }
  return e;
}

Instance sample(TaskKind kind, std::mt19937_64& rng, std::size_t n_concepts) {
  Instance in;
  switch (kind) {
    case TaskKind::kNli3: {
      // The first 3 * kCuesPerLabel concepts are label cues; the rest are fillers.
      const std::size_t label = uniform(rng, 3);
      const std::size_t fillers = 3 * kCuesPerLabel;
      in.a = distinct(rng, fillers, n_concepts, 5);
      const auto keep = distinct(rng, 0, in.a.size(), 2);
      in.b = {in.a[keep[0]], in.a[keep[1]], label * kCuesPerLabel + uniform(rng, kCuesPerLabel)};
      std::shuffle(in.b.begin(), in.b.end(), rng);
      in.answer = std::to_string(label + 1);
      break;
    }
    case TaskKind::kSpanQa: {
      in.a = distinct(rng, 0, n_concepts, 6);
      const std::size_t i = uniform(rng, 4);
      in.b = {in.a[i]};
      in.answer_concepts = {in.a[i + 1], in.a[i + 2]};
      break;
    }
    case TaskKind::kMc4: {
      in.a = distinct(rng, 0, n_concepts, 5);
      const std::size_t i = uniform(rng, 4);
      in.b = {in.a[i]};
      const std::size_t gold = in.a[i + 1];
      in.c = {gold};
      while (in.c.size() < 4) {
        const std::size_t v = uniform(rng, n_concepts);
        if (std::find(in.c.begin(), in.c.end(), v) == in.c.end() && v != in.b[0]) in.c.push_back(v);
      }
      std::shuffle(in.c.begin(), in.c.end(), rng);
      const auto pos = std::find(in.c.begin(), in.c.end(), gold) - in.c.begin();
      in.answer = std::to_string(pos + 1);
      break;
    }
    case TaskKind::kArith: {
      // Concepts 0 and 1 name "plus" and "minus".
      const std::size_t x = uniform(rng, 50), y = uniform(rng, 50), op = uniform(rng, 2);
      in.a = {x, y};
      in.b = {op};
      const long r = op == 0 ? static_cast<long>(x + y) : static_cast<long>(x) - static_cast<long>(y);
      in.answer = std::to_string(r);
      break;
    }
  }
  return in;
}

}  // namespace

std::vector<std::vector<Example>> gen_task(TaskKind kind, std::size_t n, const LanguageFamily& family,
                                           std::uint64_t seed) {
  if (n < 1) throw ConfigError("gen_task: n_examples must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<Example>> out(family.n_languages());
  for (auto& lang : out) lang.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Instance in = sample(kind, rng, family.n_concepts());
    for (std::size_t l = 0; l < family.n_languages(); ++l) out[l].push_back(surface(kind, in, family, l));
  }
  return out;
}

std::string render_text(const Example& e) {
  std::string_view instruction, scaffold;
  switch (e.task) {
    case TaskKind::kNli3: instruction = tp::kNliInstruction, scaffold = tp::kNliScaffold; break;
    case TaskKind::kSpanQa: instruction = tp::kQaInstruction, scaffold = tp::kQaScaffold; break;
    case TaskKind::kMc4: instruction = tp::kMcInstruction, scaffold = tp::kMcScaffold; break;
    case TaskKind::kArith: instruction = tp::kArithInstruction, scaffold = tp::kArithScaffold; break;
  }
  std::string text(tp::kHeader);
  text += instruction;
  text += tp::kInputMarker;
  text += e.prompt;
  text += tp::kResponseDelimiter;
  text += scaffold;
  return text;
}

RenderedPrompt render_prompt(const Example& e, const Tokenizer& tokenizer) {
  if (e.prompt.empty()) throw DataError("render: example has an empty prompt");
  RenderedPrompt r;
  r.tokens.push_back(Tokenizer::kBos);
  const auto body = tokenizer.encode(render_text(e));
  r.tokens.insert(r.tokens.end(), body.begin(), body.end());
  const auto it = std::find(r.tokens.rbegin(), r.tokens.rend(), tokenizer.response_delimiter());
  if (it == r.tokens.rend()) throw DataError("render: prompt lost its response delimiter");
  r.delimiter = static_cast<std::size_t>(r.tokens.rend() - it) - 1;
  return r;
}

RenderedPrompt render_training(const Example& e, const Tokenizer& tokenizer) {
  if (e.response.empty()) throw DataError("render: example has an empty response");
  RenderedPrompt r = render_prompt(e, tokenizer);
  std::string target = " " + e.response;
  if (e.task == TaskKind::kSpanQa) target += "}";
  const auto ids = tokenizer.encode(target);
  r.tokens.insert(r.tokens.end(), ids.begin(), ids.end());
  r.tokens.push_back(Tokenizer::kEos);
  return r;
}

void load_jsonl(const std::filesystem::path& path, const std::function<void(Example)>& sink) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = path.string() + ":" + std::to_string(number) + ": ";
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw DataError(where + "malformed JSON (" + err.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + "expected a JSON object");
    for (const char* field : {"prompt", "response", "language", "task"})
      if (!j.contains(field)) throw DataError(where + "missing field \"" + field + "\"");
    Example e;
    try {
      e.prompt = j.at("prompt").get<std::string>();
      e.response = j.at("response").get<std::string>();
      e.language = j.at("language").get<int>();
      e.task = parse_task(j.at("task").get<std::string>());
    } catch (const nlohmann::json::exception& err) {
      throw DataError(where + "wrong field type (" + err.what() + ")");
    } catch (const ConfigError& err) {
      throw DataError(where + err.what());
    }
    if (e.language < 0) throw DataError(where + "language must be >= 0");
    sink(std::move(e));
  }
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::vector<Example> out;
  load_jsonl(path, [&](Example e) { out.push_back(std::move(e)); });
  return out;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const Example& e : examples) {
    const nlohmann::ordered_json j = {
        {"task", task_name(e.task)}, {"language", e.language}, {"prompt", e.prompt}, {"response", e.response}};
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write to " + path.string() + " failed");
}

void apply_multilingual_prior(BaseWeights& weights, const LanguageFamily& family, double rho) {
  if (!(rho >= 0 && rho <= 1)) throw ConfigError("multilingual prior: rho must lie in [0, 1]");
  const std::size_t d = weights.config.d_model;
  const Scalar a = static_cast<Scalar>(rho), b = static_cast<Scalar>(std::sqrt(1 - rho * rho));
  Tensor& emb = weights.tok_embeddings;
  for (std::size_t l = 1; l < family.n_languages(); ++l) {
    for (std::size_t c = 0; c < family.n_concepts(); ++c) {
      if (family.is_anchor(c)) continue;
      const auto src = static_cast<std::size_t>(family.token(0, c));
      const auto dst = static_cast<std::size_t>(family.token(l, c));
      for (std::size_t j = 0; j < d; ++j) emb.at(dst, j) = a * emb.at(src, j) + b * emb.at(dst, j);
      if (weights.output.defined()) {
        Tensor& out = weights.output;
        for (std::size_t j = 0; j < d; ++j) out.at(j, dst) = a * out.at(j, src) + b * out.at(j, dst);
      }
    }
  }
}

}  // namespace peft
