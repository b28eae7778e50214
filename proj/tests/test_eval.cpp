#include <gtest/gtest.h>

#include <cmath>

#include "peft/adapters.hpp"
#include "peft/errors.hpp"
#include "peft/eval.hpp"

using namespace peft;

namespace {

std::vector<Example> flatten(const std::vector<std::vector<Example>>& sets, std::size_t per_language) {
  std::vector<Example> out;
  for (const auto& l : sets) out.insert(out.end(), l.begin(), l.begin() + static_cast<std::ptrdiff_t>(per_language));
  return out;
}

const LanguageFamily& family() {
  static const LanguageFamily f{LanguageFamilyConfig{}};
  return f;
}

}  // namespace

TEST(Score, PerTaskMetrics) {
  EXPECT_EQ(score_response(TaskKind::kNli3, " 2 and more", "2")[0].second, 1.0);
  EXPECT_EQ(score_response(TaskKind::kNli3, "two", "2")[0].second, 0.0);
  EXPECT_EQ(score_response(TaskKind::kMc4, " 4", "4")[0].second, 1.0);
  const auto qa = score_response(TaskKind::kSpanQa, " word other}\n", "word other");
  EXPECT_EQ(qa[0], (std::pair<std::string, double>{"f1", 1.0}));
  EXPECT_EQ(qa[1], (std::pair<std::string, double>{"em", 1.0}));
  EXPECT_EQ(score_response(TaskKind::kArith, " 12 + 30 = 41", "42")[0].second, 0.0);
  EXPECT_EQ(score_response(TaskKind::kArith, " -8", "-8")[0].second, 1.0);
}

TEST(Evaluate, ReportShapeAndSettings) {
  const ModelConfig c = builtin_config("toy");
  const BaseWeights w = init_random(c, 1);
  const auto ex = flatten(gen_task(TaskKind::kSpanQa, 5, family(), 2), 5);
  EvalOptions o;
  o.decode.temperature = 0.1;
  o.decode.top_p = 0.75;
  o.decode.max_new_tokens = 3;
  const EvalReport r = evaluate(w, nullptr, ex, o);
  ASSERT_EQ(r.languages.size(), 4u);
  EXPECT_EQ(r.average.size(), 2u);
  EXPECT_EQ(r.task, "span_qa");
  EXPECT_EQ(r.decode.temperature, 0.1);
  EXPECT_EQ(r.decode.top_p, 0.75);
  const std::string json = r.to_json();
  EXPECT_NE(json.find("\"temperature\": 0.1,"), std::string::npos) << json;
  EXPECT_NE(json.find("\"top_p\": 0.75,"), std::string::npos) << json;
  EXPECT_EQ(json.find("runtime"), std::string::npos);
  EXPECT_NE(r.to_json(true).find("runtime_seconds"), std::string::npos);
  EXPECT_EQ(r.to_csv().substr(0, 28), "method,language,metric,value");
}

TEST(Evaluate, ZeroInitLoraEqualsBaseReport) {
  const ModelConfig c = builtin_config("toy");
  const BaseWeights w = init_random(c, 2);
  const Adapter a = Adapter::init(c, parse_adapter_spec("lora:r=4"), 2);
  const auto ex = flatten(gen_task(TaskKind::kNli3, 10, family(), 3), 10);
  EvalOptions o;
  o.decode.temperature = 0.7;
  o.decode.max_new_tokens = 3;
  EXPECT_EQ(evaluate(w, &a, ex, o).to_json(), evaluate(w, nullptr, ex, o).to_json());
}

TEST(Evaluate, IndependentOfThreadsAndBatching) {
  const ModelConfig c = builtin_config("toy");
  const BaseWeights w = init_random(c, 3);
  const auto ex = flatten(gen_task(TaskKind::kMc4, 8, family(), 4), 8);
  EvalOptions o;
  o.decode.temperature = 1.0;
  o.decode.max_new_tokens = 2;
  const std::string one = evaluate(w, nullptr, ex, o).to_json();
  o.threads = 4;
  o.batch_size = 3;
  EXPECT_EQ(evaluate(w, nullptr, ex, o).to_json(), one);
}

TEST(Evaluate, GreedyIgnoresTopP) {
  const ModelConfig c = builtin_config("toy");
  const BaseWeights w = init_random(c, 4);
  const auto ex = flatten(gen_task(TaskKind::kArith, 6, family(), 5), 6);
  EvalOptions o;
  o.decode.max_new_tokens = 2;
  const auto a = evaluate(w, nullptr, ex, o);
  o.decode.top_p = 0.3;
  const auto b = evaluate(w, nullptr, ex, o);
  for (std::size_t l = 0; l < a.languages.size(); ++l) EXPECT_EQ(a.languages[l].metrics, b.languages[l].metrics);
}

TEST(Evaluate, MixedTasksRejected) {
  const ModelConfig c = builtin_config("toy");
  const BaseWeights w = init_random(c, 4);
  auto ex = flatten(gen_task(TaskKind::kNli3, 1, family(), 5), 1);
  ex[1].task = TaskKind::kMc4;
  EXPECT_THROW(evaluate(w, nullptr, ex, {}), DataError);
  EXPECT_THROW(evaluate(w, nullptr, std::vector<Example>{}, {}), DataError);
}

// A frozen base whose head can only emit the three label tokens, uniformly:
// one embedding coordinate is a large constant, and only that coordinate
// feeds the label columns. Labels carry no information about the gold answer,
// so accuracy must sit at 1/3 within sampling error.
TEST(Evaluate, UninformedBaseScoresChance) {
  const ModelConfig c = builtin_config("toy");
  BaseWeights w = init_random(c, 5);
  for (std::size_t t = 0; t < c.vocab_size; ++t) w.tok_embeddings.at(t, 0) = 50;
  for (auto& v : w.output.data()) v = 0;
  const Tokenizer& tok = Tokenizer::standard();
  for (const char* label : {" 1", " 2", " 3"}) w.output.at(0, static_cast<std::size_t>(*tok.id_of(label))) = 4;
  const std::size_t per = 1000;
  const auto ex = flatten(gen_task(TaskKind::kNli3, per, family(), 6), per);
  EvalOptions o;
  o.decode.temperature = 1.0;
  o.decode.max_new_tokens = 1;
  o.threads = 4;
  const EvalReport r = evaluate(w, nullptr, ex, o);
  const double sigma = std::sqrt((1.0 / 3) * (2.0 / 3) / static_cast<double>(ex.size()));
  EXPECT_NEAR(r.average_of("accuracy"), 1.0 / 3, 3 * sigma);
}
