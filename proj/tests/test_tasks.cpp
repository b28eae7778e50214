#include <gtest/gtest.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "peft/errors.hpp"
#include "peft/tasks.hpp"
#include "peft/templates.hpp"
#include "peft/trainer.hpp"

using namespace peft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "peft_forge_tests";
  fs::create_directories(dir);
  return dir / name;
}

LanguageFamily family(std::uint64_t seed = 0, double anchors = 0.5) {
  LanguageFamilyConfig c;
  c.seed = seed;
  c.anchor_fraction = anchors;
  return LanguageFamily(c);
}

}  // namespace

TEST(Tokenizer, RoundTripsArbitraryBytes) {
  const Tokenizer& tok = Tokenizer::standard();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::string s(rng() % 40, '\0');
    for (auto& ch : s) ch = static_cast<char>(rng() % 256);
    EXPECT_EQ(tok.decode(tok.encode(s)), s);
  }
  const std::string text = render_text(gen_task(TaskKind::kMc4, 1, family(), 0)[2][0]);
  EXPECT_EQ(tok.decode(tok.encode(text)), text);
}

TEST(Tokenizer, VocabularyLayout) {
  const Tokenizer& tok = Tokenizer::standard();
  EXPECT_EQ(tok.vocab_size(), 512u);
  EXPECT_EQ(tok.id_of(std::string(templates::kResponseDelimiter)), tok.response_delimiter());
  EXPECT_EQ(tok.encode(templates::kHeader).size(), 1u);
  EXPECT_EQ(tok.encode(" 2").size(), 1u);
  const std::vector<TokenId> special{Tokenizer::kBos, Tokenizer::kPad, Tokenizer::kEos};
  EXPECT_EQ(tok.decode(special), "");
  std::set<std::string> words;
  for (std::size_t i = 0; i < tok.word_slots().size(); ++i) words.insert(tok.word(i));
  EXPECT_EQ(words.size(), tok.word_slots().size());
  // Default family: 32 shared plus 4 private blocks of 32.
  EXPECT_GE(tok.word_slots().size(), 32u + 4u * 32u);
}

TEST(Family, SourceIsIdentityAndPrivateBlocksDisjoint) {
  const LanguageFamily f = family(3);
  const Tokenizer& tok = Tokenizer::standard();
  const std::set<TokenId> slots(tok.word_slots().begin(), tok.word_slots().end());
  std::set<TokenId> source;
  std::size_t anchors = 0;
  for (std::size_t c = 0; c < f.n_concepts(); ++c) {
    EXPECT_TRUE(slots.count(f.token(0, c)));
    EXPECT_TRUE(source.insert(f.token(0, c)).second);
    anchors += f.is_anchor(c);
    for (std::size_t l = 1; l < 4; ++l) EXPECT_EQ(f.token(l, c) == f.token(0, c), f.is_anchor(c));
  }
  EXPECT_EQ(anchors, 32u);
  std::set<TokenId> seen;
  for (std::size_t l = 0; l < 4; ++l)
    for (TokenId t : f.private_tokens(l)) EXPECT_TRUE(seen.insert(t).second);
}

TEST(Family, FullyAnchoredTargetEqualsSource) {
  const LanguageFamily f = family(1, 1.0);
  const auto sets = gen_task(TaskKind::kNli3, 50, f, 4);
  for (std::size_t l = 1; l < 4; ++l)
    for (std::size_t i = 0; i < 50; ++i) {
      EXPECT_EQ(render_training(sets[l][i]).tokens, render_training(sets[0][i]).tokens);
      EXPECT_EQ(sets[l][i].language, static_cast<int>(l));
    }
}

TEST(Family, TooManyConceptsRejected) {
  LanguageFamilyConfig c;
  c.n_concepts = 400;
  EXPECT_THROW(LanguageFamily{c}, ConfigError);
  c.n_concepts = 64;
  c.anchor_fraction = 1.5;
  EXPECT_THROW(LanguageFamily{c}, ConfigError);
}

TEST(GenTask, DeterministicPerSeed) {
  const LanguageFamily f = family();
  for (TaskKind k : {TaskKind::kNli3, TaskKind::kSpanQa, TaskKind::kMc4, TaskKind::kArith}) {
    EXPECT_EQ(gen_task(k, 30, f, 9), gen_task(k, 30, f, 9));
    EXPECT_NE(gen_task(k, 30, f, 9), gen_task(k, 30, f, 10));
  }
}

TEST(GenTask, Nli3LabelsUniform) {
  const auto sets = gen_task(TaskKind::kNli3, 10000, family(), 1);
  std::array<int, 3> counts{};
  for (const auto& e : sets[0]) ++counts[static_cast<std::size_t>(std::stoi(e.response) - 1)];
  for (int n : counts) EXPECT_NEAR(n / 10000.0, 1.0 / 3, 0.02);
}

TEST(GenTask, SpanAnswersAreContextSubstrings) {
  const auto sets = gen_task(TaskKind::kSpanQa, 500, family(), 2);
  for (const auto& lang : sets)
    for (const auto& e : lang) {
      const auto q = e.prompt.find(templates::kQuestion);
      ASSERT_NE(q, std::string::npos);
      EXPECT_NE(e.prompt.substr(0, q).find(e.response), std::string::npos) << e.prompt;
    }
}

TEST(GenTask, Mc4AndArithAnswers) {
  const auto mc4 = gen_task(TaskKind::kMc4, 200, family(), 3);
  for (const auto& e : mc4[1]) {
    const int a = std::stoi(e.response);
    EXPECT_GE(a, 1);
    EXPECT_LE(a, 4);
  }
  const auto arith = gen_task(TaskKind::kArith, 200, family(), 3);
  for (const auto& e : arith[0]) {
    // "Question:\n <x> <op> <y>" with op plus (concept 0) or minus (concept 1).
    std::istringstream in(e.prompt.substr(templates::kQuestionFirst.size()));
    long x, y;
    std::string op;
    in >> x >> op >> y;
    const long want = op == family().word(0, 0) ? x + y : x - y;
    EXPECT_EQ(e.response, std::to_string(want));
  }
}

TEST(Templates, RenderingsEndWithScaffold) {
  const LanguageFamily f = family();
  EXPECT_TRUE(render_text(gen_task(TaskKind::kNli3, 1, f, 0)[0][0]).ends_with("The relation number is"));
  EXPECT_TRUE(render_text(gen_task(TaskKind::kMc4, 1, f, 0)[0][0]).ends_with("The correct choice number is"));
  EXPECT_TRUE(render_text(gen_task(TaskKind::kSpanQa, 1, f, 0)[0][0]).ends_with("{'answer':"));
  EXPECT_TRUE(render_text(gen_task(TaskKind::kArith, 1, f, 0)[0][0]).ends_with("### Response:"));
  const std::string t = render_text(gen_task(TaskKind::kNli3, 1, f, 0)[0][0]);
  EXPECT_TRUE(t.starts_with(templates::kHeader));
  EXPECT_NE(t.find(templates::kNliInstruction), std::string::npos);
}

TEST(Render, DelimiterAndTrainingTail) {
  const Tokenizer& tok = Tokenizer::standard();
  for (TaskKind k : {TaskKind::kNli3, TaskKind::kSpanQa, TaskKind::kMc4, TaskKind::kArith}) {
    const Example e = gen_task(k, 1, family(), 5)[1][0];
    const RenderedPrompt p = render_prompt(e);
    EXPECT_EQ(p.tokens.front(), Tokenizer::kBos);
    EXPECT_EQ(p.tokens[p.delimiter], tok.response_delimiter());
    const RenderedPrompt t = render_training(e);
    EXPECT_EQ(t.delimiter, p.delimiter);
    EXPECT_EQ(std::vector<TokenId>(t.tokens.begin(), t.tokens.begin() + p.tokens.size()), p.tokens);
    EXPECT_EQ(t.tokens.back(), Tokenizer::kEos);
    const std::vector<TokenId> tail(t.tokens.begin() + p.tokens.size(), t.tokens.end() - 1);
    EXPECT_EQ(tok.decode(tail), " " + e.response + (k == TaskKind::kSpanQa ? "}" : ""));
    const auto mask = loss_mask(t.tokens, tok.response_delimiter());
    EXPECT_EQ(mask[t.delimiter], 0);
    EXPECT_EQ(mask[t.delimiter + 1], 1);
  }
  Example e = gen_task(TaskKind::kNli3, 1, family(), 5)[0][0];
  e.response.clear();
  EXPECT_THROW(render_training(e), DataError);
  e.prompt.clear();
  EXPECT_THROW(render_prompt(e), DataError);
}

TEST(Jsonl, EmptyFileIsEmptyStream) {
  const fs::path p = scratch("empty.jsonl");
  std::ofstream(p).close();
  EXPECT_TRUE(load_jsonl(p).empty());
}

TEST(Jsonl, MissingFieldCitesLine) {
  const fs::path p = scratch("bad.jsonl");
  std::ofstream(p) << R"({"prompt":"a","response":"1","language":0,"task":"nli3"})" << '\n'
                   << R"({"prompt":"b","language":0,"task":"nli3"})" << '\n';
  try {
    load_jsonl(p);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
    EXPECT_NE(msg.find("response"), std::string::npos) << msg;
  }
  std::ofstream(p) << "{not json\n";
  EXPECT_THROW(load_jsonl(p), DataError);
}

TEST(Jsonl, RoundTripPreservesFields) {
  const auto sets = gen_task(TaskKind::kSpanQa, 20, family(), 6);
  std::vector<Example> all;
  for (const auto& l : sets) all.insert(all.end(), l.begin(), l.end());
  all[0].prompt += "\n\"quoted\" \\ tab\t";
  const fs::path p = scratch("rt.jsonl");
  save_jsonl(p, all);
  EXPECT_EQ(load_jsonl(p), all);
}

TEST(Prior, PullsTargetRowsTowardsSource) {
  const ModelConfig c = builtin_config("toy");
  const LanguageFamily f = family(2);
  const BaseWeights base = init_random(c, 1);
  BaseWeights w = base.clone();
  apply_multilingual_prior(w, f, 1.0);
  for (std::size_t concept_id = 0; concept_id < f.n_concepts(); ++concept_id) {
    const TokenId src = f.token(0, concept_id);
    for (std::size_t l = 0; l < 4; ++l) {
      const TokenId t = f.token(l, concept_id);
      for (std::size_t j = 0; j < c.d_model; ++j) {
        EXPECT_EQ(w.tok_embeddings.at(t, j), base.tok_embeddings.at(src, j));
        EXPECT_EQ(w.output.at(j, t), base.output.at(j, src));
      }
    }
  }
  BaseWeights none = base.clone();
  apply_multilingual_prior(none, f, 0.0);
  EXPECT_TRUE(none.identical(base));
  EXPECT_THROW(apply_multilingual_prior(none, f, 1.5), ConfigError);
}
