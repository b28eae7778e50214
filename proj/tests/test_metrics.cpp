#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "peft/errors.hpp"
#include "peft/metrics.hpp"

using namespace peft;

TEST(Label, StrictParse) {
  EXPECT_EQ(parse_label("2", 3), 2);
  EXPECT_EQ(parse_label(" 3\nmore", 3), 3);
  EXPECT_EQ(parse_label("two", 3), std::nullopt);
  EXPECT_EQ(parse_label("4", 3), std::nullopt);
  EXPECT_EQ(parse_label("0", 3), std::nullopt);
  EXPECT_EQ(parse_label("2.", 3), std::nullopt);
  EXPECT_EQ(parse_label("", 3), std::nullopt);
}

TEST(Accuracy, AllCorrectAndStrictness) {
  const std::vector<std::string> p{"1", "2", "3"};
  const std::vector<int> g{1, 2, 3};
  EXPECT_EQ(accuracy(p, g, 3), 1.0);
  const std::vector<std::string> words{"one", "2", "three"};
  EXPECT_NEAR(accuracy(words, g, 3), 1.0 / 3, 1e-15);
  EXPECT_THROW(accuracy(p, std::vector<int>{1}, 3), DimensionError);
}

TEST(Accuracy, RandomGuessingIsChance) {
  std::mt19937_64 rng(31);
  const int n = 10000;
  std::vector<std::string> p;
  std::vector<int> g;
  for (int i = 0; i < n; ++i) {
    g.push_back(i % 3 + 1);
    p.push_back(std::to_string(rng() % 3 + 1));
  }
  const double sigma = std::sqrt((1.0 / 3) * (2.0 / 3) / n);
  EXPECT_NEAR(accuracy(p, g, 3), 1.0 / 3, 3 * sigma);
}

TEST(F1, PartialOverlap) {
  // P = 2/3, R = 1 → 2PR / (P + R) = 0.8.
  EXPECT_EQ(token_f1("a b c", "a b"), 0.8);
  EXPECT_EQ(exact_match("a b c", "a b"), 0.0);
}

TEST(F1, IdenticalAndDisjoint) {
  EXPECT_EQ(token_f1("the cat", "the cat"), 1.0);
  EXPECT_EQ(exact_match("the cat", "the cat"), 1.0);
  EXPECT_EQ(token_f1("dog", "the cat"), 0.0);
  EXPECT_EQ(exact_match("dog", "the cat"), 0.0);
}

TEST(F1, EmptyCases) {
  EXPECT_EQ(token_f1("", ""), 1.0);
  EXPECT_EQ(exact_match("", ""), 1.0);
  EXPECT_EQ(token_f1("x", ""), 0.0);
  EXPECT_EQ(token_f1("", "x"), 0.0);
}

TEST(F1, ExactMatchImpliesFullF1) {
  for (const char* s : {"Hello, World!", " a  b ", "x.y", "UPPER lower"}) {
    const std::string t = normalize_answer(s);
    ASSERT_EQ(exact_match(s, t), 1.0);
    EXPECT_EQ(token_f1(s, t), 1.0);
  }
}

TEST(Normalize, CasePunctuationWhitespace) {
  EXPECT_EQ(normalize_answer("  Hello,   World! "), "hello world");
  EXPECT_EQ(normalize_answer("{'answer': x}"), "answer x");
  EXPECT_EQ(answer_tokens("A-b c"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(answer_tokens("...").empty());
}

TEST(LastNumber, ExtractionRule) {
  EXPECT_EQ(last_number("so the answer is 42"), 42.0);
  EXPECT_EQ(last_number("12 + 30 = 41"), 41.0);
  EXPECT_EQ(last_number(""), std::nullopt);
  EXPECT_EQ(last_number("no digits"), std::nullopt);
  EXPECT_EQ(last_number("it is -7."), -7.0);
  EXPECT_EQ(last_number("3.5 apples"), 3.5);
}

TEST(MajAt1, Cases) {
  const std::vector<std::string> r{"… answer is 42", "12 + 30 = 41", ""};
  const std::vector<double> g{42, 42, 42};
  EXPECT_NEAR(maj_at_1(r, g), 1.0 / 3, 1e-15);
  EXPECT_EQ(maj_at_1(std::vector<std::string>{"42"}, std::vector<double>{42}), 1.0);
  EXPECT_EQ(maj_at_1(std::vector<std::string>{"41"}, std::vector<double>{42}), 0.0);
  EXPECT_EQ(maj_at_1(std::vector<std::string>{""}, std::vector<double>{42}), 0.0);
}
