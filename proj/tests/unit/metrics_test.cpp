#include <gtest/gtest.h>

#include <random>

#include "metric_cases.hpp"
#include "superpose/metrics.hpp"

using namespace superpose;


TEST(Normalize, Rules) {
  EXPECT_EQ(normalize_answer("  The  Quick, brown FOX! "), "quick brown fox");
  EXPECT_EQ(normalize_answer("an a the"), "");
  EXPECT_EQ(normalize_answer("theatre"), "theatre");
  EXPECT_EQ(normalize_answer("rock-n-roll"), "rocknroll");
}

TEST(Metrics, PinnedVectors) {
  ASSERT_EQ(metric_cases::pinned().size(), 15u);
  for (const auto& c : metric_cases::pinned()) {
    SCOPED_TRACE(c.response);
    EXPECT_EQ(best_em_subspan(c.response, c.golds), c.subspan);
    const auto score = answer_em_f1(c.response, c.golds);
    EXPECT_EQ(score.em, c.em);
    EXPECT_NEAR(score.f1, c.f1, 1e-12);
  }
}

TEST(Metrics, SymmetricInGoldOrder) {
  for (const auto& c : metric_cases::pinned()) {
    auto reversed = c.golds;
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_EQ(best_em_subspan(c.response, reversed), c.subspan);
    EXPECT_EQ(answer_em_f1(c.response, reversed).f1, answer_em_f1(c.response, c.golds).f1);
  }
}

TEST(Metrics, ImplicationChainOverFuzzedPairs) {
  static const std::vector<std::string> words{"the", "a", "an", "Paris", "paris", "city", "York", "new",
                                              "x", "cat", "cats", "Tower", "of", "Eiffel", "in", "1999"};
  static const std::string punct = ".,!?'\"-";
  std::mt19937_64 rng(2024);
  auto phrase = [&](std::size_t max_words) {
    std::string out;
    const std::size_t n = rng() % (max_words + 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (i > 0) out += (rng() % 5 == 0) ? "  " : " ";
      out += words[rng() % words.size()];
      if (rng() % 4 == 0) out += punct[rng() % punct.size()];
    }
    return out;
  };
  std::size_t em_hits = 0, span_hits = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::string response = phrase(8);
    std::vector<std::string> golds{phrase(3)};
    if (rng() % 3 == 0) golds.push_back(phrase(2));
    const int span = best_em_subspan(response, golds);
    const auto score = answer_em_f1(response, golds);
    if (score.em == 1) EXPECT_EQ(span, 1) << response << " | " << golds[0];
    if (span == 1) EXPECT_GT(score.f1, 0.0) << response << " | " << golds[0];
    EXPECT_GE(score.f1, 0.0);
    EXPECT_LE(score.f1, 1.0);
    em_hits += score.em;
    span_hits += static_cast<std::size_t>(span);
  }
  EXPECT_GT(span_hits, 0u);
  EXPECT_GT(em_hits, 0u);
}
