#include "g2p/eval.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "edit_oracle.hpp"
#include "g2p/rng.hpp"

using namespace g2p;
namespace gt = g2p::testing;

namespace {

std::vector<std::string> seq(std::initializer_list<const char*> parts) {
  return {parts.begin(), parts.end()};
}

WordResult fake_result(const std::string& word, int distance, int truth_len) {
  WordResult r;
  r.word = word;
  r.distance = distance;
  r.truth_length = truth_len;
  r.per_word_per = static_cast<double>(distance) / truth_len;
  r.correct = distance == 0;
  return r;
}

}  // namespace

TEST(EditDistance, IdenticalSequences) {
  EXPECT_EQ(edit_distance(seq({"K", "AE", "T"}), seq({"K", "AE", "T"})), 0);
  EXPECT_EQ(edit_distance({}, {}), 0);
}

TEST(EditDistance, EmptyPredictionCostsTruthLength) {
  EXPECT_EQ(edit_distance({}, seq({"A", "B", "C", "D"})), 4);
  EXPECT_EQ(edit_distance(seq({"A", "B"}), {}), 2);
}

// The LASTS failure case: prediction L AE S against truth L AE S T S.
TEST(EditDistance, LastsExample) {
  EXPECT_EQ(edit_distance(seq({"L", "AE", "S"}), seq({"L", "AE", "S", "T", "S"})), 2);
}

TEST(EditDistance, MatchesExhaustiveOracleOnRandomPairs) {
  RngStream rng(1);
  const std::vector<std::string> alphabet = {"A", "B", "C"};
  for (int trial = 0; trial < 500; ++trial) {
    auto draw = [&]() {
      std::vector<std::string> s(rng.below(7));
      for (auto& x : s) x = alphabet[rng.below(3)];
      return s;
    };
    auto a = draw(), b = draw();
    EXPECT_EQ(edit_distance(a, b), gt::edit_distance_oracle(a, b));
  }
}

// Metric properties: identity, symmetry, triangle inequality.
TEST(EditDistance, MetricProperties) {
  RngStream rng(2);
  const std::vector<std::string> alphabet = {"A", "B", "C", "D"};
  auto draw = [&]() {
    std::vector<std::string> s(rng.below(9));
    for (auto& x : s) x = alphabet[rng.below(4)];
    return s;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    auto a = draw(), b = draw(), c = draw();
    int ab = edit_distance(a, b);
    EXPECT_EQ(ab, edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, a), 0);
    if (ab == 0) {
      EXPECT_EQ(a, b);
    }
    EXPECT_LE(ab, edit_distance(a, c) + edit_distance(c, b));
  }
}

TEST(ScoreWord, SinglePronunciationChosen) {
  LexiconEntry e{"CAT", {seq({"K", "AE", "T"})}};
  auto r = score_word(seq({"K", "AA", "T"}), e);
  EXPECT_EQ(r.chosen_truth, e.pronunciations[0]);
  EXPECT_EQ(r.distance, 1);
  EXPECT_FALSE(r.correct);
}

TEST(ScoreWord, ExactMatchOnSecondPronunciation) {
  LexiconEntry e{"A", {seq({"AH"}), seq({"EY"})}};
  auto r = score_word(seq({"EY"}), e);
  EXPECT_TRUE(r.correct);
  EXPECT_EQ(r.distance, 0);
  EXPECT_EQ(r.chosen_truth, seq({"EY"}));
}

// Equal distances 1 vs 1 over truths of lengths 3 and 5: the length-5 truth
// wins on ratio (0.2 < 0.333).
TEST(ScoreWord, LowestRatioWins) {
  LexiconEntry e{"X",
                 {seq({"A", "B", "C"}), seq({"A", "B", "C", "D", "E"})}};
  auto r = score_word(seq({"A", "B", "C", "D"}), e);
  EXPECT_EQ(r.truth_length, 5);
  EXPECT_EQ(r.distance, 1);
  EXPECT_NEAR(r.per_word_per, 0.2, 1e-12);
}

TEST(ScoreWord, OrderFreeExceptTieBreak) {
  auto pred = seq({"A", "B"});
  LexiconEntry e1{"X", {seq({"A", "B", "C"}), seq({"A", "B"})}};
  LexiconEntry e2{"X", {seq({"A", "B"}), seq({"A", "B", "C"})}};
  EXPECT_EQ(score_word(pred, e1).distance, score_word(pred, e2).distance);
  // exact tie on ratio: first listed wins
  LexiconEntry tie{"X", {seq({"A", "C"}), seq({"B", "A"})}};
  auto r = score_word(seq({"A", "A"}), tie);
  EXPECT_EQ(r.chosen_truth, seq({"A", "C"}));
}

TEST(Aggregate, WerFormula) {
  std::vector<WordResult> results = {fake_result("A", 0, 3), fake_result("B", 0, 3),
                                     fake_result("C", 0, 3), fake_result("D", 1, 4)};
  auto rep = aggregate(results);
  EXPECT_DOUBLE_EQ(rep.wer, 25.0);
}

TEST(Aggregate, AllCorrect) {
  auto rep = aggregate({fake_result("A", 0, 2), fake_result("B", 0, 5)});
  EXPECT_DOUBLE_EQ(rep.per, 0.0);
  EXPECT_DOUBLE_EQ(rep.wer, 0.0);
}

TEST(Aggregate, PerFormula) {
  // distances [2, 0], truth lengths [5, 3] -> PER = 100 * 2/8 = 25.00
  auto rep = aggregate({fake_result("AB", 2, 5), fake_result("CD", 0, 3)});
  EXPECT_DOUBLE_EQ(rep.per, 25.0);
  EXPECT_DOUBLE_EQ(rep.wer, 50.0);
}

TEST(Aggregate, EmptyResultsIsContractError) {
  EXPECT_THROW(aggregate({}), G2pError);
}

TEST(LengthBuckets, Boundaries) {
  EXPECT_EQ(length_bucket(5), 0);   // PASTE
  EXPECT_EQ(length_bucket(6), 0);
  EXPECT_EQ(length_bucket(7), 1);
  EXPECT_EQ(length_bucket(8), 1);
  EXPECT_EQ(length_bucket(9), 2);
  EXPECT_EQ(length_bucket(10), 2);
  EXPECT_EQ(length_bucket(11), 3);
}

TEST(PerBuckets, Boundaries) {
  EXPECT_EQ(per_word_per_bucket(0.10), 0);  // boundary lands small
  EXPECT_EQ(per_word_per_bucket(0.15), 1);
  EXPECT_EQ(per_word_per_bucket(0.20), 1);
  EXPECT_EQ(per_word_per_bucket(0.25), 2);
  EXPECT_EQ(per_word_per_bucket(0.30), 2);
  EXPECT_EQ(per_word_per_bucket(0.40), 3);  // the LASTS case, 2/5
}

TEST(PerBuckets, OnlyIncorrectWordsCounted) {
  auto rep = aggregate({fake_result("GOOD", 0, 4), fake_result("LASTS", 2, 5)});
  EXPECT_EQ(rep.per_histogram[0], 0);
  EXPECT_EQ(rep.per_histogram[3], 1);  // 0.40 -> very large
}

TEST(WorstErrors, AllCorrectGivesEmpty) {
  EXPECT_TRUE(worst_errors({fake_result("A", 0, 3)}, 5).empty());
}

TEST(WorstErrors, KLargerThanErrorCount) {
  auto out = worst_errors({fake_result("A", 1, 3), fake_result("B", 2, 3)}, 10);
  EXPECT_EQ(out.size(), 2u);
}

TEST(WorstErrors, TopKByDistanceThenWord) {
  auto out = worst_errors({fake_result("X", 5, 6), fake_result("Y", 4, 6),
                           fake_result("Z", 1, 6)},
                          2);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].word, "X");
  EXPECT_EQ(out[1].word, "Y");

  auto tied = worst_errors({fake_result("B", 4, 6), fake_result("A", 4, 6)}, 2);
  EXPECT_EQ(tied[0].word, "A");
}

TEST(Report, BitStableSerialization) {
  auto rep = aggregate({fake_result("AB", 2, 5), fake_result("CD", 0, 3)});
  std::ostringstream a, b;
  write_report(rep, a, true);
  write_report(rep, b, true);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str().find("PER=25.00"), std::string::npos);
  EXPECT_NE(a.str().find("WER=50.00"), std::string::npos);
}
