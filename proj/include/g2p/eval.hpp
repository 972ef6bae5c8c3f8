#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "g2p/data.hpp"
#include "g2p/errors.hpp"

namespace g2p {

// Unit-cost Levenshtein distance between two symbol sequences.
inline int edit_distance(const std::vector<std::string>& pred,
                         const std::vector<std::string>& truth) {
  std::size_t n = pred.size(), m = truth.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (pred[i - 1] == truth[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

struct WordResult {
  std::string word;
  std::vector<std::string> predicted;
  std::vector<std::string> chosen_truth;
  int distance = 0;
  int truth_length = 0;
  double per_word_per = 0.0;  // distance / truth_length; can exceed 1
  bool correct = false;
};

// Scores one prediction against every listed pronunciation and keeps the
// ground truth with the lowest per-word PER; ties go to the first listed.
inline WordResult score_word(const std::vector<std::string>& pred,
                             const LexiconEntry& entry) {
  if (entry.pronunciations.empty())
    fail(ErrorKind::contract, "entry " + entry.word + " has no pronunciations");
  WordResult best;
  best.word = entry.word;
  best.predicted = pred;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (const auto& truth : entry.pronunciations) {
    if (truth.empty())
      fail(ErrorKind::contract, "entry " + entry.word + " has an empty pronunciation");
    int d = edit_distance(pred, truth);
    double ratio = static_cast<double>(d) / static_cast<double>(truth.size());
    if (ratio < best_ratio) {
      best_ratio = ratio;
      best.chosen_truth = truth;
      best.distance = d;
      best.truth_length = static_cast<int>(truth.size());
    }
  }
  best.per_word_per = best_ratio;
  best.correct = best.distance == 0;
  return best;
}

// Word-length buckets: short <= 6, medium {7,8}, long {9,10}, very long >= 11.
inline constexpr const char* kLengthBucketNames[4] = {"short", "medium", "long",
                                                      "very_long"};
inline int length_bucket(int grapheme_length) {
  if (grapheme_length <= 6) return 0;
  if (grapheme_length <= 8) return 1;
  if (grapheme_length <= 10) return 2;
  return 3;
}

// Per-word-PER buckets over incorrect words. Endpoints are half-open below:
// small (0, 0.10], medium (0.10, 0.20], large (0.20, 0.30], very large > 0.30.
inline constexpr const char* kPerBucketNames[4] = {"small", "medium", "large",
                                                   "very_large"};
inline int per_word_per_bucket(double per_word_per) {
  if (per_word_per <= 0.10) return 0;
  if (per_word_per <= 0.20) return 1;
  if (per_word_per <= 0.30) return 2;
  return 3;
}

struct LengthBucketRow {
  int words = 0;
  int errors = 0;
  double wer = 0.0;
};

struct EvalReport {
  double per = 0.0;  // percent
  double wer = 0.0;  // percent
  std::vector<WordResult> words;
  LengthBucketRow length_buckets[4];
  int per_histogram[4] = {0, 0, 0, 0};  // incorrect words only
};

// PER = 100 . total distance / total ground-truth phonemes;
// WER = 100 . words with at least one phone error / total words.
inline EvalReport aggregate(std::vector<WordResult> results) {
  if (results.empty()) fail(ErrorKind::contract, "aggregate over zero words");
  EvalReport rep;
  long total_dist = 0, total_truth = 0, errors = 0;
  for (const auto& r : results) {
    total_dist += r.distance;
    total_truth += r.truth_length;
    if (!r.correct) ++errors;
    int lb = length_bucket(static_cast<int>(split_graphemes(r.word).size()));
    rep.length_buckets[lb].words += 1;
    if (!r.correct) {
      rep.length_buckets[lb].errors += 1;
      rep.per_histogram[per_word_per_bucket(r.per_word_per)] += 1;
    }
  }
  rep.per = 100.0 * static_cast<double>(total_dist) / static_cast<double>(total_truth);
  rep.wer = 100.0 * static_cast<double>(errors) / static_cast<double>(results.size());
  for (auto& b : rep.length_buckets)
    b.wer = b.words == 0 ? 0.0 : 100.0 * b.errors / b.words;
  rep.words = std::move(results);
  return rep;
}

// Incorrect words sorted by edit distance descending, ties by word; the
// top k are exported for manual error categorization.
inline std::vector<WordResult> worst_errors(const std::vector<WordResult>& results,
                                            std::size_t k) {
  std::vector<WordResult> errors;
  for (const auto& r : results)
    if (!r.correct) errors.push_back(r);
  std::sort(errors.begin(), errors.end(), [](const WordResult& a, const WordResult& b) {
    if (a.distance != b.distance) return a.distance > b.distance;
    return a.word < b.word;
  });
  if (errors.size() > k) errors.resize(k);
  return errors;
}

namespace detail {
inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}
inline std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ' ';
    out += parts[i];
  }
  return out;
}
}  // namespace detail

// Key-value summary followed by a per-word table; percentages to two
// decimals, bit-stable for identical inputs.
inline void write_report(const EvalReport& rep, std::ostream& out,
                         bool buckets = false) {
  out << "PER=" << detail::fixed2(rep.per) << "\n";
  out << "WER=" << detail::fixed2(rep.wer) << "\n";
  out << "WORDS=" << rep.words.size() << "\n";
  long errors = 0;
  for (const auto& r : rep.words) errors += r.correct ? 0 : 1;
  out << "ERRORS=" << errors << "\n";
  if (buckets) {
    for (int b = 0; b < 4; ++b)
      out << "LENGTH_" << kLengthBucketNames[b] << "="
          << rep.length_buckets[b].words << " words, "
          << rep.length_buckets[b].errors << " errors, WER "
          << detail::fixed2(rep.length_buckets[b].wer) << "\n";
    for (int b = 0; b < 4; ++b)
      out << "PERBUCKET_" << kPerBucketNames[b] << "=" << rep.per_histogram[b]
          << "\n";
  }
  out << "#WORD\tCORRECT\tDIST\tTRUTH_LEN\tPER\tPREDICTED\tTRUTH\n";
  for (const auto& r : rep.words) {
    out << r.word << '\t' << (r.correct ? 1 : 0) << '\t' << r.distance << '\t'
        << r.truth_length << '\t' << detail::fixed2(100.0 * r.per_word_per) << '\t'
        << detail::join(r.predicted) << '\t' << detail::join(r.chosen_truth)
        << '\n';
  }
}

}  // namespace g2p
