#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "g2p/data.hpp"
#include "g2p/eval.hpp"
#include "g2p/model.hpp"
#include "g2p/rng.hpp"

namespace g2p {

// Attention trace kept with a prediction for analysis output.
struct AttentionTrace {
  double center = 0.0;
  int window_lo = 1;
  int window_hi = 1;
  std::vector<float> weights;
};

struct Prediction {
  std::string word;
  std::vector<int> phoneme_ids;  // EOS stripped; never contains reserved ids
  std::vector<AttentionTrace> attention;  // per step, when requested
};

inline int decode_cap(int source_length) {
  return std::max(20, 2 * source_length + 5);
}

// Greedy decoding: start from BOS, repeatedly feed the argmax back in, stop
// at EOS or after max(20, 2*T_g + 5) steps. PAD and BOS are excluded from
// the argmax so the output never contains reserved ids. Pure function of
// (word, parameters).
template <typename S>
Prediction greedy_decode_ids(const std::vector<int>& grapheme_ids,
                             const ParameterSet<S>& params,
                             bool keep_attention = false) {
  Tape<S> tape(false);
  auto enc = encode(tape, grapheme_ids, params);
  auto state = initial_decoder_state(tape, enc, params);

  Prediction pred;
  int max_len = decode_cap(static_cast<int>(grapheme_ids.size()));
  int prev = kBosId;
  for (int t = 0; t < max_len; ++t) {
    auto out = decode_step(tape, prev, state, enc, params);
    const auto& logits = out.logits.data();
    int best = kEosId;
    for (int i = 0; i < static_cast<int>(logits.size()); ++i) {
      if (i == kPadId || i == kBosId) continue;
      if (logits[i] > logits[best]) best = i;
    }
    if (keep_attention && out.attention) {
      AttentionTrace tr;
      tr.center = out.attention->center;
      tr.window_lo = out.attention->window_lo;
      tr.window_hi = out.attention->window_hi;
      for (auto w : out.attention->weights.data())
        tr.weights.push_back(static_cast<float>(w));
      pred.attention.push_back(std::move(tr));
    }
    if (best == kEosId) break;
    pred.phoneme_ids.push_back(best);
    prev = best;
  }
  return pred;
}

template <typename S>
Prediction predict_word(const std::string& word, const ParameterSet<S>& params,
                        const Vocabulary& graphemes, bool keep_attention = false) {
  auto ids = graphemes.encode(split_graphemes(upper_ascii(word)));
  auto pred = greedy_decode_ids(ids, params, keep_attention);
  pred.word = upper_ascii(word);
  return pred;
}

// Greedy-decodes every entry and scores it against its listed
// pronunciations. Words containing graphemes unseen in training cannot be
// decoded and are scored as empty predictions (all phones wrong). Words are
// independent; with workers > 1 they decode in parallel and are aggregated
// in input order, so the report is identical either way.
template <typename S>
EvalReport evaluate_entries(const std::vector<LexiconEntry>& entries,
                            const ParameterSet<S>& params,
                            const Vocabulary& graphemes, const Vocabulary& phonemes,
                            int workers = 1) {
  if (entries.empty()) fail(ErrorKind::data, "cannot evaluate an empty lexicon");
  std::vector<WordResult> results(entries.size());
  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::vector<std::string> symbols;
      try {
        auto ids = graphemes.encode(split_graphemes(entries[i].word));
        symbols = phonemes.decode(greedy_decode_ids(ids, params).phoneme_ids);
      } catch (const G2pError&) {
        // unknown grapheme: scored as an empty prediction
      }
      results[i] = score_word(symbols, entries[i]);
    }
  };
  if (workers <= 1) {
    score_range(0, entries.size());
  } else {
    std::vector<std::thread> pool;
    std::size_t chunk = (entries.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      std::size_t begin = std::min(entries.size(), w * chunk);
      std::size_t end = std::min(entries.size(), begin + chunk);
      if (begin < end) pool.emplace_back(score_range, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  return aggregate(std::move(results));
}

// Whole-sequence plurality vote over the members' outputs; ties are broken
// uniformly at random from the given stream.
inline std::vector<int> ensemble_vote(const std::vector<std::vector<int>>& outputs,
                                      RngStream& rng) {
  if (outputs.size() < 2)
    fail(ErrorKind::contract, "ensemble vote needs at least two predictions");
  std::map<std::vector<int>, int> counts;
  for (const auto& seq : outputs) counts[seq] += 1;
  int best = 0;
  for (const auto& [seq, n] : counts) best = std::max(best, n);
  std::vector<const std::vector<int>*> winners;
  for (const auto& [seq, n] : counts)
    if (n == best) winners.push_back(&seq);
  return *winners[rng.below(winners.size())];
}

}  // namespace g2p
