#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2p/errors.hpp"
#include "g2p/model.hpp"
#include "g2p/rng.hpp"

namespace g2p {

// A word with one or more ground-truth pronunciations, in file order.
struct LexiconEntry {
  std::string word;                                       // upper-cased
  std::vector<std::vector<std::string>> pronunciations;  // nonempty each
};

// Splits a word into single-character graphemes at UTF-8 codepoint
// boundaries; ASCII words split per byte.
inline std::vector<std::string> split_graphemes(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    unsigned char c = static_cast<unsigned char>(word[i]);
    std::size_t len = c < 0x80 ? 1 : c < 0xE0 ? 2 : c < 0xF0 ? 3 : 4;
    len = std::min(len, word.size() - i);
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

inline std::string upper_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Dictionary-format lexicon: one entry per line, `WORD PH1 PH2 ...`, with
// alternate pronunciations as `WORD(2) ...` and comments starting `;;;`.
// Entries are grouped by base word in order of first appearance; duplicate
// identical pronunciations are dropped with a warning.
inline std::vector<LexiconEntry> parse_lexicon(
    std::istream& in, const std::function<void(const std::string&)>& warn = {}) {
  std::vector<LexiconEntry> entries;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind(";;;", 0) == 0) continue;

    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (pos < line.size()) {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
      std::size_t start = pos;
      while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t') ++pos;
      if (pos > start) fields.push_back(line.substr(start, pos - start));
    }
    if (fields.empty()) continue;  // blank line
    if (fields.size() < 2)
      fail(ErrorKind::parse,
           "line " + std::to_string(line_no) + ": expected word and phonemes");

    std::string word = upper_ascii(fields[0]);
    // strip a parenthesized variant suffix: WORD(2) -> WORD
    if (word.size() > 3 && word.back() == ')') {
      auto open = word.rfind('(');
      if (open != std::string::npos && open + 1 < word.size() - 1) {
        bool digits = true;
        for (std::size_t i = open + 1; i + 1 < word.size(); ++i)
          digits = digits && std::isdigit(static_cast<unsigned char>(word[i]));
        if (digits) word.resize(open);
      }
    }
    if (word.empty())
      fail(ErrorKind::parse, "line " + std::to_string(line_no) + ": empty word");

    std::vector<std::string> phones(fields.begin() + 1, fields.end());
    auto it = index.find(word);
    if (it == index.end()) {
      index.emplace(word, entries.size());
      entries.push_back({word, {std::move(phones)}});
    } else {
      auto& prons = entries[it->second].pronunciations;
      if (std::find(prons.begin(), prons.end(), phones) != prons.end()) {
        if (warn)
          warn("line " + std::to_string(line_no) + ": duplicate pronunciation for " +
               word + ", dropped");
      } else {
        prons.push_back(std::move(phones));
      }
    }
  }
  return entries;
}

inline void serialize_lexicon(const std::vector<LexiconEntry>& entries,
                              std::ostream& out) {
  for (const auto& e : entries) {
    for (std::size_t p = 0; p < e.pronunciations.size(); ++p) {
      out << e.word;
      if (p > 0) out << "(" << p + 1 << ")";
      for (const auto& ph : e.pronunciations[p]) out << ' ' << ph;
      out << '\n';
    }
  }
}

// Bijection symbol <-> id with reserved ids 0=PAD, 1=BOS, 2=EOS. Corpus
// symbols get ids after the reserved block, in lexicographic order.
class Vocabulary {
 public:
  static constexpr const char* kPadSymbol = "<pad>";
  static constexpr const char* kBosSymbol = "<bos>";
  static constexpr const char* kEosSymbol = "<eos>";

  Vocabulary() = default;

  static Vocabulary from_symbols(const std::set<std::string>& symbols) {
    Vocabulary v;
    v.symbols_ = {kPadSymbol, kBosSymbol, kEosSymbol};
    for (const auto& s : symbols) v.symbols_.push_back(s);
    v.rebuild_index();
    return v;
  }

  // Reconstruction from a saved id-ordered list (checkpoint loading).
  static Vocabulary from_id_order(std::vector<std::string> symbols) {
    if (symbols.size() < 3 || symbols[0] != kPadSymbol ||
        symbols[1] != kBosSymbol || symbols[2] != kEosSymbol)
      fail(ErrorKind::parse, "vocabulary list is missing the reserved ids");
    Vocabulary v;
    v.symbols_ = std::move(symbols);
    v.rebuild_index();
    return v;
  }

  int size() const { return static_cast<int>(symbols_.size()); }

  int id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    return it == index_.end() ? -1 : it->second;
  }

  const std::string& symbol(int id) const {
    if (id < 0 || id >= size())
      fail(ErrorKind::vocabulary, "id " + std::to_string(id) + " out of range");
    return symbols_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& symbols() const { return symbols_; }

  std::vector<int> encode(const std::vector<std::string>& seq) const {
    std::vector<int> ids;
    std::string unknown;
    for (const auto& s : seq) {
      int i = id(s);
      if (i < 0) {
        if (!unknown.empty()) unknown += ",";
        unknown += s;
      } else {
        ids.push_back(i);
      }
    }
    if (!unknown.empty())
      fail(ErrorKind::vocabulary, "unknown symbols: " + unknown);
    return ids;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(symbol(i));
    return out;
  }

  bool operator==(const Vocabulary& other) const {
    return symbols_ == other.symbols_;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (!index_.emplace(symbols_[i], static_cast<int>(i)).second)
        fail(ErrorKind::parse, "duplicate vocabulary symbol " + symbols_[i]);
    }
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
};

// Built from the training split only; dev/test symbols missing here surface
// as vocabulary errors at encode time.
inline std::pair<Vocabulary, Vocabulary> build_vocabularies(
    const std::vector<LexiconEntry>& train_entries) {
  std::set<std::string> graphemes, phonemes;
  for (const auto& e : train_entries) {
    for (const auto& g : split_graphemes(e.word)) graphemes.insert(g);
    for (const auto& pron : e.pronunciations)
      for (const auto& ph : pron) phonemes.insert(ph);
  }
  return {Vocabulary::from_symbols(graphemes), Vocabulary::from_symbols(phonemes)};
}

// Uniform sample of n words (all pronunciations travel together) without
// replacement; returns (reduced train, dev), both in original order.
inline std::pair<std::vector<LexiconEntry>, std::vector<LexiconEntry>> sample_dev(
    const std::vector<LexiconEntry>& train, std::size_t n, std::uint64_t seed) {
  if (n >= train.size() && n > 0)
    fail(ErrorKind::config, "dev sample of " + std::to_string(n) +
                                " words needs a larger training set (" +
                                std::to_string(train.size()) + " words)");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng = derive_stream(seed, "dev-sample");
  rng.shuffle(order);
  std::set<std::size_t> dev_idx(order.begin(), order.begin() + static_cast<long>(n));
  std::vector<LexiconEntry> reduced, dev;
  for (std::size_t i = 0; i < train.size(); ++i)
    (dev_idx.count(i) ? dev : reduced).push_back(train[i]);
  return {reduced, dev};
}

// One padded minibatch. Rows are padded with PAD to the batch maxima; the
// true lengths drive masking downstream (PAD positions never enter the loss
// or the attention window).
struct Batch {
  std::vector<std::vector<int>> graphemes;  // [B x max_graph_len]
  std::vector<std::vector<int>> targets;    // [B x max_target_len], no EOS
  std::vector<int> grapheme_len;
  std::vector<int> target_len;

  int size() const { return static_cast<int>(graphemes.size()); }
};

// Encodes one entry: graphemes of the word, ids of the first listed
// pronunciation (the training target for multi-pronunciation words).
inline std::pair<std::vector<int>, std::vector<int>> encode_entry(
    const LexiconEntry& e, const Vocabulary& graphemes, const Vocabulary& phonemes) {
  return {graphemes.encode(split_graphemes(e.word)),
          phonemes.encode(e.pronunciations.front())};
}

// Seeded per-epoch reshuffle; the last incomplete minibatch is kept.
inline std::vector<Batch> make_batches(const std::vector<LexiconEntry>& entries,
                                       int batch_size, const Vocabulary& graphemes,
                                       const Vocabulary& phonemes,
                                       std::uint64_t seed, int epoch) {
  if (batch_size < 1) fail(ErrorKind::config, "batch size must be >= 1");
  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RngStream rng = derive_stream(seed, "shuffle", static_cast<std::uint64_t>(epoch));
  rng.shuffle(order);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Batch b;
    std::size_t max_g = 0, max_t = 0;
    for (std::size_t i = start; i < end; ++i) {
      auto [g, t] = encode_entry(entries[order[i]], graphemes, phonemes);
      max_g = std::max(max_g, g.size());
      max_t = std::max(max_t, t.size());
      b.grapheme_len.push_back(static_cast<int>(g.size()));
      b.target_len.push_back(static_cast<int>(t.size()));
      b.graphemes.push_back(std::move(g));
      b.targets.push_back(std::move(t));
    }
    for (auto& g : b.graphemes) g.resize(max_g, kPadId);
    for (auto& t : b.targets) t.resize(max_t, kPadId);
    batches.push_back(std::move(b));
  }
  return batches;
}

// Where the splits come from: explicit train/dev/test files, or a train
// file plus a seeded dev sample drawn out of it.
struct SplitSpec {
  std::string train_path;
  std::string dev_path;             // empty when sampling
  std::string test_path;            // optional
  std::size_t dev_sample_size = 0;  // used when dev_path is empty
  std::uint64_t seed = 1;
};

struct ResolvedSplits {
  std::vector<LexiconEntry> train;       // dev removed when sampled
  std::vector<LexiconEntry> dev;
  std::vector<LexiconEntry> test;
  std::vector<LexiconEntry> full_train;  // as loaded, before sampling
};

// Loads the named files and applies dev sampling; dev and train are
// disjoint by construction when the dev set is sampled.
inline ResolvedSplits resolve_splits(
    const SplitSpec& spec,
    const std::function<std::vector<LexiconEntry>(const std::string&)>& load) {
  if (spec.train_path.empty())
    fail(ErrorKind::config, "no training lexicon given");
  ResolvedSplits out;
  out.full_train = load(spec.train_path);
  out.train = out.full_train;
  if (!spec.dev_path.empty()) {
    out.dev = load(spec.dev_path);
  } else if (spec.dev_sample_size > 0) {
    std::tie(out.train, out.dev) =
        sample_dev(out.full_train, spec.dev_sample_size, spec.seed);
  } else {
    fail(ErrorKind::config, "provide a dev lexicon or a dev sample size");
  }
  if (!spec.test_path.empty()) out.test = load(spec.test_path);
  return out;
}

// Expected corpus sizes for the standard experimental setups; loading with
// a named setup verifies the provided files against these counts.
struct StandardSetup {
  std::string name;
  int train_words = 0;   // before dev sampling
  int dev_words = 0;     // 0 when the dev set is sampled from train
  int test_words = 0;
  int dev_sample = 0;    // words sampled out of train when dev_words == 0
  bool retrain_on_full = false;  // tune on sampled dev, retrain on full train
};

inline const std::vector<StandardSetup>& standard_setups() {
  static const std::vector<StandardSetup> setups = {
      {"cmudict", 106837, 0, 12000, 2670, false},
      {"pronlex", 83182, 2400, 4800, 0, false},
      {"nettalk", 14851, 0, 4951, 1000, true},
  };
  return setups;
}

inline const StandardSetup& standard_setup(const std::string& name) {
  for (const auto& s : standard_setups())
    if (s.name == name) return s;
  fail(ErrorKind::config, "unknown dataset '" + name + "'");
}

inline void validate_standard_sizes(const StandardSetup& setup, int train_words,
                                    int dev_words, int test_words) {
  auto check = [&](const char* what, int got, int want) {
    if (want > 0 && got != want)
      fail(ErrorKind::data, std::string(setup.name) + " " + what + " split has " +
                                std::to_string(got) + " words, expected " +
                                std::to_string(want));
  };
  check("train", train_words, setup.train_words);
  check("dev", dev_words, setup.dev_words);
  check("test", test_words, setup.test_words);
}

}  // namespace g2p
