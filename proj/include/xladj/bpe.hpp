#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace xladj {

// Subword inventory with byte-pair merges and greedy longest-match
// inference. Continuation pieces carry a "##" prefix.
struct SubwordVocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  std::vector<std::string> units;  // id = index; specials first
  std::unordered_map<std::string, int> ids;
  std::vector<std::pair<std::string, std::string>> merges;

  int size() const { return int(units.size()); }
  const std::string& unit(int id) const { return units[size_t(id)]; }
  int id(std::string_view u) const {
    auto it = ids.find(std::string(u));
    return it == ids.end() ? -1 : it->second;
  }
  bool is_special(int id) const { return id < kNumSpecials; }
};

struct TokenizedSentence {
  std::vector<int> ids;                           // word subwords only, no specials
  std::vector<std::pair<int, int>> word_spans;    // half-open, one per word
};

// Learns byte-pair merges over the sentences and derives the unit
// inventory (at most vocab_size entries). Deterministic: equal-frequency
// merge candidates break ties toward the lexicographically smallest pair.
// The seed is accepted for interface uniformity; training is fully
// deterministic and does not consume it.
SubwordVocab train_subword_vocab(const std::vector<std::vector<std::string>>& sentences,
                                 int vocab_size, uint64_t seed = 0);

// Greedy longest-match segmentation. A word with any unmatchable fragment
// becomes a single [UNK] subword.
TokenizedSentence tokenize_with_spans(const SubwordVocab& vocab,
                                      const std::vector<std::string>& words);

// One unit per line, line number = id, specials first.
void save_vocab(const SubwordVocab& vocab, const std::string& path);
SubwordVocab load_vocab(const std::string& path);

// Splits a UTF-8 string into code points (invalid bytes pass through as
// single-byte units).
std::vector<std::string> split_utf8(std::string_view s);

}  // namespace xladj
