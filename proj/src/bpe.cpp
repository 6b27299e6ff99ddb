#include "xladj/bpe.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace xladj {

namespace {

const char* kSpecialNames[SubwordVocab::kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                         "[MASK]"};

std::string positional(const std::string& seg, bool initial) {
  return initial ? seg : "##" + seg;
}

// Inventory = specials + every alphabet char (plain), continuation chars
// observed mid-word, and the positional forms of the current segmentation.
std::set<std::string> build_inventory(const std::map<std::string, int64_t>& word_freq,
                                      const std::map<std::string, std::vector<std::string>>& segs,
                                      const std::set<std::string>& alphabet,
                                      const std::set<std::string>& continuation_chars) {
  std::set<std::string> inv;
  for (const auto& c : alphabet) inv.insert(c);
  for (const auto& c : continuation_chars) inv.insert("##" + c);
  for (const auto& [word, freq] : word_freq) {
    (void)freq;
    const auto& s = segs.at(word);
    for (size_t i = 0; i < s.size(); ++i) inv.insert(positional(s[i], i == 0));
  }
  return inv;
}

}  // namespace

std::vector<std::string> split_utf8(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char b = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((b & 0x80u) == 0) len = 1;
    else if ((b & 0xE0u) == 0xC0u) len = 2;
    else if ((b & 0xF0u) == 0xE0u) len = 3;
    else if ((b & 0xF8u) == 0xF0u) len = 4;
    if (i + len > s.size()) len = 1;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

SubwordVocab train_subword_vocab(const std::vector<std::vector<std::string>>& sentences,
                                 int vocab_size, uint64_t /*seed*/) {
  // Word-type frequencies; std::map keeps iteration order deterministic.
  std::map<std::string, int64_t> word_freq;
  for (const auto& sent : sentences) {
    for (const auto& w : sent) {
      if (!w.empty()) ++word_freq[w];
    }
  }

  std::set<std::string> alphabet;
  std::set<std::string> continuation_chars;
  std::map<std::string, std::vector<std::string>> segs;
  for (const auto& [word, freq] : word_freq) {
    (void)freq;
    auto chars = split_utf8(word);
    for (size_t i = 0; i < chars.size(); ++i) {
      alphabet.insert(chars[i]);
      if (i > 0) continuation_chars.insert(chars[i]);
    }
    segs[word] = std::move(chars);
  }

  if (vocab_size < int(alphabet.size()) + SubwordVocab::kNumSpecials) {
    std::ostringstream os;
    os << "vocab_size " << vocab_size << " too small: need at least "
       << alphabet.size() + SubwordVocab::kNumSpecials << " (alphabet + specials)";
    throw std::runtime_error(os.str());
  }

  std::vector<std::pair<std::string, std::string>> merges;
  std::set<std::string> inventory = build_inventory(word_freq, segs, alphabet, continuation_chars);

  for (;;) {
    std::map<std::pair<std::string, std::string>, int64_t> pair_freq;
    for (const auto& [word, freq] : word_freq) {
      const auto& s = segs[word];
      for (size_t i = 0; i + 1 < s.size(); ++i) {
        pair_freq[{s[i], s[i + 1]}] += freq;
      }
    }
    if (pair_freq.empty()) break;

    // Ordered map iteration makes the first maximum the lexicographically
    // smallest pair among ties.
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    if (best->second < 2) break;

    const auto [left, right] = best->first;
    auto candidate_segs = segs;
    for (auto& [word, s] : candidate_segs) {
      (void)word;
      std::vector<std::string> merged;
      merged.reserve(s.size());
      size_t i = 0;
      while (i < s.size()) {
        if (i + 1 < s.size() && s[i] == left && s[i + 1] == right) {
          merged.push_back(left + right);
          i += 2;
        } else {
          merged.push_back(s[i]);
          ++i;
        }
      }
      s = std::move(merged);
    }

    auto candidate_inv =
        build_inventory(word_freq, candidate_segs, alphabet, continuation_chars);
    if (int(candidate_inv.size()) + SubwordVocab::kNumSpecials > vocab_size) break;

    segs = std::move(candidate_segs);
    inventory = std::move(candidate_inv);
    merges.emplace_back(left, right);
  }

  SubwordVocab vocab;
  vocab.merges = std::move(merges);
  for (int i = 0; i < SubwordVocab::kNumSpecials; ++i) vocab.units.push_back(kSpecialNames[i]);
  for (const auto& u : inventory) vocab.units.push_back(u);
  for (size_t i = 0; i < vocab.units.size(); ++i) vocab.ids[vocab.units[i]] = int(i);
  return vocab;
}

TokenizedSentence tokenize_with_spans(const SubwordVocab& vocab,
                                      const std::vector<std::string>& words) {
  TokenizedSentence out;
  for (const auto& word : words) {
    const int start = int(out.ids.size());
    auto chars = split_utf8(word);
    std::vector<int> pieces;
    bool ok = !chars.empty();
    size_t pos = 0;
    while (ok && pos < chars.size()) {
      int match_len = 0;
      int match_id = -1;
      std::string frag = pos == 0 ? "" : "##";
      for (size_t end = pos; end < chars.size(); ++end) {
        frag += chars[end];
        int id = vocab.id(frag);
        if (id >= 0) {
          match_len = int(end - pos + 1);
          match_id = id;
        }
      }
      if (match_id < 0) {
        ok = false;
      } else {
        pieces.push_back(match_id);
        pos += size_t(match_len);
      }
    }
    if (!ok) {
      out.ids.push_back(SubwordVocab::kUnk);
    } else {
      out.ids.insert(out.ids.end(), pieces.begin(), pieces.end());
    }
    out.word_spans.emplace_back(start, int(out.ids.size()));
  }
  return out;
}

void save_vocab(const SubwordVocab& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocab file for writing: " + path);
  for (const auto& u : vocab.units) f << u << "\n";
  f << std::flush;
  if (!f) throw std::runtime_error("write failed: " + path);
}

SubwordVocab load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open vocab file: " + path);
  SubwordVocab vocab;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.units.push_back(line);
  }
  if (int(vocab.units.size()) < SubwordVocab::kNumSpecials) {
    throw std::runtime_error("vocab file too short: " + path);
  }
  for (int i = 0; i < SubwordVocab::kNumSpecials; ++i) {
    if (vocab.units[size_t(i)] != kSpecialNames[i]) {
      throw std::runtime_error("vocab file missing special token " +
                               std::string(kSpecialNames[i]) + ": " + path);
    }
  }
  for (size_t i = 0; i < vocab.units.size(); ++i) vocab.ids[vocab.units[i]] = int(i);
  return vocab;
}

}  // namespace xladj
