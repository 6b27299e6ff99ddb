#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "xladj/corpus.hpp"

namespace xladj {

struct WordDict {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> ids;

  int add(const std::string& w) {
    auto it = ids.find(w);
    if (it != ids.end()) return it->second;
    int id = int(words.size());
    words.push_back(w);
    ids.emplace(w, id);
    return id;
  }
  int id(const std::string& w) const {
    auto it = ids.find(w);
    return it == ids.end() ? -1 : it->second;
  }
  size_t size() const { return words.size(); }
};

enum class Direction { SrcToTgt, TgtToSrc };

// IBM Model 2 with a diagonal prior: emitted words pick a conditioning
// position with probability proportional to exp(-lambda * |i/n - j/m|),
// NULL gets fixed mass p0. SrcToTgt conditions on source words and emits
// target words; TgtToSrc swaps the roles.
struct Model2Params {
  Direction direction = Direction::SrcToTgt;
  double lambda = 4.0;
  double p0 = 0.08;
  WordDict cond_dict;  // id 0 is the NULL word
  WordDict emit_dict;
  std::vector<std::unordered_map<int, double>> ttable;  // [cond][emit] -> p
  std::vector<double> nll_trace;  // corpus NLL before each EM update

  static constexpr double kProbFloor = 1e-9;
  double translation_prob(int cond_id, int emit_id) const;
};

Model2Params train_model2(const ParallelCorpus& corpus, int iterations, Direction direction,
                          uint64_t seed = 0);

// Links each emitted word to its argmax conditioning position, or to NULL
// (no link). Returned links are always in (src index, tgt index) order.
LinkSet viterbi_align(const Model2Params& params, const SentencePair& pair);
AlignmentLinkSet viterbi_align_corpus(const Model2Params& params, const ParallelCorpus& corpus);

enum class SymHeuristic { Intersection, GrowDiagFinalAnd };

LinkSet symmetrize(const LinkSet& forward, const LinkSet& reverse, SymHeuristic heuristic);
AlignmentLinkSet symmetrize_corpus(const AlignmentLinkSet& forward,
                                   const AlignmentLinkSet& reverse, SymHeuristic heuristic);

// AER = 1 - 2|P ∩ G| / (|P| + |G|), all gold links sure; 0 when both empty.
double alignment_error_rate(const AlignmentLinkSet& predicted, const AlignmentLinkSet& gold);

struct TokenizedPair {
  TokenizedSentence src;
  TokenizedSentence tgt;
};

struct WordPairItem {
  int sent_id = 0;
  int src_word = 0;
  int tgt_word = 0;
  std::pair<int, int> src_span;  // subword span in the tokenized source sentence
  std::pair<int, int> tgt_span;
};

// Aligned word-occurrence pairs, each referencing the sentence contexts
// needed to encode both sides.
struct WordPairSet {
  std::shared_ptr<const std::vector<TokenizedPair>> sentences;
  std::vector<WordPairItem> items;
  size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
};

std::shared_ptr<std::vector<TokenizedPair>> tokenize_corpus(const ParallelCorpus& corpus,
                                                            const SubwordVocab& vocab);

// One occurrence-level item per alignment link, uniformly subsampled to
// max_pairs.
WordPairSet extract_word_pairs(const ParallelCorpus& corpus, const SubwordVocab& vocab,
                               const AlignmentLinkSet& links, size_t max_pairs, uint64_t seed);

// Header line with lambda/p0, then tab-separated (cond, emit, probability).
void save_model2(const Model2Params& params, const std::string& path);

}  // namespace xladj
