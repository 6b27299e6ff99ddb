#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "xladj/bpe.hpp"

namespace xladj {

struct SentencePair {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  int64_t id = 0;

  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

// Per-sentence alignment links (src index, tgt index), zero-based.
using LinkSet = std::set<std::pair<int, int>>;
using AlignmentLinkSet = std::vector<LinkSet>;

struct PairExample {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  int label = 0;

  bool operator==(const PairExample&) const = default;
};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<int> tags;  // tag 0 = outside

  bool operator==(const TaggedSentence&) const = default;
};

// One pair per line, sides separated by " ||| ", whitespace-tokenized.
ParallelCorpus load_parallel(const std::string& path);
void save_parallel(const ParallelCorpus& corpus, const std::string& path);

// Uniform sample without replacement, deterministic per seed.
ParallelCorpus sample_sentences(const ParallelCorpus& corpus, size_t n, uint64_t seed);

// Replaces exactly one side of each item (chosen uniformly per item) by
// its source-language counterpart; labels unchanged.
std::vector<PairExample> make_mixed_pairs(const std::vector<PairExample>& labeled_pairs,
                                          const std::vector<PairExample>& source_pairs,
                                          uint64_t seed);

enum class ReorderRule { None, AdjacentSwap };

struct CipherCorpus {
  ParallelCorpus corpus;
  AlignmentLinkSet gold;  // known bijection composed with the permutation
};

// Target side = word-by-word ciphered source, optionally with seeded
// adjacent swaps. The cipher must cover the full source vocabulary.
CipherCorpus make_cipher_corpus(const std::vector<std::vector<std::string>>& source_sentences,
                                const std::map<std::string, std::string>& cipher,
                                ReorderRule reorder, uint64_t seed);

// Tab-separated premise/hypothesis/label files.
std::vector<PairExample> load_pair_examples(const std::string& path);
void save_pair_examples(const std::vector<PairExample>& data, const std::string& path);

// token<TAB>tag lines with blank-line sentence breaks. tag_names[0] is the
// outside tag.
std::vector<TaggedSentence> load_tagged(const std::string& path,
                                        const std::vector<std::string>& tag_names);
void save_tagged(const std::vector<TaggedSentence>& data,
                 const std::vector<std::string>& tag_names, const std::string& path);

// Pharaoh format: one line per sentence, "srcIdx-tgtIdx" links.
void save_pharaoh(const AlignmentLinkSet& links, const std::string& path);
AlignmentLinkSet load_pharaoh(const std::string& path);

std::vector<std::string> split_whitespace(const std::string& line);

}  // namespace xladj
