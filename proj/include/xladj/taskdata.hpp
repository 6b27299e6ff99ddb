#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xladj/corpus.hpp"

namespace xladj {

// Desk-scale synthetic bilingual world: a Zipf-distributed source language,
// a letter-permutation cipher target language with known gold alignments,
// and keyword-driven classification / tagging tasks whose zero-shot
// transfer requires cross-lingual lexical knowledge.
struct SynthDataConfig {
  uint64_t data_seed = 7;
  int vocab_words = 120;
  int pool_sentences = 800;
  int len_min = 4;
  int len_max = 9;
  ReorderRule reorder = ReorderRule::None;

  int label_groups = 3;
  int keywords_per_group = 4;
  int entity_groups = 3;
  int entities_per_group = 5;

  int task_train = 900;
  int task_test = 300;
  int tag_train = 500;
  int tag_test = 150;
  int xsr_sentences = 200;
};

struct SynthData {
  std::vector<std::string> vocabulary;  // word types, most frequent first
  std::map<std::string, std::string> cipher;
  std::vector<std::vector<std::string>> source_pool;
  CipherCorpus parallel;

  std::vector<std::vector<std::string>> keyword_groups;
  std::vector<std::vector<std::string>> entity_lexicons;
  std::vector<std::string> tag_names;  // {"O", "PER", "LOC", "ORG", ...}

  std::vector<PairExample> cls_train_src;
  std::vector<PairExample> cls_test_src;
  std::vector<PairExample> cls_test_tgt;
  std::vector<PairExample> cls_test_mixed;

  std::vector<TaggedSentence> tag_train_src;
  std::vector<TaggedSentence> tag_test_tgt;

  std::vector<std::vector<std::string>> xsr_queries_tgt;
  std::vector<std::vector<std::string>> xsr_corpus_src;
};

SynthData generate_synth_data(const SynthDataConfig& cfg);

}  // namespace xladj
