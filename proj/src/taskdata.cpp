#include "xladj/taskdata.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "xladj/rng.hpp"

namespace xladj {

namespace {

std::vector<std::string> make_vocabulary(int count, Rng& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (int(out.size()) < count) {
    const int len = 3 + int(rng.uniform_int(3));
    std::string w;
    for (int i = 0; i < len; ++i) w.push_back(char('a' + rng.uniform_int(26)));
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

// Letter-substitution cipher: injective on words by construction. Retries
// until no ciphered word collides with a source word.
std::map<std::string, std::string> make_cipher(const std::vector<std::string>& vocab,
                                               uint64_t seed) {
  std::set<std::string> source_words(vocab.begin(), vocab.end());
  for (uint64_t attempt = 0;; ++attempt) {
    Rng rng(splitmix64(seed + attempt));
    std::vector<char> perm(26);
    for (int i = 0; i < 26; ++i) perm[size_t(i)] = char('a' + i);
    rng.shuffle(perm);
    bool fixed_point = false;
    for (int i = 0; i < 26; ++i) fixed_point |= perm[size_t(i)] == char('a' + i);
    if (fixed_point) continue;

    std::map<std::string, std::string> cipher;
    bool collision = false;
    for (const auto& w : vocab) {
      std::string c = w;
      for (auto& ch : c) ch = perm[size_t(ch - 'a')];
      if (source_words.count(c)) {
        collision = true;
        break;
      }
      cipher[w] = std::move(c);
    }
    if (!collision) return cipher;
  }
}

// Zipf-ish unigram sampler over vocabulary ranks.
class WordSampler {
 public:
  explicit WordSampler(const std::vector<std::string>& vocab) : vocab_(vocab) {
    cum_.reserve(vocab.size());
    double total = 0.0;
    for (size_t i = 0; i < vocab.size(); ++i) {
      total += 1.0 / double(i + 1);
      cum_.push_back(total);
    }
  }

  const std::string& draw(Rng& rng) const {
    const double u = rng.uniform() * cum_.back();
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), u);
    return vocab_[size_t(it - cum_.begin())];
  }

  const std::string& draw_excluding(Rng& rng, const std::set<std::string>& excluded) const {
    for (;;) {
      const std::string& w = draw(rng);
      if (!excluded.count(w)) return w;
    }
  }

 private:
  const std::vector<std::string>& vocab_;
  std::vector<double> cum_;
};

std::vector<std::string> cipher_words(const std::vector<std::string>& words,
                                      const std::map<std::string, std::string>& cipher,
                                      ReorderRule reorder, Rng& rng) {
  std::vector<std::string> out(words.size());
  std::vector<int> perm(words.size());
  for (size_t i = 0; i < words.size(); ++i) perm[i] = int(i);
  if (reorder == ReorderRule::AdjacentSwap) {
    for (size_t i = 0; i + 1 < perm.size(); ++i) {
      if (rng.coin()) {
        std::swap(perm[i], perm[i + 1]);
        ++i;
      }
    }
  }
  for (size_t j = 0; j < words.size(); ++j) {
    out[j] = cipher.at(words[size_t(perm[j])]);
  }
  return out;
}

std::vector<int> permute_positions(size_t n, ReorderRule reorder, Rng& rng) {
  std::vector<int> perm(n);
  for (size_t i = 0; i < n; ++i) perm[i] = int(i);
  if (reorder == ReorderRule::AdjacentSwap) {
    for (size_t i = 0; i + 1 < perm.size(); ++i) {
      if (rng.coin()) {
        std::swap(perm[i], perm[i + 1]);
        ++i;
      }
    }
  }
  return perm;
}

}  // namespace

SynthData generate_synth_data(const SynthDataConfig& cfg) {
  if (cfg.vocab_words < cfg.label_groups * cfg.keywords_per_group +
                            cfg.entity_groups * cfg.entities_per_group + 20) {
    throw std::runtime_error("generate_synth_data: vocabulary too small for lexicons");
  }
  if (cfg.len_min < 1 || cfg.len_max < cfg.len_min) {
    throw std::runtime_error("generate_synth_data: bad sentence length range");
  }

  SynthData data;
  {
    Rng rng(derive_seed(cfg.data_seed, "vocab"));
    data.vocabulary = make_vocabulary(cfg.vocab_words, rng);
  }
  data.cipher = make_cipher(data.vocabulary, derive_seed(cfg.data_seed, "cipher"));

  // Keyword and entity lexicons sit in the mid-frequency band so they occur
  // often enough in the parallel pool to be aligned.
  int next_rank = 10;
  for (int g = 0; g < cfg.label_groups; ++g) {
    std::vector<std::string> group;
    for (int k = 0; k < cfg.keywords_per_group; ++k) {
      group.push_back(data.vocabulary[size_t(next_rank++)]);
    }
    data.keyword_groups.push_back(std::move(group));
  }
  for (int g = 0; g < cfg.entity_groups; ++g) {
    std::vector<std::string> group;
    for (int k = 0; k < cfg.entities_per_group; ++k) {
      group.push_back(data.vocabulary[size_t(next_rank++)]);
    }
    data.entity_lexicons.push_back(std::move(group));
  }
  const char* kTagPool[] = {"PER", "LOC", "ORG", "MISC", "EVT", "PRO"};
  data.tag_names.push_back("O");
  for (int g = 0; g < cfg.entity_groups; ++g) {
    data.tag_names.push_back(g < 6 ? kTagPool[g] : "TAG" + std::to_string(g));
  }

  std::set<std::string> keyword_set, entity_set;
  std::map<std::string, int> entity_tag;
  for (const auto& g : data.keyword_groups) keyword_set.insert(g.begin(), g.end());
  for (size_t g = 0; g < data.entity_lexicons.size(); ++g) {
    for (const auto& w : data.entity_lexicons[g]) {
      entity_set.insert(w);
      entity_tag[w] = int(g) + 1;
    }
  }
  std::set<std::string> reserved = keyword_set;
  reserved.insert(entity_set.begin(), entity_set.end());

  const WordSampler sampler(data.vocabulary);

  {
    Rng rng(derive_seed(cfg.data_seed, "pool"));
    data.source_pool.reserve(size_t(cfg.pool_sentences));
    for (int i = 0; i < cfg.pool_sentences; ++i) {
      const int len = cfg.len_min + int(rng.uniform_int(uint64_t(cfg.len_max - cfg.len_min + 1)));
      std::vector<std::string> sent;
      sent.reserve(size_t(len));
      for (int k = 0; k < len; ++k) sent.push_back(sampler.draw(rng));
      data.source_pool.push_back(std::move(sent));
    }
  }
  data.parallel = make_cipher_corpus(data.source_pool, data.cipher, cfg.reorder,
                                     derive_seed(cfg.data_seed, "reorder"));

  // Classification: the label is the lexicon group of a keyword planted in
  // the hypothesis; sentence bodies avoid reserved words so labels are exact.
  auto gen_cls = [&](int count, Rng& rng) {
    std::vector<PairExample> out;
    out.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
      PairExample ex;
      ex.label = i % cfg.label_groups;
      const auto& group = data.keyword_groups[size_t(ex.label)];
      const std::string& keyword = group[size_t(rng.uniform_int(group.size()))];
      const int plen = 4 + int(rng.uniform_int(4));
      for (int k = 0; k < plen; ++k) {
        ex.premise.push_back(sampler.draw_excluding(rng, reserved));
      }
      const int hlen = 3 + int(rng.uniform_int(3));
      for (int k = 0; k < hlen; ++k) {
        ex.hypothesis.push_back(sampler.draw_excluding(rng, reserved));
      }
      ex.hypothesis.insert(ex.hypothesis.begin() + long(rng.uniform_int(ex.hypothesis.size() + 1)),
                           keyword);
      out.push_back(std::move(ex));
    }
    return out;
  };

  {
    Rng rng(derive_seed(cfg.data_seed, "cls_train"));
    data.cls_train_src = gen_cls(cfg.task_train, rng);
  }
  {
    Rng rng(derive_seed(cfg.data_seed, "cls_test"));
    data.cls_test_src = gen_cls(cfg.task_test, rng);
    Rng crng(derive_seed(cfg.data_seed, "cls_test_cipher"));
    for (const auto& ex : data.cls_test_src) {
      PairExample t;
      t.label = ex.label;
      t.premise = cipher_words(ex.premise, data.cipher, cfg.reorder, crng);
      t.hypothesis = cipher_words(ex.hypothesis, data.cipher, cfg.reorder, crng);
      data.cls_test_tgt.push_back(std::move(t));
    }
    data.cls_test_mixed = make_mixed_pairs(data.cls_test_tgt, data.cls_test_src,
                                           derive_seed(cfg.data_seed, "mixed"));
  }

  // Tagging: tags are lexicon membership; sentence bodies avoid reserved
  // words, then one or two entity words are planted.
  auto gen_tagged = [&](int count, Rng& rng) {
    std::vector<TaggedSentence> out;
    out.reserve(size_t(count));
    for (int i = 0; i < count; ++i) {
      TaggedSentence sent;
      const int len = 4 + int(rng.uniform_int(4));
      for (int k = 0; k < len; ++k) {
        sent.tokens.push_back(sampler.draw_excluding(rng, reserved));
      }
      const int n_entities = 1 + int(rng.uniform_int(2));
      for (int e = 0; e < n_entities; ++e) {
        const int g = int(rng.uniform_int(uint64_t(cfg.entity_groups)));
        const auto& lex = data.entity_lexicons[size_t(g)];
        sent.tokens.insert(sent.tokens.begin() + long(rng.uniform_int(sent.tokens.size() + 1)),
                           lex[size_t(rng.uniform_int(lex.size()))]);
      }
      sent.tags.reserve(sent.tokens.size());
      for (const auto& w : sent.tokens) {
        auto it = entity_tag.find(w);
        sent.tags.push_back(it == entity_tag.end() ? 0 : it->second);
      }
      out.push_back(std::move(sent));
    }
    return out;
  };

  {
    Rng rng(derive_seed(cfg.data_seed, "tag_train"));
    data.tag_train_src = gen_tagged(cfg.tag_train, rng);
  }
  {
    Rng rng(derive_seed(cfg.data_seed, "tag_test"));
    auto src = gen_tagged(cfg.tag_test, rng);
    Rng crng(derive_seed(cfg.data_seed, "tag_test_cipher"));
    for (const auto& s : src) {
      TaggedSentence t;
      const auto perm = permute_positions(s.tokens.size(), cfg.reorder, crng);
      t.tokens.resize(s.tokens.size());
      t.tags.resize(s.tags.size());
      for (size_t j = 0; j < perm.size(); ++j) {
        t.tokens[j] = data.cipher.at(s.tokens[size_t(perm[j])]);
        t.tags[j] = s.tags[size_t(perm[j])];
      }
      data.tag_test_tgt.push_back(std::move(t));
    }
  }

  {
    Rng rng(derive_seed(cfg.data_seed, "xsr"));
    Rng crng(derive_seed(cfg.data_seed, "xsr_cipher"));
    for (int i = 0; i < cfg.xsr_sentences; ++i) {
      const int len = cfg.len_min + int(rng.uniform_int(uint64_t(cfg.len_max - cfg.len_min + 1)));
      std::vector<std::string> sent;
      for (int k = 0; k < len; ++k) sent.push_back(sampler.draw(rng));
      data.xsr_queries_tgt.push_back(cipher_words(sent, data.cipher, cfg.reorder, crng));
      data.xsr_corpus_src.push_back(std::move(sent));
    }
  }
  return data;
}

}  // namespace xladj
