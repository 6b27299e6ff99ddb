#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "xladj/bpe.hpp"
#include "xladj/corpus.hpp"
#include "xladj/rng.hpp"

using namespace xladj;
namespace fs = std::filesystem;

namespace {

std::string temp_file(const std::string& name, const std::string& content) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream f(path, std::ios::binary);
  f << content;
  return path;
}

std::vector<std::vector<std::string>> words(std::initializer_list<const char*> sents) {
  std::vector<std::vector<std::string>> out;
  for (const char* s : sents) out.push_back(split_whitespace(s));
  return out;
}

}  // namespace

TEST_CASE("load_parallel parses pipe-separated pairs") {
  auto path = temp_file("xladj_par_ok.txt", "a b ||| x y\n");
  auto corpus = load_parallel(path);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus.pairs[0].src == std::vector<std::string>{"a", "b"});
  CHECK(corpus.pairs[0].tgt == std::vector<std::string>{"x", "y"});
}

TEST_CASE("load_parallel accepts an empty file") {
  auto path = temp_file("xladj_par_empty.txt", "");
  CHECK(load_parallel(path).empty());
}

TEST_CASE("load_parallel reports the offending line") {
  auto path = temp_file("xladj_par_bad.txt", "a b | x\n");
  CHECK_THROWS_WITH_AS(load_parallel(path), doctest::Contains("line 1"), std::runtime_error);

  auto path2 = temp_file("xladj_par_bad2.txt", "a ||| x\n ||| x\n");
  CHECK_THROWS_WITH_AS(load_parallel(path2), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("parallel corpus round-trips through save") {
  ParallelCorpus c;
  c.pairs.push_back({{"aa", "bb"}, {"xx"}, 0});
  c.pairs.push_back({{"q"}, {"r", "s"}, 1});
  auto path = (fs::temp_directory_path() / "xladj_par_rt.txt").string();
  save_parallel(c, path);
  auto back = load_parallel(path);
  REQUIRE(back.size() == 2);
  CHECK(back.pairs[1].tgt == std::vector<std::string>{"r", "s"});
}

TEST_CASE("bpe training merges the most frequent pair") {
  auto vocab = train_subword_vocab(words({"aaab aaab"}), 10);
  CHECK(vocab.id("aa") >= 0);
}

TEST_CASE("bpe on a single-character corpus is specials plus the character") {
  auto vocab = train_subword_vocab(words({"a"}), 10);
  CHECK(vocab.size() == SubwordVocab::kNumSpecials + 1);
  CHECK(vocab.id("a") == SubwordVocab::kNumSpecials);
}

TEST_CASE("bpe training is deterministic") {
  auto corpus = words({"banana band bandana", "ananas and sand"});
  auto v1 = train_subword_vocab(corpus, 40);
  auto v2 = train_subword_vocab(corpus, 40);
  CHECK(v1.units == v2.units);
  CHECK(v1.merges == v2.merges);
}

TEST_CASE("bpe rejects a vocab budget below alphabet plus specials") {
  CHECK_THROWS_AS(train_subword_vocab(words({"abcdefgh"}), 8), std::runtime_error);
}

TEST_CASE("tokenize_with_spans uses greedy longest match") {
  SubwordVocab vocab;
  vocab.units = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "ab", "b", "##a", "##b"};
  for (size_t i = 0; i < vocab.units.size(); ++i) vocab.ids[vocab.units[i]] = int(i);

  auto t1 = tokenize_with_spans(vocab, {"ab"});
  REQUIRE(t1.ids.size() == 1);
  CHECK(vocab.unit(t1.ids[0]) == "ab");
  CHECK(t1.word_spans == std::vector<std::pair<int, int>>{{0, 1}});

  auto t2 = tokenize_with_spans(vocab, {"ab", "a"});
  REQUIRE(t2.ids.size() == 2);
  CHECK(vocab.unit(t2.ids[0]) == "ab");
  CHECK(vocab.unit(t2.ids[1]) == "a");
  CHECK(t2.word_spans == std::vector<std::pair<int, int>>{{0, 1}, {1, 2}});

  auto t3 = tokenize_with_spans(vocab, {"zzz"});
  REQUIRE(t3.ids.size() == 1);
  CHECK(t3.ids[0] == SubwordVocab::kUnk);
  CHECK(t3.word_spans == std::vector<std::pair<int, int>>{{0, 1}});
}

TEST_CASE("tokenization round-trips surface forms") {
  auto corpus = words({"banana band bandana river", "ananas and sand rivers",
                       "riverbank bandana anas"});
  auto vocab = train_subword_vocab(corpus, 60);
  for (const auto& sent : corpus) {
    auto tok = tokenize_with_spans(vocab, sent);
    REQUIRE(tok.word_spans.size() == sent.size());
    for (size_t w = 0; w < sent.size(); ++w) {
      auto [b, e] = tok.word_spans[w];
      REQUIRE(b < e);
      std::string surface;
      for (int i = b; i < e; ++i) {
        std::string u = vocab.unit(tok.ids[size_t(i)]);
        if (u.rfind("##", 0) == 0) u = u.substr(2);
        surface += u;
      }
      const bool is_unk = e - b == 1 && tok.ids[size_t(b)] == SubwordVocab::kUnk;
      CHECK((surface == sent[w] || is_unk));
    }
  }
}

TEST_CASE("vocab files round-trip with specials first") {
  auto vocab = train_subword_vocab(words({"abc abd abe"}), 30);
  auto path = (fs::temp_directory_path() / "xladj_vocab.txt").string();
  save_vocab(vocab, path);
  auto back = load_vocab(path);
  CHECK(back.units == vocab.units);
  CHECK(back.unit(SubwordVocab::kCls) == "[CLS]");
}

TEST_CASE("make_mixed_pairs replaces exactly one side per item") {
  std::vector<PairExample> tgt, src;
  for (int i = 0; i < 1000; ++i) {
    tgt.push_back({{"tp" + std::to_string(i)}, {"th" + std::to_string(i)}, i % 3});
    src.push_back({{"sp" + std::to_string(i)}, {"sh" + std::to_string(i)}, i % 3});
  }
  auto mixed = make_mixed_pairs(tgt, src, 99);
  REQUIRE(mixed.size() == tgt.size());
  int premises_replaced = 0;
  for (size_t i = 0; i < mixed.size(); ++i) {
    const bool prem_src = mixed[i].premise == src[i].premise;
    const bool hyp_src = mixed[i].hypothesis == src[i].hypothesis;
    CHECK(prem_src != hyp_src);  // exactly one side
    CHECK(mixed[i].label == tgt[i].label);
    premises_replaced += prem_src;
  }
  // binomial(1000, 0.5), 3 sigma
  const double frac = double(premises_replaced) / 1000.0;
  CHECK(frac >= 0.42);
  CHECK(frac <= 0.58);

  CHECK(make_mixed_pairs(tgt, src, 99) == std::vector<PairExample>(mixed));
  src.pop_back();
  CHECK_THROWS_AS(make_mixed_pairs(tgt, src, 99), std::runtime_error);
}

TEST_CASE("sample_sentences boundaries and determinism") {
  ParallelCorpus corpus;
  for (int i = 0; i < 1000; ++i) {
    corpus.pairs.push_back({{"w" + std::to_string(i)}, {"v" + std::to_string(i)}, i});
  }

  auto all = sample_sentences(corpus, corpus.size(), 1);
  std::set<int64_t> ids;
  for (const auto& p : all.pairs) ids.insert(p.id);
  CHECK(ids.size() == corpus.size());

  CHECK(sample_sentences(corpus, 0, 1).empty());
  CHECK_THROWS_AS(sample_sentences(corpus, corpus.size() + 1, 1), std::runtime_error);

  auto s1 = sample_sentences(corpus, 500, 11);
  auto s2 = sample_sentences(corpus, 500, 12);
  auto s1b = sample_sentences(corpus, 500, 11);
  auto id_set = [](const ParallelCorpus& c) {
    std::set<int64_t> s;
    for (const auto& p : c.pairs) s.insert(p.id);
    return s;
  };
  CHECK(id_set(s1) == id_set(s1b));
  CHECK(id_set(s1) != id_set(s2));
}

TEST_CASE("cipher corpus carries the gold alignment") {
  std::map<std::string, std::string> identity = {{"a", "a"}, {"b", "b"}};
  auto c1 = make_cipher_corpus(words({"a b"}), identity, ReorderRule::None, 0);
  CHECK(c1.corpus.pairs[0].tgt == std::vector<std::string>{"a", "b"});
  CHECK(c1.gold[0] == LinkSet{{0, 0}, {1, 1}});

  std::map<std::string, std::string> cipher = {{"a", "x"}, {"b", "y"}};
  auto c2 = make_cipher_corpus(words({"a b"}), cipher, ReorderRule::None, 0);
  CHECK(c2.corpus.pairs[0].tgt == std::vector<std::string>{"x", "y"});
  CHECK(c2.gold[0] == LinkSet{{0, 0}, {1, 1}});

  // find a seed whose single coin flip swaps the two words
  bool saw_swap = false;
  for (uint64_t seed = 0; seed < 32 && !saw_swap; ++seed) {
    auto c3 = make_cipher_corpus(words({"a b"}), cipher, ReorderRule::AdjacentSwap, seed);
    if (c3.corpus.pairs[0].tgt == std::vector<std::string>{"y", "x"}) {
      saw_swap = true;
      CHECK(c3.gold[0] == LinkSet{{0, 1}, {1, 0}});
    }
  }
  CHECK(saw_swap);

  // gold consistency property: tgt[j] == cipher(src[i]) for every link
  std::map<std::string, std::string> big;
  for (char ch = 'a'; ch <= 'j'; ++ch) {
    big[std::string(1, ch)] = std::string(1, char(ch + 13));
  }
  auto sentences = words({"a b c d e f", "g h i j a b", "c d e"});
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto cc = make_cipher_corpus(sentences, big, ReorderRule::AdjacentSwap, seed);
    for (size_t s = 0; s < cc.corpus.size(); ++s) {
      const auto& p = cc.corpus.pairs[s];
      CHECK(cc.gold[s].size() == p.src.size());
      for (const auto& [i, j] : cc.gold[s]) {
        CHECK(big.at(p.src[size_t(i)]) == p.tgt[size_t(j)]);
      }
    }
  }

  CHECK_THROWS_AS(make_cipher_corpus(words({"a z"}), cipher, ReorderRule::None, 0),
                  std::runtime_error);
}

TEST_CASE("task files round-trip") {
  std::vector<PairExample> data = {{{"a", "b"}, {"c"}, 2}, {{"d"}, {"e", "f"}, 0}};
  auto path = (fs::temp_directory_path() / "xladj_cls.tsv").string();
  save_pair_examples(data, path);
  auto back = load_pair_examples(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].label == 2);
  CHECK(back[1].hypothesis == std::vector<std::string>{"e", "f"});

  std::vector<std::string> tags = {"O", "PER"};
  std::vector<TaggedSentence> tagged = {{{"x", "y"}, {0, 1}}, {{"z"}, {0}}};
  auto tpath = (fs::temp_directory_path() / "xladj_tag.tsv").string();
  save_tagged(tagged, tags, tpath);
  auto tback = load_tagged(tpath, tags);
  REQUIRE(tback.size() == 2);
  CHECK(tback[0].tags == std::vector<int>{0, 1});
}

TEST_CASE("pharaoh files round-trip") {
  AlignmentLinkSet links = {{{0, 0}, {1, 2}}, {}, {{3, 1}}};
  auto path = (fs::temp_directory_path() / "xladj_align.txt").string();
  save_pharaoh(links, path);
  auto back = load_pharaoh(path);
  CHECK(back == links);
}
