#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <set>

#include "test_util.hpp"
#include "xladj/analysis.hpp"
#include "xladj/taskdata.hpp"

using namespace xladj;
namespace fs = std::filesystem;

namespace {

// identity-cipher corpus: src == tgt, every word self-aligned
struct World {
  ParallelCorpus corpus;
  AlignmentLinkSet links;
  SubwordVocab vocab;
};

World identity_world() {
  World w;
  int64_t id = 0;
  for (const auto& s : testutil::toy_sentences()) {
    SentencePair p;
    p.src = s;
    p.tgt = s;
    p.id = id++;
    LinkSet l;
    for (size_t i = 0; i < s.size(); ++i) l.insert({int(i), int(i)});
    w.corpus.pairs.push_back(std::move(p));
    w.links.push_back(std::move(l));
  }
  w.vocab = testutil::toy_vocab();
  return w;
}

std::vector<DistanceSample> samples_of(std::vector<double> related,
                                       std::vector<double> unrelated) {
  std::vector<DistanceSample> out;
  for (double d : related) out.push_back({true, d});
  for (double d : unrelated) out.push_back({false, d});
  return out;
}

}  // namespace

TEST_CASE("distance pair sampling") {
  auto w = identity_world();
  size_t total_links = 0;
  for (const auto& l : w.links) total_links += l.size();

  // n_related == all links: the related sample is the full link set
  auto full = sample_distance_pairs(w.corpus, w.vocab, w.links, int(total_links), 5, 1);
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& it : full.items) {
    if (!it.related) continue;
    CHECK(it.src_sent == it.tgt_sent);
    seen.insert({it.src_sent, it.src_word, it.tgt_word});
  }
  CHECK(seen.size() == total_links);

  // unrelated items always span two different sentence pairs
  auto s = sample_distance_pairs(w.corpus, w.vocab, w.links, 10, 50, 2);
  for (const auto& it : s.items) {
    if (!it.related) CHECK(it.src_sent != it.tgt_sent);
  }

  // deterministic per seed
  auto s2 = sample_distance_pairs(w.corpus, w.vocab, w.links, 10, 50, 2);
  REQUIRE(s.items.size() == s2.items.size());
  for (size_t i = 0; i < s.items.size(); ++i) {
    CHECK(s.items[i].src_sent == s2.items[i].src_sent);
    CHECK(s.items[i].tgt_word == s2.items[i].tgt_word);
  }

  // a single linked sentence cannot produce unrelated pairs
  World tiny;
  tiny.corpus.pairs.push_back(w.corpus.pairs[0]);
  tiny.links.push_back(w.links[0]);
  tiny.vocab = w.vocab;
  CHECK_THROWS_AS(sample_distance_pairs(tiny.corpus, tiny.vocab, tiny.links, 1, 1, 3),
                  std::runtime_error);
}

TEST_CASE("distances: self pairs are zero and the metric is symmetric") {
  auto w = identity_world();
  auto model = init_encoder(testutil::tiny_config(w.vocab.size()), 91);

  DistancePairSample sample;
  sample.sentences = tokenize_corpus(w.corpus, w.vocab);
  sample.items.push_back({0, 0, 0, 0, true});  // same word, same sentence
  sample.items.push_back({0, 1, 2, 1, false});
  auto d = compute_distances(model, sample, -1, Pooling::Average);
  REQUIRE(d.size() == 2);
  CHECK(d[0].distance == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(d[1].distance >= 0.0);

  CHECK(l2_distance({3.0f, 0.0f}, {0.0f, 4.0f}) == doctest::Approx(5.0));
  CHECK(l2_distance({3.0f, 0.0f}, {0.0f, 4.0f}) ==
        doctest::Approx(l2_distance({0.0f, 4.0f}, {3.0f, 0.0f})));
}

TEST_CASE("histogram report oracle cases") {
  // identical multisets overlap fully
  auto rep1 = histogram_report(samples_of({1, 2, 3}, {1, 2, 3}), 4);
  CHECK(rep1.overlap == doctest::Approx(1.0));

  // fully separated supports never overlap
  auto rep2 = histogram_report(samples_of({0.1, 0.2}, {5.0, 6.0}), 10);
  CHECK(rep2.overlap == doctest::Approx(0.0));

  // hand-binned: related {1,1}, unrelated {1,3}, 2 bins over [0,3]
  auto rep3 = histogram_report(samples_of({1, 1}, {1, 3}), 2);
  CHECK(rep3.edges.back() == doctest::Approx(3.0));
  CHECK(rep3.related_counts == std::vector<int64_t>{2, 0});
  CHECK(rep3.unrelated_counts == std::vector<int64_t>{1, 1});
  CHECK(rep3.overlap == doctest::Approx(0.5));

  CHECK(rep3.related_mean == doctest::Approx(1.0));
  CHECK(rep3.unrelated_mean == doctest::Approx(2.0));

  CHECK_THROWS_AS(histogram_report(samples_of({1}, {}), 4), std::runtime_error);
  CHECK_THROWS_AS(histogram_report(samples_of({1}, {2}), 1), std::runtime_error);
}

TEST_CASE("overlap stays in range and is one only for identical masses") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> rel, unrel;
    for (int i = 0; i < 40; ++i) rel.push_back(rng.uniform(0, 5));
    for (int i = 0; i < 60; ++i) unrel.push_back(rng.uniform(0, 5));
    auto rep = histogram_report(samples_of(rel, unrel), 8);
    CHECK(rep.overlap >= 0.0);
    CHECK(rep.overlap <= 1.0 + 1e-12);

    double l1 = 0;
    for (size_t i = 0; i + 1 < rep.edges.size(); ++i) {
      l1 += std::fabs(double(rep.related_counts[i]) / double(rel.size()) -
                      double(rep.unrelated_counts[i]) / double(unrel.size()));
    }
    if (rep.overlap >= 1.0 - 1e-12) {
      CHECK(l1 <= 1e-12);
    } else {
      CHECK(l1 > 0.0);
    }
  }
}

TEST_CASE("scenario suite demands all five scenarios and emits artifacts") {
  auto w = identity_world();
  auto model = init_encoder(testutil::tiny_config(w.vocab.size()), 93);
  auto sample = sample_distance_pairs(w.corpus, w.vocab, w.links, 8, 8, 4);

  std::map<std::string, const EncoderWeights*> missing = {{"original", &model}};
  CHECK_THROWS_WITH_AS(
      scenario_suite(missing, sample, 10, -1, Pooling::Average, ""),
      doctest::Contains("adjusted_continual"), std::runtime_error);

  std::map<std::string, const EncoderWeights*> all;
  for (const char* name : kScenarioNames) all[name] = &model;
  const auto out_dir = (fs::temp_directory_path() / "xladj_suite").string();
  fs::create_directories(out_dir);
  auto reports = scenario_suite(all, sample, 10, -1, Pooling::Average, out_dir);
  REQUIRE(reports.size() == 5);
  const auto& first = reports.begin()->second;
  for (const auto& [name, rep] : reports) {
    CHECK(rep.overlap == doctest::Approx(first.overlap));
    CHECK(rep.related_counts == first.related_counts);
  }
  CHECK(fs::exists(out_dir + "/histograms.csv"));
  CHECK(fs::exists(out_dir + "/histograms.svg"));
  CHECK(fs::exists(out_dir + "/histogram_summary.json"));
}
