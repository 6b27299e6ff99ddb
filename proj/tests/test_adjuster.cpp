#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "test_util.hpp"
#include "xladj/adjuster.hpp"
#include "xladj/aligner.hpp"
#include "xladj/analysis.hpp"
#include "xladj/kernels.hpp"
#include "xladj/taskdata.hpp"

using namespace xladj;

namespace {

// Word pair set over a toy identity corpus: source and target contexts are
// the same sentences, every word aligned to itself.
WordPairSet identity_pairs(const SubwordVocab& vocab) {
  auto sents = std::make_shared<std::vector<TokenizedPair>>();
  WordPairSet pairs;
  int sent_id = 0;
  for (const auto& s : testutil::toy_sentences()) {
    TokenizedPair tp;
    tp.src = tokenize_with_spans(vocab, s);
    tp.tgt = tp.src;
    for (size_t w = 0; w < s.size(); ++w) {
      WordPairItem item;
      item.sent_id = sent_id;
      item.src_word = int(w);
      item.tgt_word = int(w);
      item.src_span = tp.src.word_spans[w];
      item.tgt_span = tp.src.word_spans[w];
      pairs.items.push_back(item);
    }
    sents->push_back(std::move(tp));
    ++sent_id;
  }
  pairs.sentences = sents;
  return pairs;
}

std::vector<size_t> first_n(size_t n) {
  std::vector<size_t> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

bool weights_equal(const EncoderWeights& a, const EncoderWeights& b) {
  bool equal = true;
  auto pa = a.param_list();
  auto pb = b.param_list();
  for (size_t i = 0; i < pa.size(); ++i) equal &= pa[i]->v == pb[i]->v;
  return equal;
}

}  // namespace

TEST_CASE("loss vanishes when model equals anchor and contexts coincide") {
  auto vocab = testutil::toy_vocab();
  auto w = init_encoder(testutil::tiny_config(vocab.size()), 31);
  auto pairs = identity_pairs(vocab);
  AnchorModel anchor{w};
  auto res = alignment_loss<float>(w, anchor, pairs, first_n(6), Pooling::Average, -1);
  CHECK(res.pull == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.reg == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.total == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("hand-evaluated squared distance") {
  // ||(1,0) - (0,1)||^2 = 2, the two-term structure of the loss on one pair
  const std::vector<float> fs{1.0f, 0.0f}, ft{0.0f, 1.0f};
  CHECK(kernels::sumsq_diff(2, fs.data(), ft.data()) == doctest::Approx(2.0));
}

TEST_CASE("loss decomposes into pull and reg terms computed independently") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto model = init_encoder(cfg, 33);
  auto anchor_w = init_encoder(cfg, 34);  // different anchor: nonzero drift
  AnchorModel anchor{anchor_w};
  auto pairs = identity_pairs(vocab);
  auto batch = first_n(5);

  auto res = alignment_loss<float>(model, anchor, pairs, batch, Pooling::Average, -1);

  // independent recomputation from pooled vectors
  double pull = 0, reg = 0;
  const auto cache = anchor_source_vectors(anchor, pairs, Pooling::Average, -1);
  for (size_t idx : batch) {
    const auto& item = pairs.items[idx];
    const auto& tp = (*pairs.sentences)[size_t(item.sent_id)];
    Batch b = make_batch({frame_sentence(tp.src.ids, cfg.max_positions),
                          frame_sentence(tp.tgt.ids, cfg.max_positions)});
    auto fwd = encoder_forward(model, b);
    auto fs = pool_word_vector(fwd.states.back(), 0 * b.seq + 1, item.src_span, Pooling::Average);
    auto ft = pool_word_vector(fwd.states.back(), 1 * b.seq + 1, item.tgt_span, Pooling::Average);
    pull += double(kernels::sumsq_diff(cfg.model_dim, fs.data(), ft.data()));
    reg += double(kernels::sumsq_diff(cfg.model_dim, fs.data(), cache[idx].data()));
  }
  CHECK(res.pull == doctest::Approx(pull).epsilon(1e-5));
  CHECK(res.reg == doctest::Approx(reg).epsilon(1e-5));
  CHECK(res.total == doctest::Approx(res.pull + res.reg).epsilon(1e-12));

  // identical contexts mean the pull term is exactly zero, so the whole
  // loss is the summed squared drift of the batch's source words
  CHECK(res.pull == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.total == doctest::Approx(res.reg).epsilon(1e-12));
  CHECK(res.reg > 0.0);
}

TEST_CASE("loss is invariant to batch item order") {
  auto vocab = testutil::toy_vocab();
  auto model = init_encoder(testutil::tiny_config(vocab.size()), 35);
  AnchorModel anchor{init_encoder(testutil::tiny_config(vocab.size()), 36)};
  auto pairs = identity_pairs(vocab);

  std::vector<size_t> batch{0, 3, 5, 7, 9};
  std::vector<size_t> reversed(batch.rbegin(), batch.rend());
  auto r1 = alignment_loss<float>(model, anchor, pairs, batch, Pooling::Average, -1);
  auto r2 = alignment_loss<float>(model, anchor, pairs, reversed, Pooling::Average, -1);
  CHECK(r1.total == doctest::Approx(r2.total).epsilon(1e-9));
}

TEST_CASE("alignment loss rejects empty batches and empty pair sets") {
  auto vocab = testutil::toy_vocab();
  auto model = init_encoder(testutil::tiny_config(vocab.size()), 37);
  AnchorModel anchor{model};
  auto pairs = identity_pairs(vocab);
  CHECK_THROWS_AS(alignment_loss<float>(model, anchor, pairs, {}, Pooling::Average, -1),
                  std::runtime_error);

  AdjustConfig cfg;
  CHECK_THROWS_AS(adjust(model, WordPairSet{}, cfg), std::runtime_error);
}

TEST_CASE("eq-1 gradients match finite differences in double precision") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto model = init_encoder_t<double>(cfg, 41);
  AnchorModelT<double> anchor{init_encoder_t<double>(cfg, 42)};
  auto pairs = identity_pairs(vocab);
  auto batch = first_n(4);
  const auto cache = anchor_source_vectors(anchor, pairs, Pooling::Average, -1);

  auto loss = [&]() {
    return alignment_loss<double>(model, anchor, pairs, batch, Pooling::Average, -1, &cache)
        .total;
  };
  auto res = alignment_loss<double>(model, anchor, pairs, batch, Pooling::Average, -1, &cache);
  auto report = testutil::fd_check(model, loss, res.grads, 1e-5, 5);
  MESSAGE("checked ", report.checked, " params, max rel err ", report.max_rel_err, " at ",
          report.worst_param);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("adjust honors epochs, determinism, and traces") {
  auto vocab = testutil::toy_vocab();
  auto model = init_encoder(testutil::tiny_config(vocab.size()), 43);
  auto pairs = identity_pairs(vocab);

  AdjustConfig cfg;
  cfg.epochs = 0;
  auto r0 = adjust(model, pairs, cfg);
  CHECK(weights_equal(r0.weights, model));
  CHECK(r0.trace.empty());

  cfg.epochs = 2;
  cfg.lr = 1e-3f;
  cfg.batch_pairs = 4;
  cfg.seed = 5;
  auto r1 = adjust(model, pairs, cfg);
  auto r2 = adjust(model, pairs, cfg);
  CHECK(weights_equal(r1.weights, r2.weights));
  REQUIRE(!r1.trace.empty());
  for (size_t i = 0; i < r1.trace.size(); ++i) {
    CHECK(r1.trace[i].total == doctest::Approx(r1.trace[i].pull + r1.trace[i].reg));
  }
}

TEST_CASE("adjustment pulls related words together on a cipher corpus") {
  SynthDataConfig scfg;
  scfg.data_seed = 17;
  scfg.vocab_words = 60;
  scfg.pool_sentences = 150;
  scfg.task_train = 1;
  scfg.task_test = 1;
  scfg.tag_train = 1;
  scfg.tag_test = 1;
  scfg.xsr_sentences = 1;
  auto world = generate_synth_data(scfg);
  const auto& corpus = world.parallel.corpus;

  std::vector<std::vector<std::string>> text;
  for (const auto& p : corpus.pairs) {
    text.push_back(p.src);
    text.push_back(p.tgt);
  }
  auto vocab = train_subword_vocab(text, 160);

  EncoderConfig ecfg;
  ecfg.layers = 2;
  ecfg.model_dim = 32;
  ecfg.heads = 2;
  ecfg.ffn_dim = 64;
  ecfg.max_positions = 32;
  ecfg.vocab_size = vocab.size();
  auto model = init_encoder(ecfg, 51);

  auto pairs = extract_word_pairs(corpus, vocab, world.parallel.gold, 1200, 3);

  auto dist_sample = sample_distance_pairs(corpus, vocab, world.parallel.gold, 300, 300, 4);
  auto mean_related = [&](const EncoderWeights& m) {
    double s = 0;
    int n = 0;
    for (const auto& d : compute_distances(m, dist_sample, -1, Pooling::Average)) {
      if (d.related) {
        s += d.distance;
        ++n;
      }
    }
    return s / n;
  };

  const double before = mean_related(model);
  AdjustConfig acfg;
  acfg.lr = 1e-3f;
  acfg.epochs = 3;
  acfg.batch_pairs = 16;
  acfg.seed = 6;
  auto adjusted = adjust(model, pairs, acfg);
  const double after = mean_related(adjusted.weights);
  MESSAGE("mean related L2 before ", before, " after ", after);
  CHECK(after < before);
  // the regularizer keeps source words near the anchor while the pull
  // term closes most of the gap
  CHECK(after < 0.5 * before);
}
