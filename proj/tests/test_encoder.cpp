#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "xladj/encoder.hpp"
#include "xladj/rng.hpp"

using namespace xladj;
namespace fs = std::filesystem;

namespace {

Batch toy_batch(const SubwordVocab& vocab, std::vector<std::vector<std::string>> sents) {
  std::vector<std::vector<int>> seqs;
  for (const auto& s : sents) {
    seqs.push_back(frame_sentence(tokenize_with_spans(vocab, s).ids, 16));
  }
  return make_batch(seqs);
}

bool weights_equal(const EncoderWeights& a, const EncoderWeights& b) {
  bool equal = true;
  auto pa = a.param_list();
  auto pb = b.param_list();
  for (size_t i = 0; i < pa.size(); ++i) equal &= pa[i]->v == pb[i]->v;
  return equal;
}

}  // namespace

TEST_CASE("init is deterministic and validates the config") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto w1 = init_encoder(cfg, 7);
  auto w2 = init_encoder(cfg, 7);
  CHECK(weights_equal(w1, w2));
  auto w3 = init_encoder(cfg, 8);
  CHECK(!weights_equal(w1, w3));

  auto bad = cfg;
  bad.heads = 3;  // does not divide dim 16
  CHECK_THROWS_AS(init_encoder(bad, 7), std::runtime_error);

  w1.for_each_param([](const char*, const Mat<float>& m) {
    for (float x : m.v) CHECK(std::isfinite(x));
  });
  for (int r = 0; r < w1.tok_emb.rows; ++r) {
    double norm = 0;
    for (int j = 0; j < w1.tok_emb.cols; ++j) norm += double(w1.tok_emb(r, j)) * w1.tok_emb(r, j);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("forward shape contract") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto w = init_encoder(cfg, 1);

  Batch one;
  one.bsz = 1;
  one.seq = 1;
  one.ids = {SubwordVocab::kCls};
  one.mask = {1};
  auto fwd = encoder_forward(w, one);
  REQUIRE(int(fwd.states.size()) == cfg.layers + 1);
  for (const auto& s : fwd.states) {
    CHECK(s.rows == 1);
    CHECK(s.cols == cfg.model_dim);
  }

  Batch bad = one;
  bad.ids = {cfg.vocab_size + 3};
  CHECK_THROWS_AS(encoder_forward(w, bad), std::runtime_error);
}

TEST_CASE("batch items are independent and order-equivariant") {
  auto vocab = testutil::toy_vocab();
  auto w = init_encoder(testutil::tiny_config(vocab.size()), 3);

  auto b1 = toy_batch(vocab, {{"banana", "band"}, {"banana", "band"}, {"sand"}});
  auto fwd = encoder_forward(w, b1);
  const auto& top = fwd.states.back();
  for (int s = 0; s < b1.seq; ++s) {
    for (int j = 0; j < top.cols; ++j) {
      CHECK(top(0 * b1.seq + s, j) == top(1 * b1.seq + s, j));
    }
  }

  auto b2 = toy_batch(vocab, {{"sand"}, {"banana", "band"}, {"banana", "band"}});
  auto fwd2 = encoder_forward(w, b2);
  const auto& top2 = fwd2.states.back();
  for (int s = 0; s < b1.seq; ++s) {
    for (int j = 0; j < top.cols; ++j) {
      CHECK(top(0 * b1.seq + s, j) == top2(1 * b2.seq + s, j));
    }
  }
}

TEST_CASE("attention rows over real keys sum to one") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto w = init_encoder(cfg, 5);
  auto batch = toy_batch(vocab, {{"banana", "band", "river"}, {"sand"}});
  auto fwd = encoder_forward(w, batch);
  for (const auto& lc : fwd.cache.layers) {
    for (int b = 0; b < batch.bsz; ++b) {
      for (int h = 0; h < cfg.heads; ++h) {
        const auto& probs = lc.probs[size_t(b) * cfg.heads + size_t(h)];
        for (int q = 0; q < batch.seq; ++q) {
          double total = 0;
          for (int kk = 0; kk < batch.seq; ++kk) {
            if (!batch.mask[batch.row(b, kk)]) CHECK(probs(q, kk) == 0.0f);
            total += double(probs(q, kk));
          }
          CHECK(std::fabs(total - 1.0) <= 1e-6);
        }
      }
    }
  }
}

TEST_CASE("layer norm output is standardized before the affine map") {
  // With gamma = 1 and beta = 0 at init, ln1_out is the normalized value.
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size(), 2, 32);
  auto w = init_encoder(cfg, 9);
  auto batch = toy_batch(vocab, {{"banana", "band", "river"}});
  auto fwd = encoder_forward(w, batch);
  const auto& ln = fwd.cache.layers[0].ln1_out;
  for (int r = 0; r < ln.rows; ++r) {
    double mean = 0, var = 0;
    for (int j = 0; j < ln.cols; ++j) mean += double(ln(r, j));
    mean /= ln.cols;
    for (int j = 0; j < ln.cols; ++j) {
      const double ctr = double(ln(r, j)) - mean;
      var += ctr * ctr;
    }
    var /= ln.cols;
    CHECK(std::fabs(mean) <= 1e-6);
    CHECK(std::fabs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("forward is pure with dropout disabled") {
  auto vocab = testutil::toy_vocab();
  auto w = init_encoder(testutil::tiny_config(vocab.size()), 11);
  auto batch = toy_batch(vocab, {{"banana", "river"}});
  auto f1 = encoder_forward(w, batch, true, 1);
  auto f2 = encoder_forward(w, batch, true, 2);
  for (size_t l = 0; l < f1.states.size(); ++l) {
    CHECK(f1.states[l].v == f2.states[l].v);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size());
  auto wf = init_encoder(cfg, 13);
  auto w = wf.cast<double>();

  // Padded two-sentence batch.
  std::vector<std::vector<int>> seqs = {
      frame_sentence(tokenize_with_spans(vocab, {"banana", "band", "river"}).ids, 16),
      frame_sentence(tokenize_with_spans(vocab, {"sand"}).ids, 16)};
  Batch batch = make_batch(seqs);

  // Probe: fixed random linear functional over every layer's real rows.
  Rng rng(99);
  std::vector<Mat<double>> probe(size_t(cfg.layers) + 1);
  for (auto& m : probe) {
    m = Mat<double>(batch.bsz * batch.seq, cfg.model_dim);
    for (int b = 0; b < batch.bsz; ++b) {
      for (int s = 0; s < batch.seq; ++s) {
        if (!batch.mask[batch.row(b, s)]) continue;
        for (int j = 0; j < cfg.model_dim; ++j) {
          m(b * batch.seq + s, j) = rng.uniform(-1.0, 1.0);
        }
      }
    }
  }

  auto loss = [&]() {
    auto fwd = encoder_forward(w, batch);
    double total = 0;
    for (size_t l = 0; l < fwd.states.size(); ++l) {
      for (size_t i = 0; i < probe[l].v.size(); ++i) total += probe[l].v[i] * fwd.states[l].v[i];
    }
    return total;
  };

  auto fwd = encoder_forward(w, batch);
  EncoderWeightsT<double> grads = w.zeros_like();
  encoder_backward(w, batch, fwd, probe, grads);

  auto report = testutil::fd_check(w, loss, grads, 1e-5, 3);
  MESSAGE("checked ", report.checked, " params, max rel err ", report.max_rel_err, " at ",
          report.worst_param);
  CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("word vector pooling modes") {
  // "bandana" is novel, so greedy matching leaves it multi-piece
  auto vocab = testutil::toy_vocab(40);
  auto w = init_encoder(testutil::tiny_config(vocab.size()), 17);
  auto tok = tokenize_with_spans(vocab, {"bandana", "sand"});
  Batch batch = make_batch({frame_sentence(tok.ids, 16)});
  auto fwd = encoder_forward(w, batch);

  // single-position span: all modes agree
  auto [b1, e1] = tok.word_spans[1];
  if (e1 - b1 == 1) {
    const std::pair<int, int> span{b1 + 1, e1 + 1};  // +1 for [CLS]
    auto a = word_vector(fwd, span, 2, Pooling::Average).values;
    auto f = word_vector(fwd, span, 2, Pooling::First).values;
    auto l = word_vector(fwd, span, 2, Pooling::Last).values;
    CHECK(a == f);
    CHECK(f == l);
  }

  // multi-position span: average is the arithmetic mean, first/last pick rows
  auto [b0, e0] = tok.word_spans[0];
  REQUIRE(e0 - b0 >= 2);
  const std::pair<int, int> span{b0 + 1, e0 + 1};
  const auto& top = fwd.states.back();
  auto avg = word_vector(fwd, span, 2, Pooling::Average).values;
  for (int j = 0; j < top.cols; ++j) {
    double want = 0;
    for (int s = span.first; s < span.second; ++s) want += double(top(s, j));
    want /= span.second - span.first;
    CHECK(double(avg[size_t(j)]) == doctest::Approx(want).epsilon(1e-6));
  }
  auto first = word_vector(fwd, span, 2, Pooling::First).values;
  auto last = word_vector(fwd, span, 2, Pooling::Last).values;
  for (int j = 0; j < top.cols; ++j) {
    CHECK(first[size_t(j)] == top(span.first, j));
    CHECK(last[size_t(j)] == top(span.second - 1, j));
  }

  CHECK_THROWS_AS(word_vector(fwd, {2, 2}, 2, Pooling::Average), std::runtime_error);
}

TEST_CASE("mlm pretraining reduces the loss") {
  auto vocab = testutil::toy_vocab();
  auto cfg = testutil::tiny_config(vocab.size(), 2, 32);
  auto w = init_encoder(cfg, 21);

  std::vector<TokenizedSentence> sents;
  for (const auto& s : testutil::toy_sentences()) sents.push_back(tokenize_with_spans(vocab, s));

  MlmConfig mlm;
  mlm.steps = 0;
  auto w0 = w;
  CHECK(pretrain_mlm(w, sents, mlm).empty());
  CHECK(weights_equal(w, w0));

  mlm.steps = 200;
  mlm.batch = 8;
  mlm.lr = 2e-3f;
  mlm.mask_prob = 0.2f;
  mlm.seed = 3;
  auto trace = pretrain_mlm(w, sents, mlm);
  REQUIRE(trace.size() == 200);
  auto window = [&](size_t from) {
    double s = 0;
    for (size_t i = from; i < from + 10; ++i) s += trace[i];
    return s / 10.0;
  };
  CHECK(window(190) < window(0));

  // mask_prob = 0: empty prediction set, loss defined as 0, weights kept
  auto w2 = w;
  MlmConfig zero = mlm;
  zero.steps = 5;
  zero.mask_prob = 0.0f;
  auto ztrace = pretrain_mlm(w2, sents, zero);
  for (double v : ztrace) CHECK(v == 0.0);
  CHECK(weights_equal(w2, w));
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption") {
  auto vocab = testutil::toy_vocab();
  auto w = init_encoder(testutil::tiny_config(vocab.size()), 23);
  const auto path = (fs::temp_directory_path() / "xladj_test.ckpt").string();
  save_checkpoint(w, path);
  auto back = load_checkpoint(path);
  CHECK(back.config == w.config);
  CHECK(weights_equal(back, w));

  // truncation names the offset
  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  }
  const auto trunc_path = (fs::temp_directory_path() / "xladj_trunc.ckpt").string();
  {
    std::ofstream f(trunc_path, std::ios::binary);
    f.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(trunc_path), doctest::Contains("offset"),
                       std::runtime_error);

  // version bump names both versions
  const auto ver_path = (fs::temp_directory_path() / "xladj_ver.ckpt").string();
  {
    std::string bad = bytes;
    bad[4] = 9;
    std::ofstream f(ver_path, std::ios::binary);
    f.write(bad.data(), std::streamsize(bad.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(ver_path), doctest::Contains("version 9"),
                       std::runtime_error);
}
