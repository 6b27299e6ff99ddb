#include "xladj/finetuner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "xladj/kernels.hpp"
#include "xladj/optimizer.hpp"
#include "xladj/rng.hpp"

namespace xladj {

void FinetuneConfig::validate() const {
  if (!(lr > 0.0f)) throw std::runtime_error("finetune: lr must be > 0");
  if (epochs < 0) throw std::runtime_error("finetune: negative epoch count");
  if (main_batch < 1 || replay_batch < 1) {
    throw std::runtime_error("finetune: batch sizes must be >= 1");
  }
  if (alpha < 0.0f) throw std::runtime_error("finetune: alpha must be >= 0");
}

TaskHead init_task_head(TaskKind kind, int model_dim, int labels, uint64_t seed) {
  if (labels < 2) throw std::runtime_error("task head needs at least 2 labels");
  TaskHead head;
  head.kind = kind;
  head.w = Mat<float>(model_dim, labels);
  head.b = Mat<float>(1, labels);
  Rng rng(seed);
  const double a = std::sqrt(6.0 / double(model_dim + labels));
  for (auto& x : head.w.v) x = float(rng.uniform(-a, a));
  return head;
}

std::vector<int> encode_pair_example(const SubwordVocab& vocab, const PairExample& ex,
                                     int max_positions) {
  const auto p = tokenize_with_spans(vocab, ex.premise);
  const auto h = tokenize_with_spans(vocab, ex.hypothesis);
  std::vector<int> out;
  out.reserve(p.ids.size() + h.ids.size() + 3);
  out.push_back(SubwordVocab::kCls);
  const size_t limit = size_t(max_positions) - 1;
  for (int id : p.ids) {
    if (out.size() >= limit - 1) break;
    out.push_back(id);
  }
  out.push_back(SubwordVocab::kSep);
  for (int id : h.ids) {
    if (out.size() >= limit) break;
    out.push_back(id);
  }
  out.push_back(SubwordVocab::kSep);
  return out;
}

namespace {

// Uniform representation of a fine-tuning example: a framed sequence plus
// the positions that carry labels.
struct EncodedExample {
  std::vector<int> seq;
  std::vector<int> label_pos;
  std::vector<int> labels;
};

std::vector<EncodedExample> encode_classification(const std::vector<PairExample>& data,
                                                  const SubwordVocab& vocab, int max_positions,
                                                  int n_labels) {
  std::vector<EncodedExample> out;
  out.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    if (ex.label < 0 || ex.label >= n_labels) {
      std::ostringstream os;
      os << "example " << i << ": label " << ex.label << " out of range [0, " << n_labels << ")";
      throw std::runtime_error(os.str());
    }
    EncodedExample e;
    e.seq = encode_pair_example(vocab, ex, max_positions);
    e.label_pos = {0};  // CLS
    e.labels = {ex.label};
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EncodedExample> encode_tagging(const std::vector<TaggedSentence>& data,
                                           const SubwordVocab& vocab, int max_positions,
                                           int n_labels) {
  std::vector<EncodedExample> out;
  out.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    const auto& sent = data[i];
    if (sent.tokens.size() != sent.tags.size()) {
      std::ostringstream os;
      os << "sentence " << i << ": token/tag count mismatch";
      throw std::runtime_error(os.str());
    }
    const auto tok = tokenize_with_spans(vocab, sent.tokens);
    EncodedExample e;
    e.seq = frame_sentence(tok.ids, max_positions);
    for (size_t wi = 0; wi < sent.tokens.size(); ++wi) {
      const int tag = sent.tags[wi];
      if (tag < 0 || tag >= n_labels) {
        std::ostringstream os;
        os << "sentence " << i << ": tag " << tag << " out of range [0, " << n_labels << ")";
        throw std::runtime_error(os.str());
      }
      const int pos = 1 + tok.word_spans[wi].first;  // first subword, shifted by [CLS]
      if (pos >= int(e.seq.size()) - 1) continue;    // truncated away
      e.label_pos.push_back(pos);
      e.labels.push_back(tag);
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

template <class T>
TaskLossResult<T> head_loss(const EncoderWeightsT<T>& model, const Mat<T>& head_w,
                            const Mat<T>& head_b, const std::vector<std::vector<int>>& seqs,
                            const std::vector<std::vector<int>>& label_pos,
                            const std::vector<std::vector<int>>& labels, uint64_t dropout_seed) {
  if (seqs.size() != label_pos.size() || seqs.size() != labels.size()) {
    throw std::runtime_error("head_loss: batch shape mismatch");
  }
  const EncoderConfig& c = model.config;
  const int n_labels = head_w.cols;

  TaskLossResult<T> out;
  out.grads = model.zeros_like();
  out.head_w_grad = Mat<T>(head_w.rows, head_w.cols);
  out.head_b_grad = Mat<T>(head_b.rows, head_b.cols);

  Batch batch = make_batch(seqs);
  auto fwd = encoder_forward(model, batch, true, dropout_seed);
  const Mat<T>& top = fwd.states.back();

  std::vector<int> rows;
  std::vector<int> flat_labels;
  for (size_t s = 0; s < seqs.size(); ++s) {
    for (size_t k = 0; k < label_pos[s].size(); ++k) {
      rows.push_back(int(s) * batch.seq + label_pos[s][k]);
      flat_labels.push_back(labels[s][k]);
    }
  }
  if (rows.empty()) return out;

  const int p = int(rows.size());
  Mat<T> x(p, c.model_dim);
  for (int i = 0; i < p; ++i) {
    std::memcpy(x.row(i), top.row(rows[size_t(i)]), sizeof(T) * size_t(c.model_dim));
  }
  Mat<T> logits(p, n_labels);
  kernels::gemm_nn(p, n_labels, c.model_dim, x.data(), head_w.data(), T(0), logits.data());
  for (int i = 0; i < p; ++i) kernels::axpy(n_labels, T(1), head_b.data(), logits.row(i));

  out.loss = double(softmax_xent_inplace(logits, flat_labels));

  Mat<T> dx(p, c.model_dim);
  kernels::gemm_nt(p, c.model_dim, n_labels, logits.data(), head_w.data(), T(0), dx.data());
  kernels::gemm_tn(c.model_dim, n_labels, p, x.data(), logits.data(), T(1),
                   out.head_w_grad.data());
  for (int i = 0; i < p; ++i) kernels::axpy(n_labels, T(1), logits.row(i), out.head_b_grad.data());

  std::vector<Mat<T>> state_grads(size_t(c.layers) + 1);
  Mat<T> dtop(top.rows, top.cols);
  for (int i = 0; i < p; ++i) {
    kernels::axpy(c.model_dim, T(1), dx.row(i), dtop.row(rows[size_t(i)]));
  }
  state_grads[size_t(c.layers)] = std::move(dtop);
  encoder_backward(model, batch, fwd, state_grads, out.grads);
  return out;
}

template TaskLossResult<float> head_loss<float>(const EncoderWeightsT<float>&, const Mat<float>&,
                                                const Mat<float>&,
                                                const std::vector<std::vector<int>>&,
                                                const std::vector<std::vector<int>>&,
                                                const std::vector<std::vector<int>>&, uint64_t);
template TaskLossResult<double> head_loss<double>(const EncoderWeightsT<double>&,
                                                  const Mat<double>&, const Mat<double>&,
                                                  const std::vector<std::vector<int>>&,
                                                  const std::vector<std::vector<int>>&,
                                                  const std::vector<std::vector<int>>&, uint64_t);

namespace {

FinetuneResult finetune_impl(EncoderWeights& model, TaskHead& head,
                             std::vector<EncodedExample> encoded, const WordPairSet* pairs,
                             const AnchorModel* anchor, const FinetuneConfig& cfg) {
  cfg.validate();
  if (encoded.empty()) throw std::runtime_error("finetune: empty dataset");
  const bool replay = pairs != nullptr && cfg.alpha > 0.0f;
  if (pairs != nullptr && cfg.alpha > 0.0f && pairs->empty()) {
    throw std::runtime_error("finetune_continual: alpha > 0 with empty word pair set");
  }

  FinetuneResult result;
  if (cfg.epochs == 0) return result;

  std::vector<std::vector<float>> anchor_cache;
  if (replay) {
    anchor_cache =
        anchor_source_vectors(*anchor, *pairs, cfg.replay_pooling, cfg.replay_layer);
  }

  Adam<float> opt(cfg.lr);
  Rng rng(cfg.seed);
  Rng replay_rng(derive_seed(cfg.seed, "replay"));
  const uint64_t dropout_base = derive_seed(cfg.seed, "dropout");

  std::vector<size_t> order(encoded.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t begin = 0; begin < order.size(); begin += size_t(cfg.main_batch)) {
      const size_t end = std::min(order.size(), begin + size_t(cfg.main_batch));
      std::vector<size_t> batch_idx(order.begin() + long(begin), order.begin() + long(end));

      std::vector<std::vector<int>> seqs, lpos, labs;
      for (size_t i : batch_idx) {
        seqs.push_back(encoded[i].seq);
        lpos.push_back(encoded[i].label_pos);
        labs.push_back(encoded[i].labels);
      }
      auto tl = head_loss<float>(model, head.w, head.b, seqs, lpos, labs,
                                 dropout_base + uint64_t(step));
      EncoderWeights& grads = tl.grads;

      double align = 0.0;
      std::vector<size_t> replay_idx;
      if (replay) {
        replay_idx.resize(size_t(cfg.replay_batch));
        for (auto& r : replay_idx) r = size_t(replay_rng.uniform_int(pairs->items.size()));
        auto align_res = alignment_loss<float>(model, *anchor, *pairs, replay_idx,
                                               cfg.replay_pooling, cfg.replay_layer,
                                               &anchor_cache);
        align = align_res.total;
        const float a = cfg.alpha;
        auto glist = grads.param_list();
        auto alist = const_cast<const EncoderWeights&>(align_res.grads).param_list();
        for (size_t i = 0; i < glist.size(); ++i) {
          kernels::axpy(int(glist[i]->size()), a, alist[i]->data(), glist[i]->data());
        }
      }

      auto params = model.param_list();
      params.push_back(&head.w);
      params.push_back(&head.b);
      std::vector<const Mat<float>*> glist =
          const_cast<const EncoderWeights&>(grads).param_list();
      glist.push_back(&tl.head_w_grad);
      glist.push_back(&tl.head_b_grad);
      opt.step(params, glist);

      result.target_trace.push_back(tl.loss);
      result.align_trace.push_back(align);
      result.combined_trace.push_back(tl.loss + double(cfg.alpha) * align);
      result.batch_examples.push_back(std::move(batch_idx));
      result.replay_items.push_back(std::move(replay_idx));
      ++step;
    }
  }
  return result;
}

}  // namespace

FinetuneResult finetune(EncoderWeights& model, TaskHead& head,
                        const std::vector<PairExample>& data, const SubwordVocab& vocab,
                        const FinetuneConfig& config) {
  if (head.kind != TaskKind::PairClassification) {
    throw std::runtime_error("finetune: head is not a pair-classification head");
  }
  return finetune_impl(model, head,
                       encode_classification(data, vocab, model.config.max_positions,
                                             head.labels()),
                       nullptr, nullptr, config);
}

FinetuneResult finetune_continual(EncoderWeights& model, TaskHead& head,
                                  const std::vector<PairExample>& data, const SubwordVocab& vocab,
                                  const WordPairSet& pairs, const AnchorModel& anchor,
                                  const FinetuneConfig& config) {
  if (head.kind != TaskKind::PairClassification) {
    throw std::runtime_error("finetune_continual: head is not a pair-classification head");
  }
  return finetune_impl(model, head,
                       encode_classification(data, vocab, model.config.max_positions,
                                             head.labels()),
                       &pairs, &anchor, config);
}

FinetuneResult finetune_tagging(EncoderWeights& model, TaskHead& head,
                                const std::vector<TaggedSentence>& data,
                                const SubwordVocab& vocab, const FinetuneConfig& config) {
  if (head.kind != TaskKind::TokenTagging) {
    throw std::runtime_error("finetune_tagging: head is not a tagging head");
  }
  return finetune_impl(model, head,
                       encode_tagging(data, vocab, model.config.max_positions, head.labels()),
                       nullptr, nullptr, config);
}

FinetuneResult finetune_tagging_continual(EncoderWeights& model, TaskHead& head,
                                          const std::vector<TaggedSentence>& data,
                                          const SubwordVocab& vocab, const WordPairSet& pairs,
                                          const AnchorModel& anchor,
                                          const FinetuneConfig& config) {
  if (head.kind != TaskKind::TokenTagging) {
    throw std::runtime_error("finetune_tagging_continual: head is not a tagging head");
  }
  return finetune_impl(model, head,
                       encode_tagging(data, vocab, model.config.max_positions, head.labels()),
                       &pairs, &anchor, config);
}

namespace {

// Batched argmax predictions at the labeled positions.
std::vector<std::vector<int>> predict(const EncoderWeights& model, const TaskHead& head,
                                      const std::vector<EncodedExample>& encoded,
                                      int chunk = 64) {
  const EncoderConfig& c = model.config;
  std::vector<std::vector<int>> preds(encoded.size());
  for (size_t begin = 0; begin < encoded.size(); begin += size_t(chunk)) {
    const size_t end = std::min(encoded.size(), begin + size_t(chunk));
    std::vector<std::vector<int>> seqs;
    for (size_t i = begin; i < end; ++i) seqs.push_back(encoded[i].seq);
    Batch batch = make_batch(seqs);
    auto fwd = encoder_forward(model, batch);
    const Mat<float>& top = fwd.states.back();
    for (size_t i = begin; i < end; ++i) {
      const auto& e = encoded[i];
      const int slot = int(i - begin);
      for (int pos : e.label_pos) {
        const float* row = top.row(slot * batch.seq + pos);
        // logits = row * W + b; ties resolve to the lowest label id
        int best = 0;
        float best_v = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < head.labels(); ++j) {
          float v = head.b.data()[j];
          for (int d = 0; d < c.model_dim; ++d) v += row[d] * head.w(d, j);
          if (v > best_v) {
            best_v = v;
            best = j;
          }
        }
        preds[i].push_back(best);
      }
    }
  }
  return preds;
}

}  // namespace

EvalClassification evaluate_classification(const EncoderWeights& model, const TaskHead& head,
                                           const std::vector<PairExample>& data,
                                           const SubwordVocab& vocab) {
  if (head.kind != TaskKind::PairClassification) {
    throw std::runtime_error("evaluate_classification: wrong head kind");
  }
  auto encoded =
      encode_classification(data, vocab, model.config.max_positions, head.labels());
  auto preds = predict(model, head, encoded);
  EvalClassification out;
  out.correct.resize(data.size());
  out.predictions.resize(data.size());
  size_t hits = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    out.predictions[i] = preds[i][0];
    out.correct[i] = preds[i][0] == data[i].label;
    hits += out.correct[i];
  }
  out.accuracy = data.empty() ? 0.0 : double(hits) / double(data.size());
  return out;
}

EvalTagging evaluate_tagging(const EncoderWeights& model, const TaskHead& head,
                             const std::vector<TaggedSentence>& data, const SubwordVocab& vocab,
                             int outside_tag) {
  if (head.kind != TaskKind::TokenTagging) {
    throw std::runtime_error("evaluate_tagging: wrong head kind");
  }
  auto encoded = encode_tagging(data, vocab, model.config.max_positions, head.labels());
  auto preds = predict(model, head, encoded);

  int64_t correct = 0, pred_n = 0, gold_n = 0;
  EvalTagging out;
  out.predictions.resize(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    out.predictions[i] = preds[i];
    const auto& labels = encoded[i].labels;
    for (size_t k = 0; k < labels.size(); ++k) {
      const bool p_ent = preds[i][k] != outside_tag;
      const bool g_ent = labels[k] != outside_tag;
      pred_n += p_ent;
      gold_n += g_ent;
      correct += p_ent && g_ent && preds[i][k] == labels[k];
    }
  }
  if (pred_n > 0 && gold_n > 0) {
    const double precision = double(correct) / double(pred_n);
    const double recall = double(correct) / double(gold_n);
    if (precision + recall > 0.0) {
      out.micro_f1 = 2.0 * precision * recall / (precision + recall);
    }
  }
  return out;
}

void save_task_head(const TaskHead& head, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open head checkpoint for writing: " + path);
  auto put_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) f.put(char((v >> (8 * i)) & 0xFF));
  };
  f.write("XLHD", 4);
  put_u32(head.kind == TaskKind::PairClassification ? 0u : 1u);
  put_u32(uint32_t(head.w.rows));
  put_u32(uint32_t(head.w.cols));
  auto put_f32 = [&](float x) {
    uint32_t v;
    std::memcpy(&v, &x, 4);
    put_u32(v);
  };
  for (float x : head.w.v) put_f32(x);
  for (float x : head.b.v) put_f32(x);
  if (!f) throw std::runtime_error("head checkpoint write failed: " + path);
}

TaskHead load_task_head(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open head checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t off = 0;
  auto need = [&](size_t n) {
    if (off + n > buf.size()) {
      std::ostringstream os;
      os << path << ": truncated head checkpoint at offset " << off;
      throw std::runtime_error(os.str());
    }
  };
  need(4);
  if (std::memcmp(buf.data(), "XLHD", 4) != 0) {
    throw std::runtime_error(path + ": bad head checkpoint magic");
  }
  off = 4;
  auto get_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[off + size_t(i)])) << (8 * i);
    off += 4;
    return v;
  };
  TaskHead head;
  head.kind = get_u32() == 0 ? TaskKind::PairClassification : TaskKind::TokenTagging;
  const int rows = int(get_u32());
  const int cols = int(get_u32());
  if (rows < 1 || cols < 2) throw std::runtime_error(path + ": bad head shape");
  head.w = Mat<float>(rows, cols);
  head.b = Mat<float>(1, cols);
  auto get_f32 = [&]() {
    const uint32_t v = get_u32();
    float x;
    std::memcpy(&x, &v, 4);
    return x;
  };
  for (auto& x : head.w.v) x = get_f32();
  for (auto& x : head.b.v) x = get_f32();
  return head;
}

void write_classification_dump(const std::string& path, uint64_t seed,
                               const EvalClassification& eval) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "seed,example_id,correct,prediction\n";
  for (size_t i = 0; i < eval.correct.size(); ++i) {
    f << seed << "," << i << "," << int(eval.correct[i]) << "," << eval.predictions[i] << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void write_tagging_dump(const std::string& path, uint64_t seed,
                        const std::vector<TaggedSentence>& gold, const EvalTagging& eval) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "seed,sentence_id,token_index,gold,prediction\n";
  for (size_t s = 0; s < eval.predictions.size(); ++s) {
    for (size_t k = 0; k < eval.predictions[s].size(); ++k) {
      f << seed << "," << s << "," << k << "," << gold[s].tags[k] << ","
        << eval.predictions[s][k] << "\n";
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace xladj
