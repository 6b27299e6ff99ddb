#include "xladj/adjuster.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "xladj/kernels.hpp"
#include "xladj/optimizer.hpp"
#include "xladj/rng.hpp"

namespace xladj {

void AdjustConfig::validate() const {
  if (!(lr > 0.0f)) throw std::runtime_error("adjust: lr must be > 0");
  if (batch_pairs < 1) throw std::runtime_error("adjust: batch_pairs must be >= 1");
  if (epochs < 0) throw std::runtime_error("adjust: negative epoch count");
}

namespace {

// Forward a set of framed sequences in fixed-size chunks and pool one word
// vector per request. Requests index into seqs; spans are subword spans
// relative to the unframed sentence (the [CLS] shift is applied here).
template <class T>
std::vector<std::vector<T>> pooled_vectors(const EncoderWeightsT<T>& model,
                                           const std::vector<std::vector<int>>& seqs,
                                           const std::vector<int>& req_seq,
                                           const std::vector<std::pair<int, int>>& req_span,
                                           Pooling pooling, int layer_flag, int chunk = 64) {
  const int layer = resolve_layer(layer_flag, model.config.layers);
  std::vector<std::vector<T>> out(req_seq.size());

  std::vector<std::vector<size_t>> by_seq(seqs.size());
  for (size_t r = 0; r < req_seq.size(); ++r) by_seq[size_t(req_seq[r])].push_back(r);

  for (size_t begin = 0; begin < seqs.size(); begin += size_t(chunk)) {
    const size_t end = std::min(seqs.size(), begin + size_t(chunk));
    std::vector<std::vector<int>> chunk_seqs(seqs.begin() + long(begin), seqs.begin() + long(end));
    Batch batch = make_batch(chunk_seqs);
    auto fwd = encoder_forward(model, batch);
    const Mat<T>& states = fwd.states[size_t(layer)];
    for (size_t s = begin; s < end; ++s) {
      const int slot = int(s - begin);
      for (size_t r : by_seq[s]) {
        out[r] = pool_word_vector(states, slot * batch.seq + 1, req_span[r], pooling);
      }
    }
  }
  return out;
}

}  // namespace

template <class T>
std::vector<std::vector<T>> anchor_source_vectors(const AnchorModelT<T>& anchor,
                                                  const WordPairSet& pairs, Pooling pooling,
                                                  int layer_flag) {
  if (!pairs.sentences) throw std::runtime_error("word pair set has no sentence contexts");
  const int maxpos = anchor.weights.config.max_positions;

  // Unique source sentences referenced by the items.
  std::map<int, int> sent_to_seq;
  std::vector<std::vector<int>> seqs;
  std::vector<int> req_seq;
  std::vector<std::pair<int, int>> req_span;
  for (const auto& item : pairs.items) {
    auto [it, inserted] = sent_to_seq.try_emplace(item.sent_id, int(seqs.size()));
    if (inserted) {
      seqs.push_back(frame_sentence((*pairs.sentences)[size_t(item.sent_id)].src.ids, maxpos));
    }
    req_seq.push_back(it->second);
    req_span.push_back(item.src_span);
  }
  return pooled_vectors(anchor.weights, seqs, req_seq, req_span, pooling, layer_flag);
}

template <class T>
AlignLossResult<T> alignment_loss(const EncoderWeightsT<T>& model, const AnchorModelT<T>& anchor,
                                  const WordPairSet& pairs,
                                  const std::vector<size_t>& batch_items, Pooling pooling,
                                  int layer_flag,
                                  const std::vector<std::vector<T>>* anchor_cache) {
  if (batch_items.empty()) throw std::runtime_error("alignment_loss: empty batch");
  if (!pairs.sentences) throw std::runtime_error("word pair set has no sentence contexts");
  const EncoderConfig& c = model.config;
  const int layer = resolve_layer(layer_flag, c.layers);
  const int dim = c.model_dim;

  // One framed sequence per referenced (sentence, side); items share slots.
  std::map<std::pair<int, int>, int> slot_of;  // (sent, side 0=src 1=tgt) -> slot
  std::vector<std::vector<int>> seqs;
  auto slot_for = [&](int sent, int side) {
    auto [it, inserted] = slot_of.try_emplace({sent, side}, int(seqs.size()));
    if (inserted) {
      const auto& tp = (*pairs.sentences)[size_t(sent)];
      seqs.push_back(frame_sentence(side == 0 ? tp.src.ids : tp.tgt.ids, c.max_positions));
    }
    return it->second;
  };
  struct ItemSlots {
    int src_slot, tgt_slot;
    const WordPairItem* item;
  };
  std::vector<ItemSlots> slots;
  slots.reserve(batch_items.size());
  for (size_t idx : batch_items) {
    if (idx >= pairs.items.size()) throw std::runtime_error("alignment_loss: item out of range");
    const auto& item = pairs.items[idx];
    slots.push_back({slot_for(item.sent_id, 0), slot_for(item.sent_id, 1), &item});
  }

  Batch batch = make_batch(seqs);
  auto fwd = encoder_forward(model, batch);
  const Mat<T>& states = fwd.states[size_t(layer)];

  // Anchor source vectors: from the shared cache or computed on the spot.
  std::vector<std::vector<T>> anchor_vecs;
  if (anchor_cache == nullptr) {
    std::vector<std::vector<int>> aseqs;
    std::map<int, int> asent;
    std::vector<int> areq;
    std::vector<std::pair<int, int>> aspan;
    for (size_t idx : batch_items) {
      const auto& item = pairs.items[idx];
      auto [it, inserted] = asent.try_emplace(item.sent_id, int(aseqs.size()));
      if (inserted) {
        aseqs.push_back(
            frame_sentence((*pairs.sentences)[size_t(item.sent_id)].src.ids,
                           anchor.weights.config.max_positions));
      }
      areq.push_back(it->second);
      aspan.push_back(item.src_span);
    }
    anchor_vecs = pooled_vectors(anchor.weights, aseqs, areq, aspan, pooling, layer_flag);
  }

  AlignLossResult<T> result;
  result.grads = model.zeros_like();
  Mat<T> dstate(states.rows, states.cols);

  std::vector<T> fs, ft;
  std::vector<T> gs(size_t(dim), T(0)), gt(size_t(dim), T(0));
  for (size_t b = 0; b < slots.size(); ++b) {
    const auto& sl = slots[b];
    const int src_off = sl.src_slot * batch.seq + 1;
    const int tgt_off = sl.tgt_slot * batch.seq + 1;
    fs = pool_word_vector(states, src_off, sl.item->src_span, pooling);
    ft = pool_word_vector(states, tgt_off, sl.item->tgt_span, pooling);
    const std::vector<T>& f0 = anchor_cache ? (*anchor_cache)[batch_items[b]] : anchor_vecs[b];
    if (int(f0.size()) != dim) throw std::runtime_error("alignment_loss: anchor cache mismatch");

    result.pull += double(kernels::sumsq_diff(dim, fs.data(), ft.data()));
    result.reg += double(kernels::sumsq_diff(dim, fs.data(), f0.data()));

    // d/d f(s) = 2(f(s)-f(t)) + 2(f(s)-f0(s)); d/d f(t) = -2(f(s)-f(t))
    for (int j = 0; j < dim; ++j) {
      const T pull_d = fs[size_t(j)] - ft[size_t(j)];
      gs[size_t(j)] = T(2) * pull_d + T(2) * (fs[size_t(j)] - f0[size_t(j)]);
      gt[size_t(j)] = T(-2) * pull_d;
    }
    pool_word_vector_backward(gs, src_off, sl.item->src_span, pooling, dstate);
    pool_word_vector_backward(gt, tgt_off, sl.item->tgt_span, pooling, dstate);
  }
  result.total = result.pull + result.reg;

  std::vector<Mat<T>> state_grads(size_t(c.layers) + 1);
  state_grads[size_t(layer)] = std::move(dstate);
  encoder_backward(model, batch, fwd, state_grads, result.grads);
  return result;
}

AdjustResult adjust(const EncoderWeights& model, const WordPairSet& pairs,
                    const AdjustConfig& config) {
  config.validate();
  if (pairs.empty()) throw std::runtime_error("adjust: empty word pair set");

  AdjustResult out;
  out.weights = model;
  if (config.epochs == 0) return out;

  AnchorModel anchor{model};
  const auto cache = anchor_source_vectors(anchor, pairs, config.pooling, config.layer);

  Adam<float> opt(config.lr);
  Rng rng(config.seed);
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t begin = 0; begin < order.size(); begin += size_t(config.batch_pairs)) {
      const size_t end = std::min(order.size(), begin + size_t(config.batch_pairs));
      std::vector<size_t> batch_items(order.begin() + long(begin), order.begin() + long(end));
      auto loss = alignment_loss<float>(out.weights, anchor, pairs, batch_items, config.pooling,
                                        config.layer, &cache);
      auto params = out.weights.param_list();
      auto grads = const_cast<const EncoderWeights&>(loss.grads).param_list();
      opt.step(params, grads);
      out.trace.push_back({step++, loss.pull, loss.reg, loss.total});
    }
  }
  return out;
}

void write_loss_trace(const std::vector<AdjustTraceRow>& trace, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "step,pull_term,reg_term,total\n";
  for (const auto& row : trace) {
    f << row.step << "," << row.pull << "," << row.reg << "," << row.total << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

template std::vector<std::vector<float>> anchor_source_vectors<float>(const AnchorModelT<float>&,
                                                                      const WordPairSet&, Pooling,
                                                                      int);
template std::vector<std::vector<double>> anchor_source_vectors<double>(
    const AnchorModelT<double>&, const WordPairSet&, Pooling, int);
template AlignLossResult<float> alignment_loss<float>(const EncoderWeightsT<float>&,
                                                      const AnchorModelT<float>&,
                                                      const WordPairSet&,
                                                      const std::vector<size_t>&, Pooling, int,
                                                      const std::vector<std::vector<float>>*);
template AlignLossResult<double> alignment_loss<double>(const EncoderWeightsT<double>&,
                                                        const AnchorModelT<double>&,
                                                        const WordPairSet&,
                                                        const std::vector<size_t>&, Pooling, int,
                                                        const std::vector<std::vector<double>>*);

}  // namespace xladj
