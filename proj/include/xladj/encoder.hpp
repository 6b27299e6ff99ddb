#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xladj/bpe.hpp"
#include "xladj/mat.hpp"

namespace xladj {

struct EncoderConfig {
  int layers = 4;
  int model_dim = 64;
  int heads = 4;
  int ffn_dim = 256;
  int max_positions = 128;
  int vocab_size = 0;
  float dropout = 0.0f;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <class T>
struct LayerWeightsT {
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;  // attention, all dim x dim (+1 x dim biases)
  Mat<T> ln1_g, ln1_b, ln2_g, ln2_b;      // 1 x dim
  Mat<T> w1, b1;                          // dim x ffn, 1 x ffn
  Mat<T> w2, b2;                          // ffn x dim, 1 x dim
};

// All trainable tensors. A frozen deep copy of this struct is the anchor
// model. Gradients reuse the same struct (identical shapes).
template <class T>
struct EncoderWeightsT {
  EncoderConfig config;
  Mat<T> tok_emb;  // vocab x dim
  Mat<T> pos_emb;  // max_positions x dim
  std::vector<LayerWeightsT<T>> layers;
  Mat<T> final_g, final_b;  // final pre-LN norm, 1 x dim
  Mat<T> mlm_w, mlm_b;      // dim x vocab, 1 x vocab

  // Declared order; also the checkpoint tensor order.
  template <class F>
  void for_each_param(F&& f) {
    f("tok_emb", tok_emb);
    f("pos_emb", pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
      auto& lw = layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f((p + "ln1_g").c_str(), lw.ln1_g);
      f((p + "ln1_b").c_str(), lw.ln1_b);
      f((p + "wq").c_str(), lw.wq);
      f((p + "bq").c_str(), lw.bq);
      f((p + "wk").c_str(), lw.wk);
      f((p + "bk").c_str(), lw.bk);
      f((p + "wv").c_str(), lw.wv);
      f((p + "bv").c_str(), lw.bv);
      f((p + "wo").c_str(), lw.wo);
      f((p + "bo").c_str(), lw.bo);
      f((p + "ln2_g").c_str(), lw.ln2_g);
      f((p + "ln2_b").c_str(), lw.ln2_b);
      f((p + "w1").c_str(), lw.w1);
      f((p + "b1").c_str(), lw.b1);
      f((p + "w2").c_str(), lw.w2);
      f((p + "b2").c_str(), lw.b2);
    }
    f("final_g", final_g);
    f("final_b", final_b);
    f("mlm_w", mlm_w);
    f("mlm_b", mlm_b);
  }

  template <class F>
  void for_each_param(F&& f) const {
    const_cast<EncoderWeightsT*>(this)->for_each_param(
        [&](const char* name, Mat<T>& m) { f(name, const_cast<const Mat<T>&>(m)); });
  }

  std::vector<Mat<T>*> param_list() {
    std::vector<Mat<T>*> out;
    for_each_param([&](const char*, Mat<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Mat<T>*> param_list() const {
    std::vector<const Mat<T>*> out;
    for_each_param([&](const char*, const Mat<T>& m) { out.push_back(&m); });
    return out;
  }

  EncoderWeightsT zeros_like() const {
    EncoderWeightsT z = *this;
    z.for_each_param([](const char*, Mat<T>& m) { m.zero(); });
    return z;
  }

  template <class U>
  EncoderWeightsT<U> cast() const {
    EncoderWeightsT<U> out;
    out.config = config;
    out.tok_emb = tok_emb.template cast<U>();
    out.pos_emb = pos_emb.template cast<U>();
    out.layers.resize(layers.size());
    for (size_t l = 0; l < layers.size(); ++l) {
      const auto& a = layers[l];
      auto& b = out.layers[l];
      b.wq = a.wq.template cast<U>();
      b.bq = a.bq.template cast<U>();
      b.wk = a.wk.template cast<U>();
      b.bk = a.bk.template cast<U>();
      b.wv = a.wv.template cast<U>();
      b.bv = a.bv.template cast<U>();
      b.wo = a.wo.template cast<U>();
      b.bo = a.bo.template cast<U>();
      b.ln1_g = a.ln1_g.template cast<U>();
      b.ln1_b = a.ln1_b.template cast<U>();
      b.ln2_g = a.ln2_g.template cast<U>();
      b.ln2_b = a.ln2_b.template cast<U>();
      b.w1 = a.w1.template cast<U>();
      b.b1 = a.b1.template cast<U>();
      b.w2 = a.w2.template cast<U>();
      b.b2 = a.b2.template cast<U>();
    }
    out.final_g = final_g.template cast<U>();
    out.final_b = final_b.template cast<U>();
    out.mlm_w = mlm_w.template cast<U>();
    out.mlm_b = mlm_b.template cast<U>();
    return out;
  }
};

using EncoderWeights = EncoderWeightsT<float>;

template <class T>
EncoderWeightsT<T> init_encoder_t(const EncoderConfig& config, uint64_t seed);
EncoderWeights init_encoder(const EncoderConfig& config, uint64_t seed);

// Padded subword-id batch; mask marks real tokens.
struct Batch {
  int bsz = 0;
  int seq = 0;
  std::vector<int> ids;
  std::vector<uint8_t> mask;

  size_t row(int b, int s) const { return size_t(b) * seq + s; }
};

Batch make_batch(const std::vector<std::vector<int>>& seqs);

// [CLS] subwords [SEP], truncated to max_positions. Word spans shift by 1.
std::vector<int> frame_sentence(const std::vector<int>& subword_ids, int max_positions);

template <class T>
struct LayerCache {
  Mat<T> ln1_out;
  std::vector<T> ln1_mean, ln1_rstd;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;  // per (batch * heads + head): seq x seq
  Mat<T> ctx;
  Mat<T> attn_drop;
  Mat<T> resid1;
  Mat<T> ln2_out;
  std::vector<T> ln2_mean, ln2_rstd;
  Mat<T> ffn_pre, ffn_act;
  Mat<T> ffn_drop;
};

template <class T>
struct ForwardCache {
  Mat<T> emb_drop;
  std::vector<LayerCache<T>> layers;
  Mat<T> final_in;  // residual stream entering the final layer norm
  std::vector<T> final_mean, final_rstd;
};

// states[0] is the embedding output, states[l] the residual stream after
// block l, and states[layers] the final-layer-norm output read by heads
// and pooling.
template <class T>
struct ForwardResult {
  std::vector<Mat<T>> states;  // layers + 1 entries, each (bsz*seq) x dim
  ForwardCache<T> cache;
};

template <class T>
ForwardResult<T> encoder_forward(const EncoderWeightsT<T>& w, const Batch& batch,
                                 bool training = false, uint64_t dropout_seed = 0);

// state_grads[l] (empty = zero) is dLoss/d states[l]; parameter gradients
// accumulate into grads. Padding rows of injected gradients are ignored.
template <class T>
void encoder_backward(const EncoderWeightsT<T>& w, const Batch& batch,
                      const ForwardResult<T>& fwd, const std::vector<Mat<T>>& state_grads,
                      EncoderWeightsT<T>& grads);

enum class Pooling { Average, First, Last };
Pooling pooling_from_string(const std::string& s);
const char* pooling_name(Pooling p);

// -1 selects the last layer.
int resolve_layer(int layer_flag, int layers);

template <class T>
std::vector<T> pool_word_vector(const Mat<T>& layer_states, int row_offset,
                                std::pair<int, int> span, Pooling pooling);

// Distributes a pooled-vector gradient back over the span rows.
template <class T>
void pool_word_vector_backward(const std::vector<T>& grad, int row_offset,
                               std::pair<int, int> span, Pooling pooling, Mat<T>& state_grad);

struct WordVector {
  std::vector<float> values;
  int layer = 0;
  Pooling pooling = Pooling::Average;
};

WordVector word_vector(const ForwardResult<float>& fwd, std::pair<int, int> span, int layer,
                       Pooling pooling);

// Mean cross-entropy over rows; logits is overwritten with d(loss)/d(logits).
template <class T>
T softmax_xent_inplace(Mat<T>& logits, const std::vector<int>& labels);

struct MlmConfig {
  int steps = 0;
  int batch = 16;
  float mask_prob = 0.15f;
  float lr = 1e-3f;
  uint64_t seed = 0;
};

// Masked-token pretraining with Adam; returns the per-step loss trace.
// Steps with an empty prediction set leave the weights untouched.
std::vector<double> pretrain_mlm(EncoderWeights& w, const std::vector<TokenizedSentence>& sentences,
                                 const MlmConfig& cfg);

// Binary checkpoint: magic "XLNG", version, config, tensors in declared
// order as little-endian 32-bit floats with length prefixes.
void save_checkpoint(const EncoderWeights& w, const std::string& path);
EncoderWeights load_checkpoint(const std::string& path);

}  // namespace xladj
