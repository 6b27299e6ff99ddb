#pragma once

#include <cstdint>
#include <vector>

#include "xladj/aligner.hpp"
#include "xladj/encoder.hpp"

namespace xladj {

struct AdjustConfig {
  float lr = 5e-5f;
  int epochs = 1;
  int batch_pairs = 16;
  Pooling pooling = Pooling::Average;
  int layer = -1;  // -1 = last
  uint64_t seed = 0;

  void validate() const;
};

// Frozen deep copy of the pre-adjustment encoder; never mutated.
template <class T>
struct AnchorModelT {
  EncoderWeightsT<T> weights;
};
using AnchorModel = AnchorModelT<float>;

// Word vectors of the anchor model for each item's source occurrence,
// computed once (the anchor never changes).
template <class T>
std::vector<std::vector<T>> anchor_source_vectors(const AnchorModelT<T>& anchor,
                                                  const WordPairSet& pairs, Pooling pooling,
                                                  int layer_flag);

template <class T>
struct AlignLossResult {
  double pull = 0.0;   // sum ||f(s_i) - f(t_i)||^2
  double reg = 0.0;    // sum ||f(s_j) - f0(s_j)||^2 over the batch's source words
  double total = 0.0;
  EncoderWeightsT<T> grads;
};

// Eq-style adjustment loss over a batch of aligned occurrence pairs.
// Gradients flow through the live model only; both the source and target
// contexts of each pair are in the graph. anchor_cache, when supplied,
// must come from anchor_source_vectors with matching flags.
template <class T>
AlignLossResult<T> alignment_loss(const EncoderWeightsT<T>& model, const AnchorModelT<T>& anchor,
                                  const WordPairSet& pairs,
                                  const std::vector<size_t>& batch_items, Pooling pooling,
                                  int layer_flag,
                                  const std::vector<std::vector<T>>* anchor_cache = nullptr);

struct AdjustTraceRow {
  int step = 0;
  double pull = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

struct AdjustResult {
  EncoderWeights weights;
  std::vector<AdjustTraceRow> trace;
};

// Shuffled mini-batch Adam descent on the adjustment loss. The anchor is
// snapshotted once from the input model.
AdjustResult adjust(const EncoderWeights& model, const WordPairSet& pairs,
                    const AdjustConfig& config);

// CSV: step,pull_term,reg_term,total
void write_loss_trace(const std::vector<AdjustTraceRow>& trace, const std::string& path);

}  // namespace xladj
