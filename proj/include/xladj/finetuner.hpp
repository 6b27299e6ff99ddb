#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xladj/adjuster.hpp"
#include "xladj/corpus.hpp"
#include "xladj/encoder.hpp"

namespace xladj {

enum class TaskKind { PairClassification, TokenTagging };

// Linear head over encoder states: CLS vector for pair classification,
// first-subword last-layer vectors for tagging.
struct TaskHead {
  TaskKind kind = TaskKind::PairClassification;
  Mat<float> w;  // dim x labels
  Mat<float> b;  // 1 x labels
  int labels() const { return w.cols; }
};

TaskHead init_task_head(TaskKind kind, int model_dim, int labels, uint64_t seed);

struct FinetuneConfig {
  float lr = 5e-5f;
  int epochs = 1;
  int main_batch = 32;
  int replay_batch = 16;
  float alpha = 0.01f;
  uint64_t seed = 0;
  Pooling replay_pooling = Pooling::Average;
  int replay_layer = -1;

  void validate() const;
};

struct FinetuneResult {
  std::vector<double> target_trace;
  std::vector<double> align_trace;     // 0 for plain runs
  std::vector<double> combined_trace;  // target + alpha * align
  std::vector<std::vector<size_t>> batch_examples;  // main-task example order
  std::vector<std::vector<size_t>> replay_items;    // sampled replay pairs per step
};

// [CLS] premise [SEP] hypothesis [SEP]; no segment embeddings.
std::vector<int> encode_pair_example(const SubwordVocab& vocab, const PairExample& ex,
                                     int max_positions);

template <class T>
struct TaskLossResult {
  double loss = 0.0;
  EncoderWeightsT<T> grads;
  Mat<T> head_w_grad, head_b_grad;
};

// Mean cross-entropy of linear-head predictions at the given positions of
// each framed sequence; the shared core of both fine-tuning task kinds.
template <class T>
TaskLossResult<T> head_loss(const EncoderWeightsT<T>& model, const Mat<T>& head_w,
                            const Mat<T>& head_b, const std::vector<std::vector<int>>& seqs,
                            const std::vector<std::vector<int>>& label_pos,
                            const std::vector<std::vector<int>>& labels, uint64_t dropout_seed);

FinetuneResult finetune(EncoderWeights& model, TaskHead& head,
                        const std::vector<PairExample>& data, const SubwordVocab& vocab,
                        const FinetuneConfig& config);

// Per main batch: L_target, then a replayed adjustment batch, one update on
// L_target + alpha * L_align. Replay sampling uses a dedicated stream so
// the main-task batch order matches the plain run for the same seed.
FinetuneResult finetune_continual(EncoderWeights& model, TaskHead& head,
                                  const std::vector<PairExample>& data, const SubwordVocab& vocab,
                                  const WordPairSet& pairs, const AnchorModel& anchor,
                                  const FinetuneConfig& config);

FinetuneResult finetune_tagging(EncoderWeights& model, TaskHead& head,
                                const std::vector<TaggedSentence>& data,
                                const SubwordVocab& vocab, const FinetuneConfig& config);

FinetuneResult finetune_tagging_continual(EncoderWeights& model, TaskHead& head,
                                          const std::vector<TaggedSentence>& data,
                                          const SubwordVocab& vocab, const WordPairSet& pairs,
                                          const AnchorModel& anchor,
                                          const FinetuneConfig& config);

struct EvalClassification {
  double accuracy = 0.0;
  std::vector<uint8_t> correct;  // per example
  std::vector<int> predictions;
};

// Argmax labels; equal logits break toward the lowest label id.
EvalClassification evaluate_classification(const EncoderWeights& model, const TaskHead& head,
                                           const std::vector<PairExample>& data,
                                           const SubwordVocab& vocab);

struct EvalTagging {
  double micro_f1 = 0.0;
  std::vector<std::vector<int>> predictions;  // per sentence
};

EvalTagging evaluate_tagging(const EncoderWeights& model, const TaskHead& head,
                             const std::vector<TaggedSentence>& data, const SubwordVocab& vocab,
                             int outside_tag = 0);

// Binary head checkpoint (magic "XLHD", kind, shape, little-endian floats).
void save_task_head(const TaskHead& head, const std::string& path);
TaskHead load_task_head(const std::string& path);

// CSV dumps consumed by the stats stage; both carry a run-seed column.
void write_classification_dump(const std::string& path, uint64_t seed,
                               const EvalClassification& eval);
void write_tagging_dump(const std::string& path, uint64_t seed,
                        const std::vector<TaggedSentence>& gold, const EvalTagging& eval);

}  // namespace xladj
