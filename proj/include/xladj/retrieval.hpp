#pragma once

#include <string>
#include <utility>
#include <vector>

#include "xladj/encoder.hpp"

namespace xladj {

// Mean of non-special, non-padding token vectors at the given layer.
std::vector<float> sentence_embedding(const EncoderWeights& model,
                                      const TokenizedSentence& sentence, int layer_flag);

std::vector<std::vector<float>> sentence_embeddings(const EncoderWeights& model,
                                                    const std::vector<TokenizedSentence>& sents,
                                                    int layer_flag);

struct RetrievalResult {
  std::vector<int> ranks;  // 1-based rank of the gold translation per query
  double mrr = 0.0;
  int layer = 0;
};

// Cosine similarity ranking; ties break toward the lower corpus index.
// Near-zero embeddings rank last (similarity forced to -1).
RetrievalResult xsr_rank_from_embeddings(const std::vector<std::vector<float>>& queries,
                                         const std::vector<std::vector<float>>& corpus,
                                         const std::vector<int>& gold);

RetrievalResult xsr_rank(const EncoderWeights& model, const std::vector<TokenizedSentence>& queries,
                         const std::vector<TokenizedSentence>& corpus,
                         const std::vector<int>& gold, int layer_flag);

struct BestLayerResult {
  int layer = 0;
  RetrievalResult result;
  std::vector<double> per_layer_mrr;  // indexed by layer, embedding layer included
};

// Evaluates every layer and returns the argmax-MRR layer (ties toward the
// lowest index). Layer selection runs on the evaluation set itself.
BestLayerResult best_layer(const EncoderWeights& model,
                           const std::vector<TokenizedSentence>& queries,
                           const std::vector<TokenizedSentence>& corpus,
                           const std::vector<int>& gold);

}  // namespace xladj
