#include "xladj/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "xladj/kernels.hpp"

namespace xladj {

namespace {

constexpr double kZeroNormGuard = 1e-12;

// Mean over real, non-special positions of one framed batch slot.
std::vector<float> pool_sentence(const Mat<float>& states, const Batch& batch, int slot) {
  const int dim = states.cols;
  std::vector<float> out(size_t(dim), 0.0f);
  int count = 0;
  for (int s = 0; s < batch.seq; ++s) {
    const size_t r = batch.row(slot, s);
    if (!batch.mask[r]) continue;
    const int id = batch.ids[r];
    if (id < SubwordVocab::kNumSpecials) continue;
    kernels::axpy(dim, 1.0f, states.row(int(r)), out.data());
    ++count;
  }
  if (count == 0) throw std::runtime_error("sentence_embedding: sentence has no content tokens");
  kernels::scale(dim, 1.0f / float(count), out.data());
  return out;
}

// All layers at once; outer index = layer.
std::vector<std::vector<std::vector<float>>> embeddings_all_layers(
    const EncoderWeights& model, const std::vector<TokenizedSentence>& sents) {
  const EncoderConfig& c = model.config;
  std::vector<std::vector<std::vector<float>>> out(size_t(c.layers) + 1);
  for (auto& per_layer : out) per_layer.resize(sents.size());

  constexpr size_t kChunk = 64;
  for (size_t begin = 0; begin < sents.size(); begin += kChunk) {
    const size_t end = std::min(sents.size(), begin + kChunk);
    std::vector<std::vector<int>> seqs;
    for (size_t i = begin; i < end; ++i) {
      if (sents[i].ids.empty()) {
        std::ostringstream os;
        os << "sentence_embedding: empty sentence at index " << i;
        throw std::runtime_error(os.str());
      }
      seqs.push_back(frame_sentence(sents[i].ids, c.max_positions));
    }
    Batch batch = make_batch(seqs);
    auto fwd = encoder_forward(model, batch);
    for (int layer = 0; layer <= c.layers; ++layer) {
      const Mat<float>& states = fwd.states[size_t(layer)];
      for (size_t i = begin; i < end; ++i) {
        out[size_t(layer)][i] = pool_sentence(states, batch, int(i - begin));
      }
    }
  }
  return out;
}

}  // namespace

std::vector<float> sentence_embedding(const EncoderWeights& model,
                                      const TokenizedSentence& sentence, int layer_flag) {
  return sentence_embeddings(model, {sentence}, layer_flag)[0];
}

std::vector<std::vector<float>> sentence_embeddings(const EncoderWeights& model,
                                                    const std::vector<TokenizedSentence>& sents,
                                                    int layer_flag) {
  const int layer = resolve_layer(layer_flag, model.config.layers);
  auto all = embeddings_all_layers(model, sents);
  return std::move(all[size_t(layer)]);
}

RetrievalResult xsr_rank_from_embeddings(const std::vector<std::vector<float>>& queries,
                                         const std::vector<std::vector<float>>& corpus,
                                         const std::vector<int>& gold) {
  if (corpus.empty()) throw std::runtime_error("xsr_rank: empty corpus");
  if (gold.size() != queries.size()) {
    throw std::runtime_error("xsr_rank: gold map must cover every query");
  }
  for (int g : gold) {
    if (g < 0 || size_t(g) >= corpus.size()) {
      std::ostringstream os;
      os << "xsr_rank: gold index " << g << " out of range for corpus of " << corpus.size();
      throw std::runtime_error(os.str());
    }
  }

  std::vector<double> corpus_norm(corpus.size());
  for (size_t j = 0; j < corpus.size(); ++j) {
    corpus_norm[j] = std::sqrt(
        double(kernels::dot(int(corpus[j].size()), corpus[j].data(), corpus[j].data())));
  }

  RetrievalResult res;
  res.ranks.resize(queries.size());
  double mrr_sum = 0.0;
  std::vector<double> sims(corpus.size());
  for (size_t q = 0; q < queries.size(); ++q) {
    const auto& qv = queries[q];
    const double qn =
        std::sqrt(double(kernels::dot(int(qv.size()), qv.data(), qv.data())));
    for (size_t j = 0; j < corpus.size(); ++j) {
      if (qv.size() != corpus[j].size()) {
        throw std::runtime_error("xsr_rank: embedding dimension mismatch");
      }
      if (qn < kZeroNormGuard || corpus_norm[j] < kZeroNormGuard) {
        sims[j] = -1.0;
      } else {
        sims[j] = double(kernels::dot(int(qv.size()), qv.data(), corpus[j].data())) /
                  (qn * corpus_norm[j]);
      }
    }
    const int g = gold[q];
    int rank = 1;
    for (size_t j = 0; j < corpus.size(); ++j) {
      if (int(j) == g) continue;
      if (sims[j] > sims[size_t(g)] || (sims[j] == sims[size_t(g)] && int(j) < g)) ++rank;
    }
    res.ranks[q] = rank;
    mrr_sum += 1.0 / double(rank);
  }
  res.mrr = queries.empty() ? 0.0 : mrr_sum / double(queries.size());
  return res;
}

RetrievalResult xsr_rank(const EncoderWeights& model,
                         const std::vector<TokenizedSentence>& queries,
                         const std::vector<TokenizedSentence>& corpus,
                         const std::vector<int>& gold, int layer_flag) {
  const int layer = resolve_layer(layer_flag, model.config.layers);
  auto res = xsr_rank_from_embeddings(sentence_embeddings(model, queries, layer),
                                      sentence_embeddings(model, corpus, layer), gold);
  res.layer = layer;
  return res;
}

BestLayerResult best_layer(const EncoderWeights& model,
                           const std::vector<TokenizedSentence>& queries,
                           const std::vector<TokenizedSentence>& corpus,
                           const std::vector<int>& gold) {
  const auto q_all = embeddings_all_layers(model, queries);
  const auto c_all = embeddings_all_layers(model, corpus);

  BestLayerResult best;
  best.layer = -1;
  for (int layer = 0; layer <= model.config.layers; ++layer) {
    auto res = xsr_rank_from_embeddings(q_all[size_t(layer)], c_all[size_t(layer)], gold);
    res.layer = layer;
    best.per_layer_mrr.push_back(res.mrr);
    if (best.layer < 0 || res.mrr > best.result.mrr) {
      best.layer = layer;
      best.result = std::move(res);
    }
  }
  return best;
}

}  // namespace xladj
