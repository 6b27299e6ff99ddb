#include "xladj/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xladj/rng.hpp"

namespace xladj {

namespace {

constexpr const char* kNullWord = "<NULL>";

struct IntSentence {
  std::vector<int> cond;  // conditioning side word ids
  std::vector<int> emit;
};

// |i/n - j/m| with 1-based positions.
inline double diag_distance(int i, int n, int j, int m) {
  return std::fabs(double(i) / double(n) - double(j) / double(m));
}

}  // namespace

double Model2Params::translation_prob(int cond_id, int emit_id) const {
  if (cond_id < 0 || emit_id < 0 || size_t(cond_id) >= ttable.size()) return kProbFloor;
  const auto& row = ttable[size_t(cond_id)];
  auto it = row.find(emit_id);
  return it == row.end() ? kProbFloor : std::max(it->second, kProbFloor);
}

Model2Params train_model2(const ParallelCorpus& corpus, int iterations, Direction direction,
                          uint64_t /*seed*/) {
  if (corpus.empty()) throw std::runtime_error("train_model2: empty corpus");
  if (iterations < 1) throw std::runtime_error("train_model2: iterations must be >= 1");

  Model2Params params;
  params.direction = direction;
  params.cond_dict.add(kNullWord);

  std::vector<IntSentence> data;
  data.reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    IntSentence s;
    const auto& cond_words = direction == Direction::SrcToTgt ? p.src : p.tgt;
    const auto& emit_words = direction == Direction::SrcToTgt ? p.tgt : p.src;
    for (const auto& w : cond_words) s.cond.push_back(params.cond_dict.add(w));
    for (const auto& w : emit_words) s.emit.push_back(params.emit_dict.add(w));
    data.push_back(std::move(s));
  }

  // Uniform init over co-occurring words; NULL co-occurs with everything.
  const size_t n_cond = params.cond_dict.size();
  std::vector<std::unordered_map<int, double>> counts(n_cond);
  params.ttable.assign(n_cond, {});
  for (const auto& s : data) {
    for (int e : s.emit) {
      params.ttable[0][e] = 1.0;
      for (int c : s.cond) params.ttable[size_t(c)][e] = 1.0;
    }
  }
  for (auto& row : params.ttable) {
    if (row.empty()) continue;
    const double u = 1.0 / double(row.size());
    for (auto& [e, p] : row) p = u;
  }

  for (int iter = 0; iter < iterations; ++iter) {
    for (auto& row : counts) row.clear();
    double loglik = 0.0;
    double lambda_grad = 0.0;
    double lambda_mass = 0.0;
    std::vector<double> post;
    std::vector<double> hdist;

    for (const auto& s : data) {
      const int n = int(s.cond.size());
      const int m = int(s.emit.size());
      for (int j = 0; j < m; ++j) {
        // Diagonal prior over conditioning positions.
        hdist.assign(size_t(n), 0.0);
        double z = 0.0;
        for (int i = 0; i < n; ++i) {
          hdist[size_t(i)] = diag_distance(i + 1, n, j + 1, m);
          z += std::exp(-params.lambda * hdist[size_t(i)]);
        }
        post.assign(size_t(n) + 1, 0.0);
        const int e = s.emit[size_t(j)];
        double total = params.p0 * params.translation_prob(0, e);
        post[0] = total;
        double expected_h = 0.0;
        for (int i = 0; i < n; ++i) {
          const double w = std::exp(-params.lambda * hdist[size_t(i)]) / z;
          expected_h += w * hdist[size_t(i)];
          const double mass =
              (1.0 - params.p0) * w * params.translation_prob(s.cond[size_t(i)], e);
          post[size_t(i) + 1] = mass;
          total += mass;
        }
        loglik += std::log(total);
        double aligned_mass = 0.0;
        for (int i = 0; i <= n; ++i) {
          const double g = post[size_t(i)] / total;
          const int c = i == 0 ? 0 : s.cond[size_t(i) - 1];
          counts[size_t(c)][e] += g;
          if (i > 0) {
            aligned_mass += g;
            lambda_grad += g * (expected_h - hdist[size_t(i) - 1]);
          }
        }
        lambda_mass += aligned_mass;
      }
    }

    params.nll_trace.push_back(-loglik);

    // M-step: renormalize translation rows.
    for (size_t c = 0; c < n_cond; ++c) {
      double total = 0.0;
      for (const auto& [e, v] : counts[c]) total += v;
      if (total <= 0.0) continue;
      auto& row = params.ttable[c];
      row.clear();
      for (const auto& [e, v] : counts[c]) row[e] = v / total;
    }

    // One projected gradient step on the diagonal tension. The gradient is
    // mean-normalized, which bounds the curvature and keeps the update an
    // ascent step on the EM minorizer.
    if (lambda_mass > 0.0) {
      params.lambda = std::max(0.0, params.lambda + lambda_grad / lambda_mass);
    }
  }
  return params;
}

LinkSet viterbi_align(const Model2Params& params, const SentencePair& pair) {
  const auto& cond_words = params.direction == Direction::SrcToTgt ? pair.src : pair.tgt;
  const auto& emit_words = params.direction == Direction::SrcToTgt ? pair.tgt : pair.src;
  const int n = int(cond_words.size());
  const int m = int(emit_words.size());

  std::vector<int> cond_ids(size_t(n), -1);
  for (int i = 0; i < n; ++i) cond_ids[size_t(i)] = params.cond_dict.id(cond_words[size_t(i)]);

  LinkSet links;
  for (int j = 0; j < m; ++j) {
    const int e = params.emit_dict.id(emit_words[size_t(j)]);
    double z = 0.0;
    for (int i = 0; i < n; ++i) {
      z += std::exp(-params.lambda * diag_distance(i + 1, n, j + 1, m));
    }
    double best = params.p0 * params.translation_prob(0, e);
    int best_i = -1;  // NULL
    for (int i = 0; i < n; ++i) {
      const double w = std::exp(-params.lambda * diag_distance(i + 1, n, j + 1, m)) / z;
      const double score =
          (1.0 - params.p0) * w * params.translation_prob(cond_ids[size_t(i)], e);
      if (score > best) {
        best = score;
        best_i = i;
      }
    }
    if (best_i >= 0) {
      if (params.direction == Direction::SrcToTgt) {
        links.insert({best_i, j});
      } else {
        links.insert({j, best_i});
      }
    }
  }
  return links;
}

AlignmentLinkSet viterbi_align_corpus(const Model2Params& params, const ParallelCorpus& corpus) {
  AlignmentLinkSet out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(viterbi_align(params, p));
  return out;
}

namespace {

bool adjacent_to(const LinkSet& links, int i, int j) {
  for (int di = -1; di <= 1; ++di) {
    for (int dj = -1; dj <= 1; ++dj) {
      if (di == 0 && dj == 0) continue;
      if (links.count({i + di, j + dj})) return true;
    }
  }
  return false;
}

}  // namespace

LinkSet symmetrize(const LinkSet& forward, const LinkSet& reverse, SymHeuristic heuristic) {
  LinkSet inter;
  for (const auto& l : forward) {
    if (reverse.count(l)) inter.insert(l);
  }
  if (heuristic == SymHeuristic::Intersection) return inter;

  LinkSet uni = forward;
  uni.insert(reverse.begin(), reverse.end());

  LinkSet result = inter;
  std::set<int> src_cov, tgt_cov;
  for (const auto& [i, j] : result) {
    src_cov.insert(i);
    tgt_cov.insert(j);
  }

  // grow-diag: repeatedly adopt union links neighboring the current set
  // while they extend coverage on at least one side.
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [i, j] : uni) {
      if (result.count({i, j})) continue;
      if (!adjacent_to(result, i, j)) continue;
      if (src_cov.count(i) && tgt_cov.count(j)) continue;
      result.insert({i, j});
      src_cov.insert(i);
      tgt_cov.insert(j);
      changed = true;
    }
  }

  // final-and: adopt remaining directional links only when both sides are
  // still uncovered; forward first, then reverse.
  for (const LinkSet* dir : {&forward, &reverse}) {
    for (const auto& [i, j] : *dir) {
      if (result.count({i, j})) continue;
      if (src_cov.count(i) || tgt_cov.count(j)) continue;
      result.insert({i, j});
      src_cov.insert(i);
      tgt_cov.insert(j);
    }
  }
  return result;
}

AlignmentLinkSet symmetrize_corpus(const AlignmentLinkSet& forward,
                                   const AlignmentLinkSet& reverse, SymHeuristic heuristic) {
  if (forward.size() != reverse.size()) {
    throw std::runtime_error("symmetrize: sentence count mismatch");
  }
  AlignmentLinkSet out;
  out.reserve(forward.size());
  for (size_t s = 0; s < forward.size(); ++s) {
    out.push_back(symmetrize(forward[s], reverse[s], heuristic));
  }
  return out;
}

double alignment_error_rate(const AlignmentLinkSet& predicted, const AlignmentLinkSet& gold) {
  if (predicted.size() != gold.size()) {
    throw std::runtime_error("alignment_error_rate: sentence count mismatch");
  }
  size_t n_pred = 0, n_gold = 0, n_hit = 0;
  for (size_t s = 0; s < predicted.size(); ++s) {
    n_pred += predicted[s].size();
    n_gold += gold[s].size();
    for (const auto& l : predicted[s]) {
      if (gold[s].count(l)) ++n_hit;
    }
  }
  if (n_pred + n_gold == 0) return 0.0;
  return 1.0 - 2.0 * double(n_hit) / double(n_pred + n_gold);
}

std::shared_ptr<std::vector<TokenizedPair>> tokenize_corpus(const ParallelCorpus& corpus,
                                                            const SubwordVocab& vocab) {
  auto out = std::make_shared<std::vector<TokenizedPair>>();
  out->reserve(corpus.size());
  for (const auto& p : corpus.pairs) {
    TokenizedPair tp;
    tp.src = tokenize_with_spans(vocab, p.src);
    tp.tgt = tokenize_with_spans(vocab, p.tgt);
    out->push_back(std::move(tp));
  }
  return out;
}

WordPairSet extract_word_pairs(const ParallelCorpus& corpus, const SubwordVocab& vocab,
                               const AlignmentLinkSet& links, size_t max_pairs, uint64_t seed) {
  if (links.size() != corpus.size()) {
    throw std::runtime_error("extract_word_pairs: alignment/corpus size mismatch");
  }
  WordPairSet out;
  out.sentences = tokenize_corpus(corpus, vocab);

  std::vector<WordPairItem> all;
  for (size_t s = 0; s < links.size(); ++s) {
    const auto& pair = corpus.pairs[s];
    const auto& tok = (*out.sentences)[s];
    for (const auto& [i, j] : links[s]) {
      if (i < 0 || j < 0 || size_t(i) >= pair.src.size() || size_t(j) >= pair.tgt.size()) {
        std::ostringstream os;
        os << "extract_word_pairs: link " << i << "-" << j << " out of bounds in sentence " << s;
        throw std::runtime_error(os.str());
      }
      WordPairItem item;
      item.sent_id = int(s);
      item.src_word = i;
      item.tgt_word = j;
      item.src_span = tok.src.word_spans[size_t(i)];
      item.tgt_span = tok.tgt.word_spans[size_t(j)];
      all.push_back(item);
    }
  }

  if (all.size() > max_pairs) {
    Rng rng(seed);
    auto keep = rng.sample_without_replacement(all.size(), max_pairs);
    std::sort(keep.begin(), keep.end());
    std::vector<WordPairItem> sampled;
    sampled.reserve(max_pairs);
    for (size_t k : keep) sampled.push_back(all[k]);
    all = std::move(sampled);
  }
  out.items = std::move(all);
  return out;
}

void save_model2(const Model2Params& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "lambda\t" << params.lambda << "\tp0\t" << params.p0 << "\n";
  for (size_t c = 0; c < params.ttable.size(); ++c) {
    // Sort emit ids for a stable dump.
    std::vector<std::pair<int, double>> row(params.ttable[c].begin(), params.ttable[c].end());
    std::sort(row.begin(), row.end());
    for (const auto& [e, p] : row) {
      f << params.cond_dict.words[c] << "\t" << params.emit_dict.words[size_t(e)] << "\t" << p
        << "\n";
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace xladj
