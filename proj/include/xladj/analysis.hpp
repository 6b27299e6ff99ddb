#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xladj/aligner.hpp"
#include "xladj/encoder.hpp"

namespace xladj {

struct DistanceSample {
  bool related = false;
  double distance = 0.0;
};

// Frozen sample of related (aligned) and unrelated (cross-sentence)
// word-occurrence pairs.
struct DistancePairItem {
  int src_sent = 0;
  int src_word = 0;
  int tgt_sent = 0;  // == src_sent for related items
  int tgt_word = 0;
  bool related = false;
};

struct DistancePairSample {
  std::shared_ptr<const std::vector<TokenizedPair>> sentences;
  std::vector<DistancePairItem> items;
};

// Related pairs drawn uniformly from alignment links; unrelated pairs take
// the source word of one linked occurrence and the target word of another
// from a different sentence pair.
DistancePairSample sample_distance_pairs(const ParallelCorpus& corpus, const SubwordVocab& vocab,
                                         const AlignmentLinkSet& links, int n_related,
                                         int n_unrelated, uint64_t seed);

double l2_distance(const std::vector<float>& a, const std::vector<float>& b);

std::vector<DistanceSample> compute_distances(const EncoderWeights& model,
                                              const DistancePairSample& sample, int layer_flag,
                                              Pooling pooling);

struct HistogramReport {
  std::vector<double> edges;  // bins + 1, shared across both labels
  std::vector<int64_t> related_counts;
  std::vector<int64_t> unrelated_counts;
  double related_mean = 0.0, related_std = 0.0;
  double unrelated_mean = 0.0, unrelated_std = 0.0;
  double overlap = 0.0;  // sum over bins of min of normalized masses
};

HistogramReport histogram_report(const std::vector<DistanceSample>& samples, int bins);

// Same report, but with bin edges fixed by the caller (shared binning
// across scenarios).
HistogramReport histogram_report_with_edges(const std::vector<DistanceSample>& samples,
                                            const std::vector<double>& edges);

// Canonical scenario names, in presentation order.
extern const char* const kScenarioNames[5];

// One report per scenario over the same frozen sample and shared bins;
// writes histograms.csv, histograms.svg and summary JSON into out_dir
// (skipped when out_dir is empty).
std::map<std::string, HistogramReport> scenario_suite(
    const std::map<std::string, const EncoderWeights*>& scenarios,
    const DistancePairSample& sample, int bins, int layer_flag, Pooling pooling,
    const std::string& out_dir);

}  // namespace xladj
