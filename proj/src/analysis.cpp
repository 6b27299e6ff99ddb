#include "xladj/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "xladj/kernels.hpp"
#include "xladj/rng.hpp"

namespace xladj {

const char* const kScenarioNames[5] = {"original", "adjusted", "original_finetuned",
                                       "adjusted_finetuned", "adjusted_continual"};

DistancePairSample sample_distance_pairs(const ParallelCorpus& corpus, const SubwordVocab& vocab,
                                         const AlignmentLinkSet& links, int n_related,
                                         int n_unrelated, uint64_t seed) {
  if (n_related < 1 || n_unrelated < 1) {
    throw std::runtime_error("sample_distance_pairs: counts must be >= 1");
  }
  if (links.size() != corpus.size()) {
    throw std::runtime_error("sample_distance_pairs: alignment/corpus size mismatch");
  }

  struct Occ {
    int sent, src_word, tgt_word;
  };
  std::vector<Occ> occs;
  std::set<int> sentences_with_links;
  for (size_t s = 0; s < links.size(); ++s) {
    for (const auto& [i, j] : links[s]) {
      occs.push_back({int(s), i, j});
      sentences_with_links.insert(int(s));
    }
  }
  if (occs.empty()) throw std::runtime_error("sample_distance_pairs: no alignment links");
  if (sentences_with_links.size() < 2) {
    throw std::runtime_error(
        "sample_distance_pairs: unrelated pairs need links in at least 2 sentence pairs");
  }

  if (size_t(n_related) > occs.size()) {
    std::ostringstream os;
    os << "sample_distance_pairs: n_related " << n_related << " exceeds link count "
       << occs.size();
    throw std::runtime_error(os.str());
  }

  Rng rng(seed);
  DistancePairSample out;
  out.sentences = tokenize_corpus(corpus, vocab);
  out.items.reserve(size_t(n_related + n_unrelated));
  // related: without replacement, so n_related == |links| yields the full set
  for (size_t k : rng.sample_without_replacement(occs.size(), size_t(n_related))) {
    const Occ& o = occs[k];
    out.items.push_back({o.sent, o.src_word, o.sent, o.tgt_word, true});
  }
  for (int k = 0; k < n_unrelated; ++k) {
    const Occ& a = occs[size_t(rng.uniform_int(occs.size()))];
    Occ b{};
    do {
      b = occs[size_t(rng.uniform_int(occs.size()))];
    } while (b.sent == a.sent);
    out.items.push_back({a.sent, a.src_word, b.sent, b.tgt_word, false});
  }
  return out;
}

double l2_distance(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw std::runtime_error("l2_distance: dimension mismatch");
  return std::sqrt(double(kernels::sumsq_diff(int(a.size()), a.data(), b.data())));
}

std::vector<DistanceSample> compute_distances(const EncoderWeights& model,
                                              const DistancePairSample& sample, int layer_flag,
                                              Pooling pooling) {
  if (!sample.sentences) throw std::runtime_error("compute_distances: no sentence contexts");
  const EncoderConfig& c = model.config;
  const int layer = resolve_layer(layer_flag, c.layers);

  // Word vectors needed, keyed by (sentence, side, word).
  std::map<std::tuple<int, int, int>, std::vector<float>> vecs;
  for (const auto& it : sample.items) {
    vecs[{it.src_sent, 0, it.src_word}] = {};
    vecs[{it.tgt_sent, 1, it.tgt_word}] = {};
  }

  // Group requests per (sentence, side) and process in chunks.
  std::map<std::pair<int, int>, std::vector<int>> words_of;
  for (const auto& [key, v] : vecs) {
    (void)v;
    words_of[{std::get<0>(key), std::get<1>(key)}].push_back(std::get<2>(key));
  }
  std::vector<std::pair<int, int>> seq_keys;
  seq_keys.reserve(words_of.size());
  for (const auto& [key, words] : words_of) {
    (void)words;
    seq_keys.push_back(key);
  }

  constexpr int kChunk = 64;
  for (size_t begin = 0; begin < seq_keys.size(); begin += kChunk) {
    const size_t end = std::min(seq_keys.size(), begin + kChunk);
    std::vector<std::vector<int>> seqs;
    for (size_t s = begin; s < end; ++s) {
      const auto& tp = (*sample.sentences)[size_t(seq_keys[s].first)];
      const auto& tok = seq_keys[s].second == 0 ? tp.src : tp.tgt;
      seqs.push_back(frame_sentence(tok.ids, c.max_positions));
    }
    Batch batch = make_batch(seqs);
    auto fwd = encoder_forward(model, batch);
    const Mat<float>& states = fwd.states[size_t(layer)];
    for (size_t s = begin; s < end; ++s) {
      const auto [sent, side] = seq_keys[s];
      const auto& tp = (*sample.sentences)[size_t(sent)];
      const auto& tok = side == 0 ? tp.src : tp.tgt;
      const int offset = int(s - begin) * batch.seq + 1;
      for (int word : words_of[{sent, side}]) {
        vecs[{sent, side, word}] =
            pool_word_vector(states, offset, tok.word_spans[size_t(word)], pooling);
      }
    }
  }

  std::vector<DistanceSample> out;
  out.reserve(sample.items.size());
  for (const auto& it : sample.items) {
    const auto& a = vecs[{it.src_sent, 0, it.src_word}];
    const auto& b = vecs[{it.tgt_sent, 1, it.tgt_word}];
    out.push_back({it.related, l2_distance(a, b)});
  }
  return out;
}

namespace {

std::vector<double> shared_edges(double max_dist, int bins) {
  if (max_dist <= 0.0) max_dist = 1.0;
  std::vector<double> edges(size_t(bins) + 1);
  for (int i = 0; i <= bins; ++i) edges[size_t(i)] = max_dist * double(i) / double(bins);
  return edges;
}

}  // namespace

HistogramReport histogram_report_with_edges(const std::vector<DistanceSample>& samples,
                                            const std::vector<double>& edges) {
  if (edges.size() < 3) throw std::runtime_error("histogram_report: need at least 2 bins");
  const int bins = int(edges.size()) - 1;
  HistogramReport rep;
  rep.edges = edges;
  rep.related_counts.assign(size_t(bins), 0);
  rep.unrelated_counts.assign(size_t(bins), 0);

  int64_t n_rel = 0, n_unrel = 0;
  double s_rel = 0, s2_rel = 0, s_unrel = 0, s2_unrel = 0;
  const double lo = edges.front();
  const double width = (edges.back() - edges.front()) / double(bins);
  for (const auto& s : samples) {
    int bin = width > 0.0 ? int((s.distance - lo) / width) : 0;
    bin = std::clamp(bin, 0, bins - 1);
    if (s.related) {
      ++rep.related_counts[size_t(bin)];
      ++n_rel;
      s_rel += s.distance;
      s2_rel += s.distance * s.distance;
    } else {
      ++rep.unrelated_counts[size_t(bin)];
      ++n_unrel;
      s_unrel += s.distance;
      s2_unrel += s.distance * s.distance;
    }
  }
  if (n_rel == 0 || n_unrel == 0) {
    throw std::runtime_error("histogram_report: need at least one sample of each label");
  }
  rep.related_mean = s_rel / double(n_rel);
  rep.related_std = std::sqrt(std::max(0.0, s2_rel / double(n_rel) - rep.related_mean * rep.related_mean));
  rep.unrelated_mean = s_unrel / double(n_unrel);
  rep.unrelated_std =
      std::sqrt(std::max(0.0, s2_unrel / double(n_unrel) - rep.unrelated_mean * rep.unrelated_mean));
  for (int i = 0; i < bins; ++i) {
    rep.overlap += std::min(double(rep.related_counts[size_t(i)]) / double(n_rel),
                            double(rep.unrelated_counts[size_t(i)]) / double(n_unrel));
  }
  return rep;
}

HistogramReport histogram_report(const std::vector<DistanceSample>& samples, int bins) {
  if (bins < 2) throw std::runtime_error("histogram_report: need at least 2 bins");
  double max_dist = 0.0;
  for (const auto& s : samples) max_dist = std::max(max_dist, s.distance);
  return histogram_report_with_edges(samples, shared_edges(max_dist, bins));
}

namespace {

void write_histograms_csv(const std::map<std::string, HistogramReport>& reports,
                          const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "scenario,label,bin_left,bin_right,count\n";
  for (const auto& [name, rep] : reports) {
    const int bins = int(rep.edges.size()) - 1;
    for (int i = 0; i < bins; ++i) {
      f << name << ",related," << rep.edges[size_t(i)] << "," << rep.edges[size_t(i) + 1] << ","
        << rep.related_counts[size_t(i)] << "\n";
    }
    for (int i = 0; i < bins; ++i) {
      f << name << ",unrelated," << rep.edges[size_t(i)] << "," << rep.edges[size_t(i) + 1] << ","
        << rep.unrelated_counts[size_t(i)] << "\n";
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Small-multiples SVG: one panel per scenario, two overlaid bar series.
void write_histograms_svg(const std::vector<std::pair<std::string, const HistogramReport*>>& panels,
                          const std::string& path) {
  const int pw = 220, ph = 170, margin = 30, gap = 14;
  const int width = margin * 2 + int(panels.size()) * pw + (int(panels.size()) - 1) * gap;
  const int height = ph + 2 * margin + 20;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (size_t p = 0; p < panels.size(); ++p) {
    const auto& [name, rep] = panels[p];
    const int x0 = margin + int(p) * (pw + gap);
    const int y0 = margin;
    const int bins = int(rep->edges.size()) - 1;
    int64_t n_rel = 0, n_unrel = 0;
    for (auto c : rep->related_counts) n_rel += c;
    for (auto c : rep->unrelated_counts) n_unrel += c;
    double peak = 1e-12;
    for (int i = 0; i < bins; ++i) {
      peak = std::max(peak, double(rep->related_counts[size_t(i)]) / double(n_rel));
      peak = std::max(peak, double(rep->unrelated_counts[size_t(i)]) / double(n_unrel));
    }
    const double bw = double(pw) / double(bins);
    auto bars = [&](const std::vector<int64_t>& counts, int64_t n, const char* color) {
      for (int i = 0; i < bins; ++i) {
        const double frac = double(counts[size_t(i)]) / double(n);
        const double h = frac / peak * ph;
        svg << "<rect x=\"" << x0 + bw * i << "\" y=\"" << y0 + ph - h << "\" width=\"" << bw
            << "\" height=\"" << h << "\" fill=\"" << color << "\" fill-opacity=\"0.55\"/>\n";
      }
    };
    bars(rep->related_counts, n_rel, "#3465a4");
    bars(rep->unrelated_counts, n_unrel, "#e07b39");
    svg << "<line x1=\"" << x0 << "\" y1=\"" << y0 + ph << "\" x2=\"" << x0 + pw << "\" y2=\""
        << y0 + ph << "\" stroke=\"black\"/>\n";
    std::ostringstream title;
    title.precision(3);
    title << name << " (overlap " << rep->overlap << ")";
    svg << "<text x=\"" << x0 << "\" y=\"" << y0 - 8 << "\" font-size=\"11\" font-family=\"sans-serif\">"
        << title.str() << "</text>\n";
  }
  svg << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << svg.str();
  if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace

std::map<std::string, HistogramReport> scenario_suite(
    const std::map<std::string, const EncoderWeights*>& scenarios,
    const DistancePairSample& sample, int bins, int layer_flag, Pooling pooling,
    const std::string& out_dir) {
  std::string missing;
  for (const char* name : kScenarioNames) {
    if (!scenarios.count(name)) missing += std::string(missing.empty() ? "" : ", ") + name;
  }
  if (!missing.empty()) {
    throw std::runtime_error("scenario_suite: missing scenarios: " + missing);
  }

  // Two passes: distances first so all reports share one bin range.
  std::map<std::string, std::vector<DistanceSample>> distances;
  double max_dist = 0.0;
  for (const auto& [name, model] : scenarios) {
    auto d = compute_distances(*model, sample, layer_flag, pooling);
    for (const auto& s : d) max_dist = std::max(max_dist, s.distance);
    distances.emplace(name, std::move(d));
  }
  const auto edges = shared_edges(max_dist, bins);

  std::map<std::string, HistogramReport> reports;
  for (const auto& [name, d] : distances) {
    reports.emplace(name, histogram_report_with_edges(d, edges));
  }

  if (!out_dir.empty()) {
    write_histograms_csv(reports, out_dir + "/histograms.csv");
    std::vector<std::pair<std::string, const HistogramReport*>> panels;
    for (const char* name : kScenarioNames) panels.emplace_back(name, &reports.at(name));
    write_histograms_svg(panels, out_dir + "/histograms.svg");

    nlohmann::json summary;
    for (const auto& [name, rep] : reports) {
      summary[name] = {{"overlap", rep.overlap},
                       {"related_mean", rep.related_mean},
                       {"related_std", rep.related_std},
                       {"unrelated_mean", rep.unrelated_mean},
                       {"unrelated_std", rep.unrelated_std}};
    }
    std::ofstream f(out_dir + "/histogram_summary.json", std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + out_dir);
    f << summary.dump(2) << "\n";
  }
  return reports;
}

}  // namespace xladj
