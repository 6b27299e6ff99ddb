#include "xladj/stats.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "xladj/rng.hpp"

namespace xladj {

double accuracy_metric(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.size() != gold.size()) throw std::runtime_error("accuracy: length mismatch");
  if (pred.empty()) return 0.0;
  size_t hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i];
  return double(hit) / double(pred.size());
}

double micro_f1_metric(const std::vector<std::vector<int>>& pred,
                       const std::vector<std::vector<int>>& gold, int outside_tag) {
  if (pred.size() != gold.size()) throw std::runtime_error("micro_f1: sentence count mismatch");
  int64_t correct = 0, pred_n = 0, gold_n = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != gold[s].size()) {
      throw std::runtime_error("micro_f1: token count mismatch");
    }
    for (size_t i = 0; i < pred[s].size(); ++i) {
      const bool p_ent = pred[s][i] != outside_tag;
      const bool g_ent = gold[s][i] != outside_tag;
      pred_n += p_ent;
      gold_n += g_ent;
      correct += p_ent && g_ent && pred[s][i] == gold[s][i];
    }
  }
  if (pred_n == 0 || gold_n == 0) return 0.0;
  const double precision = double(correct) / double(pred_n);
  const double recall = double(correct) / double(gold_n);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

// Lentz continued fraction for the incomplete beta function.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;  // lnfront symmetric in swap with x -> 1-x
}

double student_t_two_sided_p(double t, double df) {
  if (!std::isfinite(t)) return 0.0;
  const double x = df / (df + t * t);
  return incomplete_beta(df / 2.0, 0.5, x);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::runtime_error("paired_t_test: length mismatch");
  const size_t n = a.size();
  if (n < 2) throw std::runtime_error("paired_t_test: need at least 2 observations");

  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += b[i] - a[i];
  mean /= double(n);
  double ss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = (b[i] - a[i]) - mean;
    ss += d * d;
  }
  const double var = ss / double(n - 1);

  TTestResult r;
  if (var == 0.0) {
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / double(n));
  r.p = student_t_two_sided_p(r.t, double(n - 1));
  return r;
}

namespace {

struct ExampleStats {
  int64_t correct = 0, total = 0;          // accuracy
  int64_t tp = 0, pred_n = 0, gold_n = 0;  // micro F1
};

ExampleStats example_stats(const std::vector<int>& pred, const std::vector<int>& gold,
                           int outside_tag) {
  ExampleStats s;
  s.total = int64_t(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    s.correct += pred[i] == gold[i];
    const bool p_ent = pred[i] != outside_tag;
    const bool g_ent = gold[i] != outside_tag;
    s.pred_n += p_ent;
    s.gold_n += g_ent;
    s.tp += p_ent && g_ent && pred[i] == gold[i];
  }
  return s;
}

double metric_from_totals(const ExampleStats& t, PermMetric metric) {
  if (metric == PermMetric::Accuracy) {
    return t.total == 0 ? 0.0 : double(t.correct) / double(t.total);
  }
  if (t.pred_n == 0 || t.gold_n == 0) return 0.0;
  const double precision = double(t.tp) / double(t.pred_n);
  const double recall = double(t.tp) / double(t.gold_n);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

void add_to(ExampleStats& acc, const ExampleStats& s) {
  acc.correct += s.correct;
  acc.total += s.total;
  acc.tp += s.tp;
  acc.pred_n += s.pred_n;
  acc.gold_n += s.gold_n;
}

}  // namespace

double permutation_test(const std::vector<std::vector<int>>& preds_a,
                        const std::vector<std::vector<int>>& preds_b,
                        const std::vector<std::vector<int>>& gold, PermMetric metric,
                        int iterations, uint64_t seed, int outside_tag) {
  if (preds_a.size() != preds_b.size() || preds_a.size() != gold.size()) {
    throw std::runtime_error("permutation_test: example count mismatch");
  }
  if (iterations < 1) throw std::runtime_error("permutation_test: iterations must be >= 1");
  const size_t n = preds_a.size();
  std::vector<ExampleStats> stats_a(n), stats_b(n);
  for (size_t e = 0; e < n; ++e) {
    if (preds_a[e].size() != gold[e].size() || preds_b[e].size() != gold[e].size()) {
      std::ostringstream os;
      os << "permutation_test: prediction length mismatch at example " << e;
      throw std::runtime_error(os.str());
    }
    stats_a[e] = example_stats(preds_a[e], gold[e], outside_tag);
    stats_b[e] = example_stats(preds_b[e], gold[e], outside_tag);
  }

  auto statistic = [&](const std::vector<bool>& swap) {
    ExampleStats ta, tb;
    for (size_t e = 0; e < n; ++e) {
      add_to(ta, swap[e] ? stats_b[e] : stats_a[e]);
      add_to(tb, swap[e] ? stats_a[e] : stats_b[e]);
    }
    return std::fabs(metric_from_totals(ta, metric) - metric_from_totals(tb, metric));
  };

  std::vector<bool> no_swap(n, false);
  const double observed = statistic(no_swap);

  Rng rng(seed);
  int at_least = 0;
  std::vector<bool> swap(n);
  for (int it = 0; it < iterations; ++it) {
    for (size_t e = 0; e < n; ++e) swap[e] = rng.coin();
    if (statistic(swap) >= observed - 1e-12) ++at_least;
  }
  return double(at_least + 1) / double(iterations + 1);
}

double permutation_test(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                        const std::vector<int>& gold, PermMetric metric, int iterations,
                        uint64_t seed) {
  auto wrap = [](const std::vector<int>& v) {
    std::vector<std::vector<int>> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = {v[i]};
    return out;
  };
  return permutation_test(wrap(preds_a), wrap(preds_b), wrap(gold), metric, iterations, seed);
}

std::vector<double> SeedMatrix::per_example_means() const {
  std::vector<double> out(size_t(examples), 0.0);
  for (int e = 0; e < examples; ++e) {
    double s = 0.0;
    for (int k = 0; k < seeds; ++k) s += at(e, k);
    out[size_t(e)] = s / double(seeds);
  }
  return out;
}

}  // namespace xladj
