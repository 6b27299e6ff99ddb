#pragma once

#include <cstdint>
#include <vector>

namespace xladj {

double accuracy_metric(const std::vector<int>& pred, const std::vector<int>& gold);

// Token-level micro-averaged F1 over non-outside tags.
double micro_f1_metric(const std::vector<std::vector<int>>& pred,
                       const std::vector<std::vector<int>>& gold, int outside_tag = 0);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero-variance differences with nonzero mean
};

// Two-sided paired t-test on (b - a); p from the Student-t distribution
// via the regularized incomplete beta function.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// Student-t two-sided p-value for statistic t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

enum class PermMetric { Accuracy, MicroF1 };

// Per-example swap permutation test on |metric(A) - metric(B)| with
// add-one smoothing: p = (#{permuted >= observed} + 1) / (iterations + 1).
// Examples are prediction sequences (singletons for accuracy-style data).
double permutation_test(const std::vector<std::vector<int>>& preds_a,
                        const std::vector<std::vector<int>>& preds_b,
                        const std::vector<std::vector<int>>& gold, PermMetric metric,
                        int iterations, uint64_t seed, int outside_tag = 0);

// Flat convenience overload: each prediction is its own example.
double permutation_test(const std::vector<int>& preds_a, const std::vector<int>& preds_b,
                        const std::vector<int>& gold, PermMetric metric, int iterations,
                        uint64_t seed);

// Per-example metric values averaged over seeds; rows = examples,
// cols = seeds. No missing cells.
struct SeedMatrix {
  int examples = 0;
  int seeds = 0;
  std::vector<double> values;  // examples x seeds, row-major

  double& at(int example, int seed) { return values[size_t(example) * seeds + seed]; }
  double at(int example, int seed) const { return values[size_t(example) * seeds + seed]; }
  std::vector<double> per_example_means() const;
};

}  // namespace xladj
