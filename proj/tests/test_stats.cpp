#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "xladj/rng.hpp"
#include "xladj/stats.hpp"

using namespace xladj;

TEST_CASE("metric helpers") {
  CHECK(accuracy_metric({1, 0, 1, 1}, {1, 0, 0, 1}) == doctest::Approx(0.75));

  // TP=2, FP=1, FN=1 -> P = R = 2/3, F1 = 2/3
  std::vector<std::vector<int>> pred = {{1, 1, 2, 0, 0}};
  std::vector<std::vector<int>> gold = {{1, 1, 0, 2, 0}};
  CHECK(micro_f1_metric(pred, gold) == doctest::Approx(2.0 / 3.0));

  CHECK(micro_f1_metric({{0, 0}}, {{1, 0}}) == doctest::Approx(0.0));
}

TEST_CASE("incomplete beta sanity") {
  for (double x : {0.1, 0.25, 0.5, 0.75, 0.9}) {
    CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));
    CHECK(incomplete_beta(2.0, 3.0, x) ==
          doctest::Approx(1.0 - incomplete_beta(3.0, 2.0, 1.0 - x)).epsilon(1e-12));
  }
  CHECK(incomplete_beta(0.5, 0.5, 0.0) == 0.0);
  CHECK(incomplete_beta(0.5, 0.5, 1.0) == 1.0);
}

TEST_CASE("paired t-test oracles") {
  auto eq = paired_t_test({1, 2, 3}, {1, 2, 3});
  CHECK(eq.t == doctest::Approx(0.0));
  CHECK(eq.p == doctest::Approx(1.0));

  auto r = paired_t_test({1, 2, 3}, {1, 2, 4});
  CHECK(r.t == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.p == doctest::Approx(0.4226).epsilon(1e-3 / 0.4226));

  auto swapped = paired_t_test({1, 2, 4}, {1, 2, 3});
  CHECK(swapped.t == doctest::Approx(-r.t).epsilon(1e-12));
  CHECK(swapped.p == doctest::Approx(r.p).epsilon(1e-12));

  // location invariance
  auto shifted = paired_t_test({11, 12, 13}, {11, 12, 14});
  CHECK(shifted.t == doctest::Approx(r.t).epsilon(1e-12));
  CHECK(shifted.p == doctest::Approx(r.p).epsilon(1e-12));

  auto degen = paired_t_test({1, 1, 1}, {2, 2, 2});
  CHECK(degen.p == 0.0);
  CHECK(degen.degenerate);

  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), std::runtime_error);
  CHECK_THROWS_AS(paired_t_test({1, 2}, {1, 2, 3}), std::runtime_error);
}

TEST_CASE("permutation test oracles") {
  std::vector<int> gold(100), perfect(100), wrong(100);
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    gold[size_t(i)] = int(rng.uniform_int(2));
    perfect[size_t(i)] = gold[size_t(i)];
    wrong[size_t(i)] = 1 - gold[size_t(i)];
  }

  CHECK(permutation_test(perfect, perfect, gold, PermMetric::Accuracy, 1000, 1) ==
        doctest::Approx(1.0));

  const double p = permutation_test(perfect, wrong, gold, PermMetric::Accuracy, 1000, 2);
  CHECK(p <= 0.01);
  CHECK(p >= 1.0 / 1001.0);

  CHECK_THROWS_AS(
      permutation_test(perfect, std::vector<int>(99, 0), gold, PermMetric::Accuracy, 100, 3),
      std::runtime_error);
}

TEST_CASE("permutation p-values are in range and class-relabel invariant") {
  Rng rng(12);
  std::vector<int> gold(60), a(60), b(60);
  for (int i = 0; i < 60; ++i) {
    gold[size_t(i)] = int(rng.uniform_int(3));
    a[size_t(i)] = int(rng.uniform_int(3));
    b[size_t(i)] = int(rng.uniform_int(3));
  }
  const double p = permutation_test(a, b, gold, PermMetric::Accuracy, 500, 7);
  CHECK(p >= 1.0 / 501.0);
  CHECK(p <= 1.0);

  // relabel classes consistently: 0->2, 1->0, 2->1
  auto relabel = [](std::vector<int> v) {
    for (auto& x : v) x = (x + 2) % 3;
    return v;
  };
  const double p2 =
      permutation_test(relabel(a), relabel(b), relabel(gold), PermMetric::Accuracy, 500, 7);
  CHECK(p2 == doctest::Approx(p).epsilon(1e-12));
}

TEST_CASE("permutation test is calibrated under the null") {
  // Two prediction sets from the same noisy process; p-values should be
  // close to uniform over repetitions.
  Rng rng(13);
  const int reps = 200, n = 400;
  std::vector<double> pvals;
  for (int r = 0; r < reps; ++r) {
    std::vector<int> gold(n), a(n), b(n);
    for (int i = 0; i < n; ++i) {
      gold[size_t(i)] = int(rng.uniform_int(2));
      a[size_t(i)] = rng.uniform() < 0.4 ? 1 - gold[size_t(i)] : gold[size_t(i)];
      b[size_t(i)] = rng.uniform() < 0.4 ? 1 - gold[size_t(i)] : gold[size_t(i)];
    }
    pvals.push_back(
        permutation_test(a, b, gold, PermMetric::Accuracy, 1000, derive_seed(13, "null") + r));
  }
  std::sort(pvals.begin(), pvals.end());
  double ks = 0.0;
  for (size_t i = 0; i < pvals.size(); ++i) {
    const double ecdf_hi = double(i + 1) / reps;
    const double ecdf_lo = double(i) / reps;
    ks = std::max({ks, std::fabs(ecdf_hi - pvals[i]), std::fabs(pvals[i] - ecdf_lo)});
  }
  MESSAGE("null-calibration KS distance ", ks);
  CHECK(ks <= 0.15);
}

TEST_CASE("micro-f1 permutation flavor swaps whole sentences") {
  std::vector<std::vector<int>> gold = {{0, 1, 0}, {2, 0, 0}, {0, 0, 1}};
  auto a = gold;                                    // perfect
  std::vector<std::vector<int>> b = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};  // all outside
  // exactly 2 of the 8 swap patterns reproduce the |F1 gap| of 1
  const double p = permutation_test(a, b, gold, PermMetric::MicroF1, 400, 21);
  CHECK(p == doctest::Approx(0.25).epsilon(0.35));
  CHECK(p >= 1.0 / 401.0);
}

TEST_CASE("seed matrix averages per example") {
  SeedMatrix m;
  m.examples = 2;
  m.seeds = 3;
  m.values = {1, 0, 1, 0, 0, 1};
  auto means = m.per_example_means();
  CHECK(means[0] == doctest::Approx(2.0 / 3.0));
  CHECK(means[1] == doctest::Approx(1.0 / 3.0));
}
