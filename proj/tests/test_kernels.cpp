#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "xladj/kernels.hpp"
#include "xladj/rng.hpp"

using namespace xladj;
namespace k = xladj::kernels;

namespace {

template <class T>
std::vector<T> random_vec(size_t n, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(-2.0, 2.0));
  return v;
}

// Plain triple loop, independent of the kernel implementations.
template <class T>
std::vector<T> naive_gemm(int m, int n, int kk, const std::vector<T>& a, const std::vector<T>& b,
                          bool ta, bool tb) {
  std::vector<T> c(size_t(m) * n, T(0));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int x = 0; x < kk; ++x) {
        const T av = ta ? a[size_t(x) * m + i] : a[size_t(i) * kk + x];
        const T bv = tb ? b[size_t(j) * kk + x] : b[size_t(x) * n + j];
        acc += av * bv;
      }
      c[size_t(i) * n + j] = acc;
    }
  }
  return c;
}

template <class T>
void check_close(const std::vector<T>& got, const std::vector<T>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (size_t i = 0; i < got.size(); ++i) {
    const double denom = std::max(1.0, std::fabs(double(want[i])));
    CHECK(std::fabs(double(got[i]) - double(want[i])) / denom <= tol);
  }
}

template <class T>
void exercise_backend(double tol) {
  Rng rng(42);
  // Sizes straddle the SIMD widths so tails get exercised.
  const int dims[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 9, 17}, {32, 24, 40}};
  for (const auto& d : dims) {
    const int m = d[0], n = d[1], kk = d[2];
    auto a = random_vec<T>(size_t(m) * kk, rng);
    auto b_nn = random_vec<T>(size_t(kk) * n, rng);
    auto b_nt = random_vec<T>(size_t(n) * kk, rng);
    auto a_tn = random_vec<T>(size_t(kk) * m, rng);

    std::vector<T> c(size_t(m) * n);
    k::gemm_nn<T>(m, n, kk, a.data(), b_nn.data(), T(0), c.data());
    check_close(c, naive_gemm(m, n, kk, a, b_nn, false, false), tol);

    k::gemm_nt<T>(m, n, kk, a.data(), b_nt.data(), T(0), c.data());
    check_close(c, naive_gemm(m, n, kk, a, b_nt, false, true), tol);

    k::gemm_tn<T>(m, n, kk, a_tn.data(), b_nn.data(), T(0), c.data());
    check_close(c, naive_gemm(m, n, kk, a_tn, b_nn, true, false), tol);

    // beta = 1 accumulates
    auto base = random_vec<T>(size_t(m) * n, rng);
    auto expect = naive_gemm(m, n, kk, a, b_nn, false, false);
    for (size_t i = 0; i < expect.size(); ++i) expect[i] += base[i];
    c = base;
    k::gemm_nn<T>(m, n, kk, a.data(), b_nn.data(), T(1), c.data());
    check_close(c, expect, tol);
  }

  for (int n : {1, 7, 8, 9, 31, 64, 100}) {
    auto x = random_vec<T>(size_t(n), rng);
    auto y = random_vec<T>(size_t(n), rng);

    T want_dot = 0, want_sum = 0, want_ssd = 0;
    for (int i = 0; i < n; ++i) {
      want_dot += x[size_t(i)] * y[size_t(i)];
      want_sum += x[size_t(i)];
      const T dd = x[size_t(i)] - y[size_t(i)];
      want_ssd += dd * dd;
    }
    CHECK(std::fabs(double(k::dot(n, x.data(), y.data())) - double(want_dot)) <=
          tol * std::max(1.0, std::fabs(double(want_dot))));
    CHECK(std::fabs(double(k::vsum(n, x.data())) - double(want_sum)) <=
          tol * std::max(1.0, std::fabs(double(want_sum))));
    CHECK(std::fabs(double(k::sumsq_diff(n, x.data(), y.data())) - double(want_ssd)) <=
          tol * std::max(1.0, std::fabs(double(want_ssd))));

    auto y2 = y;
    k::axpy(n, T(1.5), x.data(), y2.data());
    for (int i = 0; i < n; ++i) {
      CHECK(double(y2[size_t(i)]) ==
            doctest::Approx(double(y[size_t(i)]) + 1.5 * double(x[size_t(i)])).epsilon(tol));
    }

    auto x2 = x;
    k::scale(n, T(0.25), x2.data());
    for (int i = 0; i < n; ++i) {
      CHECK(double(x2[size_t(i)]) == doctest::Approx(0.25 * double(x[size_t(i)])).epsilon(tol));
    }

    std::vector<T> z(size_t(n), T(0));
    k::vadd(n, x.data(), y.data(), z.data());
    for (int i = 0; i < n; ++i) {
      const T want = x[size_t(i)] + y[size_t(i)];
      CHECK(z[size_t(i)] == want);
    }
    k::vmul(n, x.data(), y.data(), z.data());
    for (int i = 0; i < n; ++i) {
      CHECK(double(z[size_t(i)]) ==
            doctest::Approx(double(x[size_t(i)]) * double(y[size_t(i)])).epsilon(tol));
    }
  }
}

}  // namespace

TEST_CASE("scalar kernels match a naive reference") {
  k::set_backend(k::Backend::Scalar);
  exercise_backend<float>(1e-5);
  exercise_backend<double>(1e-12);
}

TEST_CASE("avx2 kernels are equivalent to scalar") {
  if (!k::backend_supported(k::Backend::Avx2)) {
    MESSAGE("avx2 not supported on this host; skipping");
    return;
  }
  k::set_backend(k::Backend::Avx2);
  exercise_backend<float>(2e-5);
  exercise_backend<double>(1e-12);

  // Direct cross-backend comparison on one awkward shape.
  Rng rng(7);
  const int m = 11, n = 13, kk = 19;
  std::vector<float> a(size_t(m) * kk), b(size_t(kk) * n);
  for (auto& x : a) x = float(rng.uniform(-1, 1));
  for (auto& x : b) x = float(rng.uniform(-1, 1));
  std::vector<float> c_scalar(size_t(m) * n), c_avx2(size_t(m) * n);
  k::set_backend(k::Backend::Scalar);
  k::gemm_nn(m, n, kk, a.data(), b.data(), 0.0f, c_scalar.data());
  k::set_backend(k::Backend::Avx2);
  k::gemm_nn(m, n, kk, a.data(), b.data(), 0.0f, c_avx2.data());
  k::set_backend(k::Backend::Scalar);
  for (size_t i = 0; i < c_scalar.size(); ++i) {
    CHECK(std::fabs(c_scalar[i] - c_avx2[i]) <= 1e-4f * std::max(1.0f, std::fabs(c_scalar[i])));
  }
}

TEST_CASE("backend selection reports and enforces support") {
  CHECK(k::backend_supported(k::Backend::Scalar));
  k::set_backend(k::Backend::Scalar);
  CHECK(k::active_backend() == k::Backend::Scalar);
  CHECK(std::string(k::backend_name(k::Backend::Avx2)) == "avx2");
  if (k::backend_supported(k::Backend::Avx2)) {
    k::set_backend(k::Backend::Avx2);
    CHECK(k::active_backend() == k::Backend::Avx2);
    k::set_backend(k::Backend::Scalar);
  }
}
