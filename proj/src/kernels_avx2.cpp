#include <immintrin.h>

#include "kernels_impl.hpp"

// AVX2/FMA variants of the scalar reference kernels. Tail elements fall
// back to scalar loops. Lane-wise accumulation changes the rounding order
// relative to the reference; equivalence tests compare with tolerances.
namespace xladj::kernels::avx2 {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// ---- float32 ----

void gemm_nn_f32(int m, int n, int k, const float* a, const float* b, float beta, float* c) {
  for (int i = 0; i < m; ++i) {
    float* ci = c + size_t(i) * n;
    if (beta == 0.f) {
      int j = 0;
      const __m256 z = _mm256_setzero_ps();
      for (; j + 8 <= n; j += 8) _mm256_storeu_ps(ci + j, z);
      for (; j < n; ++j) ci[j] = 0.f;
    }
    const float* ai = a + size_t(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const float av = ai[kk];
      if (av == 0.f) continue;
      const float* bk = b + size_t(kk) * n;
      const __m256 avv = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 cv = _mm256_loadu_ps(ci + j);
        cv = _mm256_fmadd_ps(avv, _mm256_loadu_ps(bk + j), cv);
        _mm256_storeu_ps(ci + j, cv);
      }
      for (; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void gemm_nt_f32(int m, int n, int k, const float* a, const float* b, float beta, float* c) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + size_t(i) * k;
    float* ci = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + size_t(j) * k;
      __m256 acc = _mm256_setzero_ps();
      int kk = 0;
      for (; kk + 8 <= k; kk += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(ai + kk), _mm256_loadu_ps(bj + kk), acc);
      }
      float s = hsum(acc);
      for (; kk < k; ++kk) s += ai[kk] * bj[kk];
      ci[j] = beta == 0.f ? s : ci[j] + s;
    }
  }
}

void gemm_tn_f32(int m, int n, int k, const float* a, const float* b, float beta, float* c) {
  if (beta == 0.f) {
    size_t total = size_t(m) * n;
    size_t i = 0;
    const __m256 z = _mm256_setzero_ps();
    for (; i + 8 <= total; i += 8) _mm256_storeu_ps(c + i, z);
    for (; i < total; ++i) c[i] = 0.f;
  }
  for (int kk = 0; kk < k; ++kk) {
    const float* ak = a + size_t(kk) * m;
    const float* bk = b + size_t(kk) * n;
    for (int i = 0; i < m; ++i) {
      const float av = ak[i];
      if (av == 0.f) continue;
      float* ci = c + size_t(i) * n;
      const __m256 avv = _mm256_set1_ps(av);
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 cv = _mm256_loadu_ps(ci + j);
        cv = _mm256_fmadd_ps(avv, _mm256_loadu_ps(bk + j), cv);
        _mm256_storeu_ps(ci + j, cv);
      }
      for (; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

float dot_f32(int n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  }
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f32(int n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 yv = _mm256_loadu_ps(y + i);
    yv = _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv);
    _mm256_storeu_ps(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(int n, float alpha, float* x) {
  const __m256 av = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void vadd_f32(int n, const float* x, const float* y, float* z) {
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(z + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void vmul_f32(int n, const float* x, const float* y, float* z) {
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(z + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

float sumsq_diff_f32(int n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i));
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  float s = hsum(acc);
  for (; i < n; ++i) {
    const float d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

float vsum_f32(int n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

// ---- float64 ----

void gemm_nn_f64(int m, int n, int k, const double* a, const double* b, double beta, double* c) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + size_t(i) * n;
    if (beta == 0.0) {
      int j = 0;
      const __m256d z = _mm256_setzero_pd();
      for (; j + 4 <= n; j += 4) _mm256_storeu_pd(ci + j, z);
      for (; j < n; ++j) ci[j] = 0.0;
    }
    const double* ai = a + size_t(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = ai[kk];
      if (av == 0.0) continue;
      const double* bk = b + size_t(kk) * n;
      const __m256d avv = _mm256_set1_pd(av);
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d cv = _mm256_loadu_pd(ci + j);
        cv = _mm256_fmadd_pd(avv, _mm256_loadu_pd(bk + j), cv);
        _mm256_storeu_pd(ci + j, cv);
      }
      for (; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

void gemm_nt_f64(int m, int n, int k, const double* a, const double* b, double beta, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + size_t(i) * k;
    double* ci = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + size_t(j) * k;
      __m256d acc = _mm256_setzero_pd();
      int kk = 0;
      for (; kk + 4 <= k; kk += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(ai + kk), _mm256_loadu_pd(bj + kk), acc);
      }
      double s = hsum(acc);
      for (; kk < k; ++kk) s += ai[kk] * bj[kk];
      ci[j] = beta == 0.0 ? s : ci[j] + s;
    }
  }
}

void gemm_tn_f64(int m, int n, int k, const double* a, const double* b, double beta, double* c) {
  if (beta == 0.0) {
    size_t total = size_t(m) * n;
    size_t i = 0;
    const __m256d z = _mm256_setzero_pd();
    for (; i + 4 <= total; i += 4) _mm256_storeu_pd(c + i, z);
    for (; i < total; ++i) c[i] = 0.0;
  }
  for (int kk = 0; kk < k; ++kk) {
    const double* ak = a + size_t(kk) * m;
    const double* bk = b + size_t(kk) * n;
    for (int i = 0; i < m; ++i) {
      const double av = ak[i];
      if (av == 0.0) continue;
      double* ci = c + size_t(i) * n;
      const __m256d avv = _mm256_set1_pd(av);
      int j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d cv = _mm256_loadu_pd(ci + j);
        cv = _mm256_fmadd_pd(avv, _mm256_loadu_pd(bk + j), cv);
        _mm256_storeu_pd(ci + j, cv);
      }
      for (; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

double dot_f64(int n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_f64(int n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d yv = _mm256_loadu_pd(y + i);
    yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
    _mm256_storeu_pd(y + i, yv);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f64(int n, double alpha, double* x) {
  const __m256d av = _mm256_set1_pd(alpha);
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= alpha;
}

void vadd_f64(int n, const double* x, const double* y, double* z) {
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] + y[i];
}

void vmul_f64(int n, const double* x, const double* y, double* z) {
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(z + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) z[i] = x[i] * y[i];
}

double sumsq_diff_f64(int n, const double* x, const double* y) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

double vsum_f64(int n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  int i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

Ops<float> make_ops_f32() {
  Ops<float> o;
  o.gemm_nn = &gemm_nn_f32;
  o.gemm_nt = &gemm_nt_f32;
  o.gemm_tn = &gemm_tn_f32;
  o.dot = &dot_f32;
  o.axpy = &axpy_f32;
  o.scale = &scale_f32;
  o.vadd = &vadd_f32;
  o.vmul = &vmul_f32;
  o.sumsq_diff = &sumsq_diff_f32;
  o.vsum = &vsum_f32;
  return o;
}

Ops<double> make_ops_f64() {
  Ops<double> o;
  o.gemm_nn = &gemm_nn_f64;
  o.gemm_nt = &gemm_nt_f64;
  o.gemm_tn = &gemm_tn_f64;
  o.dot = &dot_f64;
  o.axpy = &axpy_f64;
  o.scale = &scale_f64;
  o.vadd = &vadd_f64;
  o.vmul = &vmul_f64;
  o.sumsq_diff = &sumsq_diff_f64;
  o.vsum = &vsum_f64;
  return o;
}

}  // namespace xladj::kernels::avx2
