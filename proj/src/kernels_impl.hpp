#pragma once

#include "xladj/kernels.hpp"

// Scalar reference kernels. These are the semantic ground truth the SIMD
// variants are equivalence-tested against.
namespace xladj::kernels::scalar {

template <class T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + size_t(i) * n;
    if (beta == T(0)) {
      for (int j = 0; j < n; ++j) ci[j] = T(0);
    }
    const T* ai = a + size_t(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = ai[kk];
      if (av == T(0)) continue;
      const T* bk = b + size_t(kk) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

template <class T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + size_t(i) * k;
    T* ci = c + size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + size_t(j) * k;
      T acc = 0;
      for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
      ci[j] = beta == T(0) ? acc : ci[j] + acc;
    }
  }
}

template <class T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  if (beta == T(0)) {
    for (size_t i = 0; i < size_t(m) * n; ++i) c[i] = T(0);
  }
  for (int kk = 0; kk < k; ++kk) {
    const T* ak = a + size_t(kk) * m;
    const T* bk = b + size_t(kk) * n;
    for (int i = 0; i < m; ++i) {
      const T av = ak[i];
      if (av == T(0)) continue;
      T* ci = c + size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
    }
  }
}

template <class T>
T dot(int n, const T* x, const T* y) {
  T acc = 0;
  for (int i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale(int n, T alpha, T* x) {
  for (int i = 0; i < n; ++i) x[i] *= alpha;
}

template <class T>
void vadd(int n, const T* x, const T* y, T* z) {
  for (int i = 0; i < n; ++i) z[i] = x[i] + y[i];
}

template <class T>
void vmul(int n, const T* x, const T* y, T* z) {
  for (int i = 0; i < n; ++i) z[i] = x[i] * y[i];
}

template <class T>
T sumsq_diff(int n, const T* x, const T* y) {
  T acc = 0;
  for (int i = 0; i < n; ++i) {
    const T d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

template <class T>
T vsum(int n, const T* x) {
  T acc = 0;
  for (int i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
Ops<T> make_ops() {
  Ops<T> o;
  o.gemm_nn = &gemm_nn<T>;
  o.gemm_nt = &gemm_nt<T>;
  o.gemm_tn = &gemm_tn<T>;
  o.dot = &dot<T>;
  o.axpy = &axpy<T>;
  o.scale = &scale<T>;
  o.vadd = &vadd<T>;
  o.vmul = &vmul<T>;
  o.sumsq_diff = &sumsq_diff<T>;
  o.vsum = &vsum<T>;
  return o;
}

}  // namespace xladj::kernels::scalar

namespace xladj::kernels::avx2 {
// Defined in kernels_avx2.cpp (compiled with -mavx2 -mfma); only linked on x86.
Ops<float> make_ops_f32();
Ops<double> make_ops_f64();
}  // namespace xladj::kernels::avx2
