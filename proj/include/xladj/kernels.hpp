#pragma once

#include <cstddef>

namespace xladj::kernels {

enum class Backend { Scalar, Avx2 };

const char* backend_name(Backend b);
bool backend_supported(Backend b);
Backend active_backend();
// Throws std::runtime_error if the backend is not supported on this CPU.
// The XLADJ_KERNELS env var ("scalar" / "avx2") overrides the startup choice.
void set_backend(Backend b);

// All matrices are dense row-major and contiguous. beta is 0 (overwrite)
// or 1 (accumulate into C).
template <class T>
struct Ops {
  // C(m x n) = A(m x k) * B(k x n) + beta * C
  void (*gemm_nn)(int m, int n, int k, const T* a, const T* b, T beta, T* c);
  // C(m x n) = A(m x k) * B(n x k)^T + beta * C
  void (*gemm_nt)(int m, int n, int k, const T* a, const T* b, T beta, T* c);
  // C(m x n) = A(k x m)^T * B(k x n) + beta * C
  void (*gemm_tn)(int m, int n, int k, const T* a, const T* b, T beta, T* c);
  T (*dot)(int n, const T* x, const T* y);
  void (*axpy)(int n, T alpha, const T* x, T* y);   // y += alpha * x
  void (*scale)(int n, T alpha, T* x);              // x *= alpha
  void (*vadd)(int n, const T* x, const T* y, T* z);  // z = x + y
  void (*vmul)(int n, const T* x, const T* y, T* z);  // z = x .* y
  T (*sumsq_diff)(int n, const T* x, const T* y);   // sum (x-y)^2
  T (*vsum)(int n, const T* x);
};

const Ops<float>& ops_f32();
const Ops<double>& ops_f64();

template <class T>
const Ops<T>& ops();

template <>
inline const Ops<float>& ops<float>() { return ops_f32(); }
template <>
inline const Ops<double>& ops<double>() { return ops_f64(); }

template <class T>
inline void gemm_nn(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  ops<T>().gemm_nn(m, n, k, a, b, beta, c);
}
template <class T>
inline void gemm_nt(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  ops<T>().gemm_nt(m, n, k, a, b, beta, c);
}
template <class T>
inline void gemm_tn(int m, int n, int k, const T* a, const T* b, T beta, T* c) {
  ops<T>().gemm_tn(m, n, k, a, b, beta, c);
}
template <class T>
inline T dot(int n, const T* x, const T* y) { return ops<T>().dot(n, x, y); }
template <class T>
inline void axpy(int n, T alpha, const T* x, T* y) { ops<T>().axpy(n, alpha, x, y); }
template <class T>
inline void scale(int n, T alpha, T* x) { ops<T>().scale(n, alpha, x); }
template <class T>
inline void vadd(int n, const T* x, const T* y, T* z) { ops<T>().vadd(n, x, y, z); }
template <class T>
inline void vmul(int n, const T* x, const T* y, T* z) { ops<T>().vmul(n, x, y, z); }
template <class T>
inline T sumsq_diff(int n, const T* x, const T* y) { return ops<T>().sumsq_diff(n, x, y); }
template <class T>
inline T vsum(int n, const T* x) { return ops<T>().vsum(n, x); }

}  // namespace xladj::kernels
