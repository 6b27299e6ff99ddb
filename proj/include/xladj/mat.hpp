#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace xladj {

// Dense row-major matrix. Rows are contiguous; no strides.
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(size_t(r) * size_t(c), T(0)) {}

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  size_t size() const { return v.size(); }

  T& operator()(int i, int j) { return v[size_t(i) * cols + j]; }
  const T& operator()(int i, int j) const { return v[size_t(i) * cols + j]; }

  T* row(int i) { return v.data() + size_t(i) * cols; }
  const T* row(int i) const { return v.data() + size_t(i) * cols; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  template <class U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

}  // namespace xladj
