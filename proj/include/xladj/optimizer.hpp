#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "xladj/mat.hpp"

namespace xladj {

// Adam over a flat parameter list. State tensors are allocated on first
// step and must see the same shapes afterwards.
template <class T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Mat<T>*>& params, const std::vector<const Mat<T>*>& grads) {
    if (params.size() != grads.size()) throw std::runtime_error("adam: param/grad mismatch");
    if (m_.empty()) {
      m_.reserve(params.size());
      v_.reserve(params.size());
      for (const auto* p : params) {
        m_.emplace_back(p->rows, p->cols);
        v_.emplace_back(p->rows, p->cols);
      }
    }
    ++t_;
    const T bc1 = T(1) - std::pow(b1_, T(t_));
    const T bc2 = T(1) - std::pow(b2_, T(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Mat<T>& p = *params[i];
      const Mat<T>& g = *grads[i];
      if (!p.same_shape(g) || !p.same_shape(m_[i])) {
        throw std::runtime_error("adam: shape mismatch");
      }
      T* pv = p.data();
      const T* gv = g.data();
      T* mv = m_[i].data();
      T* vv = v_[i].data();
      const size_t n = p.size();
      for (size_t j = 0; j < n; ++j) {
        mv[j] = b1_ * mv[j] + (T(1) - b1_) * gv[j];
        vv[j] = b2_ * vv[j] + (T(1) - b2_) * gv[j] * gv[j];
        const T mhat = mv[j] / bc1;
        const T vhat = vv[j] / bc2;
        pv[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  int64_t steps() const { return t_; }

 private:
  T lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

}  // namespace xladj
