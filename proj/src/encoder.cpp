#include "xladj/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xladj/kernels.hpp"
#include "xladj/optimizer.hpp"
#include "xladj/rng.hpp"

namespace xladj {

namespace {

constexpr double kLnEps = 1e-6;
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

template <class T>
void xavier_init(Mat<T>& m, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / double(fan_in + fan_out));
  for (auto& x : m.v) x = T(rng.uniform(-a, a));
}

template <class T>
Mat<T> constant_mat(int rows, int cols, T value) {
  Mat<T> m(rows, cols);
  m.fill(value);
  return m;
}

template <class T>
EncoderWeightsT<T> make_weights(const EncoderConfig& c) {
  EncoderWeightsT<T> w;
  w.config = c;
  w.tok_emb = Mat<T>(c.vocab_size, c.model_dim);
  w.pos_emb = Mat<T>(c.max_positions, c.model_dim);
  w.layers.resize(size_t(c.layers));
  for (auto& l : w.layers) {
    l.wq = Mat<T>(c.model_dim, c.model_dim);
    l.bq = Mat<T>(1, c.model_dim);
    l.wk = Mat<T>(c.model_dim, c.model_dim);
    l.bk = Mat<T>(1, c.model_dim);
    l.wv = Mat<T>(c.model_dim, c.model_dim);
    l.bv = Mat<T>(1, c.model_dim);
    l.wo = Mat<T>(c.model_dim, c.model_dim);
    l.bo = Mat<T>(1, c.model_dim);
    l.ln1_g = Mat<T>(1, c.model_dim);
    l.ln1_b = Mat<T>(1, c.model_dim);
    l.ln2_g = Mat<T>(1, c.model_dim);
    l.ln2_b = Mat<T>(1, c.model_dim);
    l.w1 = Mat<T>(c.model_dim, c.ffn_dim);
    l.b1 = Mat<T>(1, c.ffn_dim);
    l.w2 = Mat<T>(c.ffn_dim, c.model_dim);
    l.b2 = Mat<T>(1, c.model_dim);
  }
  w.final_g = Mat<T>(1, c.model_dim);
  w.final_b = Mat<T>(1, c.model_dim);
  w.mlm_w = Mat<T>(c.model_dim, c.vocab_size);
  w.mlm_b = Mat<T>(1, c.vocab_size);
  return w;
}

// Y = X * W + b (bias broadcast over rows)
template <class T>
void linear_forward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b, Mat<T>& y) {
  kernels::gemm_nn(x.rows, w.cols, x.cols, x.data(), w.data(), T(0), y.data());
  for (int r = 0; r < y.rows; ++r) {
    kernels::axpy(y.cols, T(1), b.data(), y.row(r));
  }
}

// dX (+)= dY * W^T, dW += X^T * dY, db += colsum(dY)
template <class T>
void linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dx,
                     bool accumulate_dx, Mat<T>& dw, Mat<T>& db) {
  kernels::gemm_nt(dy.rows, w.rows, w.cols, dy.data(), w.data(), accumulate_dx ? T(1) : T(0),
                   dx.data());
  kernels::gemm_tn(x.cols, dy.cols, x.rows, x.data(), dy.data(), T(1), dw.data());
  for (int r = 0; r < dy.rows; ++r) {
    kernels::axpy(dy.cols, T(1), dy.row(r), db.data());
  }
}

template <class T>
void ln_forward(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& y,
                std::vector<T>& mean, std::vector<T>& rstd) {
  const int d = x.cols;
  mean.assign(size_t(x.rows), T(0));
  rstd.assign(size_t(x.rows), T(0));
  for (int r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    const T mu = kernels::vsum(d, xr) / T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = xr[j] - mu;
      var += c * c;
    }
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + T(kLnEps));
    mean[size_t(r)] = mu;
    rstd[size_t(r)] = rs;
    T* yr = y.row(r);
    for (int j = 0; j < d; ++j) {
      yr[j] = g.data()[j] * ((xr[j] - mu) * rs) + b.data()[j];
    }
  }
}

template <class T>
void ln_backward(const Mat<T>& dy, const Mat<T>& x, const Mat<T>& g, const std::vector<T>& mean,
                 const std::vector<T>& rstd, Mat<T>& dx, bool accumulate_dx, Mat<T>& dg,
                 Mat<T>& db) {
  const int d = x.cols;
  std::vector<T> xhat(size_t(d), T(0)), dxhat(size_t(d), T(0));
  for (int r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    const T* dyr = dy.row(r);
    const T mu = mean[size_t(r)];
    const T rs = rstd[size_t(r)];
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (int j = 0; j < d; ++j) {
      xhat[size_t(j)] = (xr[j] - mu) * rs;
      dxhat[size_t(j)] = dyr[j] * g.data()[j];
      sum_dxhat += dxhat[size_t(j)];
      sum_dxhat_xhat += dxhat[size_t(j)] * xhat[size_t(j)];
      dg.data()[j] += dyr[j] * xhat[size_t(j)];
      db.data()[j] += dyr[j];
    }
    const T inv_d = T(1) / T(d);
    T* dxr = dx.row(r);
    for (int j = 0; j < d; ++j) {
      const T v = rs * (dxhat[size_t(j)] - sum_dxhat * inv_d -
                        xhat[size_t(j)] * sum_dxhat_xhat * inv_d);
      if (accumulate_dx) {
        dxr[j] += v;
      } else {
        dxr[j] = v;
      }
    }
  }
}

template <class T>
inline T gelu(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad(T x) {
  const T u = T(kGeluC0) * (x + T(kGeluC1) * x * x * x);
  const T t = std::tanh(u);
  const T du = T(kGeluC0) * (T(1) + T(3) * T(kGeluC1) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
void apply_dropout(Mat<T>& x, Mat<T>& mask, float p, Rng& rng) {
  mask = Mat<T>(x.rows, x.cols);
  const T scale = T(1) / T(1.0f - p);
  for (size_t i = 0; i < x.v.size(); ++i) {
    const T m = rng.uniform() < double(p) ? T(0) : scale;
    mask.v[i] = m;
    x.v[i] *= m;
  }
}

// Extracts head slice (seq x head_dim) for batch item b from (bsz*seq x dim).
template <class T>
void gather_head(const Mat<T>& full, int b, int seq, int head, int head_dim, Mat<T>& out) {
  for (int s = 0; s < seq; ++s) {
    const T* src = full.row(b * seq + s) + head * head_dim;
    std::memcpy(out.row(s), src, sizeof(T) * size_t(head_dim));
  }
}

template <class T>
void scatter_head_add(const Mat<T>& part, int b, int seq, int head, int head_dim, Mat<T>& full) {
  for (int s = 0; s < seq; ++s) {
    T* dst = full.row(b * seq + s) + head * head_dim;
    const T* src = part.row(s);
    for (int j = 0; j < head_dim; ++j) dst[j] += src[j];
  }
}

template <class T>
void zero_padding_rows(Mat<T>& m, const Batch& batch) {
  for (int b = 0; b < batch.bsz; ++b) {
    for (int s = 0; s < batch.seq; ++s) {
      if (!batch.mask[batch.row(b, s)]) {
        std::memset(m.row(b * batch.seq + s), 0, sizeof(T) * size_t(m.cols));
      }
    }
  }
}

}  // namespace

void EncoderConfig::validate() const {
  std::ostringstream bad;
  if (layers < 1) bad << "layers must be >= 1";
  else if (model_dim < 1) bad << "model_dim must be >= 1";
  else if (heads < 1) bad << "heads must be >= 1";
  else if (model_dim % heads != 0) bad << "model_dim must be divisible by heads";
  else if (ffn_dim < 1) bad << "ffn_dim must be >= 1";
  else if (max_positions < 1) bad << "max_positions must be >= 1";
  else if (vocab_size < 1) bad << "vocab_size must be >= 1";
  else if (!(dropout >= 0.0f && dropout < 1.0f)) bad << "dropout must be in [0, 1)";
  const std::string msg = bad.str();
  if (!msg.empty()) throw std::runtime_error("invalid encoder config: " + msg);
}

template <class T>
EncoderWeightsT<T> init_encoder_t(const EncoderConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  EncoderWeightsT<T> w = make_weights<T>(config);
  xavier_init(w.tok_emb, config.vocab_size, config.model_dim, rng);
  xavier_init(w.pos_emb, config.max_positions, config.model_dim, rng);
  for (auto& l : w.layers) {
    xavier_init(l.wq, config.model_dim, config.model_dim, rng);
    xavier_init(l.wk, config.model_dim, config.model_dim, rng);
    xavier_init(l.wv, config.model_dim, config.model_dim, rng);
    xavier_init(l.wo, config.model_dim, config.model_dim, rng);
    l.ln1_g.fill(T(1));
    l.ln2_g.fill(T(1));
    xavier_init(l.w1, config.model_dim, config.ffn_dim, rng);
    xavier_init(l.w2, config.ffn_dim, config.model_dim, rng);
  }
  w.final_g.fill(T(1));
  xavier_init(w.mlm_w, config.model_dim, config.vocab_size, rng);
  return w;
}

EncoderWeights init_encoder(const EncoderConfig& config, uint64_t seed) {
  return init_encoder_t<float>(config, seed);
}

Batch make_batch(const std::vector<std::vector<int>>& seqs) {
  if (seqs.empty()) throw std::runtime_error("make_batch: empty batch");
  Batch b;
  b.bsz = int(seqs.size());
  size_t maxlen = 0;
  for (const auto& s : seqs) maxlen = std::max(maxlen, s.size());
  if (maxlen == 0) throw std::runtime_error("make_batch: empty sequence");
  b.seq = int(maxlen);
  b.ids.assign(size_t(b.bsz) * maxlen, SubwordVocab::kPad);
  b.mask.assign(size_t(b.bsz) * maxlen, 0);
  for (int i = 0; i < b.bsz; ++i) {
    for (size_t j = 0; j < seqs[size_t(i)].size(); ++j) {
      b.ids[b.row(i, int(j))] = seqs[size_t(i)][j];
      b.mask[b.row(i, int(j))] = 1;
    }
  }
  return b;
}

std::vector<int> frame_sentence(const std::vector<int>& subword_ids, int max_positions) {
  std::vector<int> out;
  out.reserve(subword_ids.size() + 2);
  out.push_back(SubwordVocab::kCls);
  const size_t limit = size_t(max_positions) - 1;  // room for [SEP]
  for (size_t i = 0; i < subword_ids.size() && out.size() < limit; ++i) {
    out.push_back(subword_ids[i]);
  }
  out.push_back(SubwordVocab::kSep);
  return out;
}

template <class T>
ForwardResult<T> encoder_forward(const EncoderWeightsT<T>& w, const Batch& batch, bool training,
                                 uint64_t dropout_seed) {
  const EncoderConfig& c = w.config;
  if (batch.bsz < 1 || batch.seq < 1) throw std::runtime_error("forward: empty batch");
  if (batch.seq > c.max_positions) {
    std::ostringstream os;
    os << "forward: sequence length " << batch.seq << " exceeds max_positions "
       << c.max_positions;
    throw std::runtime_error(os.str());
  }
  for (size_t i = 0; i < batch.ids.size(); ++i) {
    if (batch.ids[i] < 0 || batch.ids[i] >= c.vocab_size) {
      std::ostringstream os;
      os << "forward: token id " << batch.ids[i] << " outside vocab of size " << c.vocab_size;
      throw std::runtime_error(os.str());
    }
  }
  for (int b = 0; b < batch.bsz; ++b) {
    if (!batch.mask[batch.row(b, 0)]) {
      throw std::runtime_error("forward: batch item with no real tokens");
    }
  }

  const int rows = batch.bsz * batch.seq;
  const int dim = c.model_dim;
  const int hd = dim / c.heads;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
  const bool use_dropout = training && c.dropout > 0.0f;
  Rng drop_rng(dropout_seed);

  ForwardResult<T> out;
  out.states.reserve(size_t(c.layers) + 1);
  out.cache.layers.resize(size_t(c.layers));

  Mat<T> x(rows, dim);
  for (int b = 0; b < batch.bsz; ++b) {
    for (int s = 0; s < batch.seq; ++s) {
      const int r = b * batch.seq + s;
      const int id = batch.ids[size_t(r)];
      const T* te = w.tok_emb.row(id);
      const T* pe = w.pos_emb.row(s);
      kernels::vadd(dim, te, pe, x.row(r));
    }
  }
  if (use_dropout) apply_dropout(x, out.cache.emb_drop, c.dropout, drop_rng);
  out.states.push_back(x);

  for (int l = 0; l < c.layers; ++l) {
    const auto& lw = w.layers[size_t(l)];
    auto& lc = out.cache.layers[size_t(l)];
    const Mat<T>& xin = out.states.back();

    lc.ln1_out = Mat<T>(rows, dim);
    ln_forward(xin, lw.ln1_g, lw.ln1_b, lc.ln1_out, lc.ln1_mean, lc.ln1_rstd);

    lc.q = Mat<T>(rows, dim);
    lc.k = Mat<T>(rows, dim);
    lc.v = Mat<T>(rows, dim);
    linear_forward(lc.ln1_out, lw.wq, lw.bq, lc.q);
    linear_forward(lc.ln1_out, lw.wk, lw.bk, lc.k);
    linear_forward(lc.ln1_out, lw.wv, lw.bv, lc.v);

    lc.ctx = Mat<T>(rows, dim);
    lc.probs.assign(size_t(batch.bsz) * size_t(c.heads), Mat<T>());
    Mat<T> qh(batch.seq, hd), kh(batch.seq, hd), vh(batch.seq, hd);
    Mat<T> scores(batch.seq, batch.seq), ctxh(batch.seq, hd);
    for (int b = 0; b < batch.bsz; ++b) {
      for (int h = 0; h < c.heads; ++h) {
        gather_head(lc.q, b, batch.seq, h, hd, qh);
        gather_head(lc.k, b, batch.seq, h, hd, kh);
        gather_head(lc.v, b, batch.seq, h, hd, vh);
        kernels::gemm_nt(batch.seq, batch.seq, hd, qh.data(), kh.data(), T(0), scores.data());
        // masked row softmax; padding keys get zero probability
        Mat<T>& probs = lc.probs[size_t(b) * c.heads + size_t(h)];
        probs = Mat<T>(batch.seq, batch.seq);
        for (int qi = 0; qi < batch.seq; ++qi) {
          T* srow = scores.row(qi);
          T best = -std::numeric_limits<T>::infinity();
          for (int kj = 0; kj < batch.seq; ++kj) {
            if (!batch.mask[batch.row(b, kj)]) continue;
            srow[kj] *= inv_sqrt_hd;
            best = std::max(best, srow[kj]);
          }
          T z = T(0);
          T* prow = probs.row(qi);
          for (int kj = 0; kj < batch.seq; ++kj) {
            if (!batch.mask[batch.row(b, kj)]) {
              prow[kj] = T(0);
              continue;
            }
            prow[kj] = std::exp(srow[kj] - best);
            z += prow[kj];
          }
          const T inv_z = T(1) / z;
          for (int kj = 0; kj < batch.seq; ++kj) prow[kj] *= inv_z;
        }
        kernels::gemm_nn(batch.seq, hd, batch.seq, probs.data(), vh.data(), T(0), ctxh.data());
        for (int s = 0; s < batch.seq; ++s) {
          std::memcpy(lc.ctx.row(b * batch.seq + s) + h * hd, ctxh.row(s),
                      sizeof(T) * size_t(hd));
        }
      }
    }

    Mat<T> attn(rows, dim);
    linear_forward(lc.ctx, lw.wo, lw.bo, attn);
    if (use_dropout) apply_dropout(attn, lc.attn_drop, c.dropout, drop_rng);

    lc.resid1 = Mat<T>(rows, dim);
    for (size_t i = 0; i < lc.resid1.v.size(); ++i) lc.resid1.v[i] = xin.v[i] + attn.v[i];

    lc.ln2_out = Mat<T>(rows, dim);
    ln_forward(lc.resid1, lw.ln2_g, lw.ln2_b, lc.ln2_out, lc.ln2_mean, lc.ln2_rstd);

    lc.ffn_pre = Mat<T>(rows, c.ffn_dim);
    linear_forward(lc.ln2_out, lw.w1, lw.b1, lc.ffn_pre);
    lc.ffn_act = Mat<T>(rows, c.ffn_dim);
    for (size_t i = 0; i < lc.ffn_act.v.size(); ++i) lc.ffn_act.v[i] = gelu(lc.ffn_pre.v[i]);

    Mat<T> ffn(rows, dim);
    linear_forward(lc.ffn_act, lw.w2, lw.b2, ffn);
    if (use_dropout) apply_dropout(ffn, lc.ffn_drop, c.dropout, drop_rng);

    Mat<T> xout(rows, dim);
    for (size_t i = 0; i < xout.v.size(); ++i) xout.v[i] = lc.resid1.v[i] + ffn.v[i];

    if (l + 1 < c.layers) {
      out.states.push_back(std::move(xout));
    } else {
      out.cache.final_in = std::move(xout);
    }
  }

  Mat<T> final_out(rows, dim);
  ln_forward(out.cache.final_in, w.final_g, w.final_b, final_out, out.cache.final_mean,
             out.cache.final_rstd);
  out.states.push_back(std::move(final_out));
  return out;
}

template <class T>
void encoder_backward(const EncoderWeightsT<T>& w, const Batch& batch,
                      const ForwardResult<T>& fwd, const std::vector<Mat<T>>& state_grads,
                      EncoderWeightsT<T>& grads) {
  const EncoderConfig& c = w.config;
  if (int(state_grads.size()) != c.layers + 1) {
    throw std::runtime_error("backward: state_grads must have layers+1 entries");
  }
  const int rows = batch.bsz * batch.seq;
  const int dim = c.model_dim;
  const int hd = dim / c.heads;
  const T inv_sqrt_hd = T(1) / std::sqrt(T(hd));
  const bool use_dropout = c.dropout > 0.0f && fwd.cache.emb_drop.size() > 0;

  auto injected = [&](int idx) -> Mat<T> {
    Mat<T> g = state_grads[size_t(idx)];
    if (g.size() > 0) {
      if (g.rows != rows || g.cols != dim) {
        throw std::runtime_error("backward: state gradient shape mismatch");
      }
      zero_padding_rows(g, batch);
    }
    return g;
  };

  Mat<T> g(rows, dim);
  {
    Mat<T> top = injected(c.layers);
    if (top.size() > 0) {
      ln_backward(top, fwd.cache.final_in, w.final_g, fwd.cache.final_mean, fwd.cache.final_rstd,
                  g, false, grads.final_g, grads.final_b);
    }
  }

  Mat<T> dqh(batch.seq, hd), dkh(batch.seq, hd), dvh(batch.seq, hd);
  Mat<T> qh(batch.seq, hd), kh(batch.seq, hd), vh(batch.seq, hd);
  Mat<T> dscores(batch.seq, batch.seq), dctxh(batch.seq, hd);

  for (int l = c.layers - 1; l >= 0; --l) {
    const auto& lw = w.layers[size_t(l)];
    const auto& lc = fwd.cache.layers[size_t(l)];
    auto& lg = grads.layers[size_t(l)];
    const Mat<T>& xin = fwd.states[size_t(l)];

    if (l + 1 < c.layers) {
      Mat<T> inj = injected(l + 1);
      if (inj.size() > 0) {
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += inj.v[i];
      }
    }

    // out = resid1 + dropout(ffn)
    Mat<T> dffn = g;
    if (use_dropout) kernels::vmul(int(dffn.size()), dffn.data(), lc.ffn_drop.data(), dffn.data());
    Mat<T> dr1 = g;  // residual path

    Mat<T> dact(rows, c.ffn_dim);
    linear_backward(lc.ffn_act, lw.w2, dffn, dact, false, lg.w2, lg.b2);
    Mat<T> dpre(rows, c.ffn_dim);
    for (size_t i = 0; i < dpre.v.size(); ++i) {
      dpre.v[i] = dact.v[i] * gelu_grad(lc.ffn_pre.v[i]);
    }
    Mat<T> dln2(rows, dim);
    linear_backward(lc.ln2_out, lw.w1, dpre, dln2, false, lg.w1, lg.b1);
    ln_backward(dln2, lc.resid1, lw.ln2_g, lc.ln2_mean, lc.ln2_rstd, dr1, true, lg.ln2_g,
                lg.ln2_b);

    // resid1 = xin + dropout(attn)
    Mat<T> dattn = dr1;
    if (use_dropout) {
      kernels::vmul(int(dattn.size()), dattn.data(), lc.attn_drop.data(), dattn.data());
    }
    Mat<T> dx = dr1;  // residual path continues into the block input

    Mat<T> dctx(rows, dim);
    linear_backward(lc.ctx, lw.wo, dattn, dctx, false, lg.wo, lg.bo);

    Mat<T> dq(rows, dim), dk(rows, dim), dv(rows, dim);
    for (int b = 0; b < batch.bsz; ++b) {
      for (int h = 0; h < c.heads; ++h) {
        const Mat<T>& probs = lc.probs[size_t(b) * c.heads + size_t(h)];
        gather_head(lc.q, b, batch.seq, h, hd, qh);
        gather_head(lc.k, b, batch.seq, h, hd, kh);
        gather_head(lc.v, b, batch.seq, h, hd, vh);
        gather_head(dctx, b, batch.seq, h, hd, dctxh);

        // dprobs then masked softmax backward
        kernels::gemm_nt(batch.seq, batch.seq, hd, dctxh.data(), vh.data(), T(0), dscores.data());
        for (int qi = 0; qi < batch.seq; ++qi) {
          const T* prow = probs.row(qi);
          T* srow = dscores.row(qi);
          const T inner = kernels::dot(batch.seq, srow, prow);
          for (int kj = 0; kj < batch.seq; ++kj) {
            srow[kj] = prow[kj] * (srow[kj] - inner) * inv_sqrt_hd;
          }
        }
        kernels::gemm_tn(batch.seq, hd, batch.seq, probs.data(), dctxh.data(), T(0), dvh.data());
        kernels::gemm_nn(batch.seq, hd, batch.seq, dscores.data(), kh.data(), T(0), dqh.data());
        kernels::gemm_tn(batch.seq, hd, batch.seq, dscores.data(), qh.data(), T(0), dkh.data());

        scatter_head_add(dqh, b, batch.seq, h, hd, dq);
        scatter_head_add(dkh, b, batch.seq, h, hd, dk);
        scatter_head_add(dvh, b, batch.seq, h, hd, dv);
      }
    }

    Mat<T> dln1(rows, dim);
    linear_backward(lc.ln1_out, lw.wq, dq, dln1, false, lg.wq, lg.bq);
    linear_backward(lc.ln1_out, lw.wk, dk, dln1, true, lg.wk, lg.bk);
    linear_backward(lc.ln1_out, lw.wv, dv, dln1, true, lg.wv, lg.bv);
    ln_backward(dln1, xin, lw.ln1_g, lc.ln1_mean, lc.ln1_rstd, dx, true, lg.ln1_g, lg.ln1_b);

    g = std::move(dx);
  }

  {
    Mat<T> inj = injected(0);
    if (inj.size() > 0) {
      for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += inj.v[i];
    }
  }
  if (use_dropout) kernels::vmul(int(g.size()), g.data(), fwd.cache.emb_drop.data(), g.data());

  for (int b = 0; b < batch.bsz; ++b) {
    for (int s = 0; s < batch.seq; ++s) {
      const int r = b * batch.seq + s;
      kernels::axpy(dim, T(1), g.row(r), grads.tok_emb.row(batch.ids[size_t(r)]));
      kernels::axpy(dim, T(1), g.row(r), grads.pos_emb.row(s));
    }
  }
}

Pooling pooling_from_string(const std::string& s) {
  if (s == "average") return Pooling::Average;
  if (s == "first") return Pooling::First;
  if (s == "last") return Pooling::Last;
  throw std::runtime_error("unknown pooling mode: " + s);
}

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Average: return "average";
    case Pooling::First: return "first";
    case Pooling::Last: return "last";
  }
  return "?";
}

int resolve_layer(int layer_flag, int layers) {
  const int l = layer_flag < 0 ? layers : layer_flag;
  if (l < 0 || l > layers) {
    std::ostringstream os;
    os << "layer index " << layer_flag << " out of range for " << layers << "-layer encoder";
    throw std::runtime_error(os.str());
  }
  return l;
}

template <class T>
std::vector<T> pool_word_vector(const Mat<T>& layer_states, int row_offset,
                                std::pair<int, int> span, Pooling pooling) {
  const auto [begin, end] = span;
  if (begin >= end) throw std::runtime_error("pool_word_vector: empty span");
  const int dim = layer_states.cols;
  std::vector<T> out(size_t(dim), T(0));
  switch (pooling) {
    case Pooling::First: {
      const T* r = layer_states.row(row_offset + begin);
      out.assign(r, r + dim);
      break;
    }
    case Pooling::Last: {
      const T* r = layer_states.row(row_offset + end - 1);
      out.assign(r, r + dim);
      break;
    }
    case Pooling::Average: {
      for (int s = begin; s < end; ++s) {
        kernels::axpy(dim, T(1), layer_states.row(row_offset + s), out.data());
      }
      kernels::scale(dim, T(1) / T(end - begin), out.data());
      break;
    }
  }
  return out;
}

template <class T>
void pool_word_vector_backward(const std::vector<T>& grad, int row_offset,
                               std::pair<int, int> span, Pooling pooling, Mat<T>& state_grad) {
  const auto [begin, end] = span;
  if (begin >= end) throw std::runtime_error("pool_word_vector_backward: empty span");
  const int dim = state_grad.cols;
  switch (pooling) {
    case Pooling::First:
      kernels::axpy(dim, T(1), grad.data(), state_grad.row(row_offset + begin));
      break;
    case Pooling::Last:
      kernels::axpy(dim, T(1), grad.data(), state_grad.row(row_offset + end - 1));
      break;
    case Pooling::Average: {
      const T inv = T(1) / T(end - begin);
      for (int s = begin; s < end; ++s) {
        kernels::axpy(dim, inv, grad.data(), state_grad.row(row_offset + s));
      }
      break;
    }
  }
}

WordVector word_vector(const ForwardResult<float>& fwd, std::pair<int, int> span, int layer,
                       Pooling pooling) {
  if (layer < 0 || layer >= int(fwd.states.size())) {
    throw std::runtime_error("word_vector: layer out of range");
  }
  WordVector wv;
  wv.layer = layer;
  wv.pooling = pooling;
  wv.values = pool_word_vector(fwd.states[size_t(layer)], 0, span, pooling);
  return wv;
}

template <class T>
T softmax_xent_inplace(Mat<T>& logits, const std::vector<int>& labels) {
  if (int(labels.size()) != logits.rows) {
    throw std::runtime_error("softmax_xent: label/row count mismatch");
  }
  const int n = logits.cols;
  T loss = T(0);
  const T inv_rows = T(1) / T(logits.rows);
  for (int r = 0; r < logits.rows; ++r) {
    const int y = labels[size_t(r)];
    if (y < 0 || y >= n) {
      std::ostringstream os;
      os << "label " << y << " out of range [0, " << n << ")";
      throw std::runtime_error(os.str());
    }
    T* row = logits.row(r);
    T best = row[0];
    for (int j = 1; j < n; ++j) best = std::max(best, row[j]);
    T z = T(0);
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - best);
      z += row[j];
    }
    const T inv_z = T(1) / z;
    loss -= std::log(row[y] * inv_z);
    for (int j = 0; j < n; ++j) row[j] = row[j] * inv_z * inv_rows;
    row[y] -= inv_rows;
  }
  return loss * inv_rows;
}

std::vector<double> pretrain_mlm(EncoderWeights& w,
                                 const std::vector<TokenizedSentence>& sentences,
                                 const MlmConfig& cfg) {
  if (cfg.steps < 0) throw std::runtime_error("pretrain_mlm: negative step count");
  if (cfg.steps > 0 && sentences.empty()) {
    throw std::runtime_error("pretrain_mlm: no sentences");
  }
  if (!(cfg.mask_prob >= 0.0f && cfg.mask_prob <= 1.0f)) {
    throw std::runtime_error("pretrain_mlm: mask_prob outside [0, 1]");
  }
  const EncoderConfig& c = w.config;
  Rng rng(cfg.seed);
  Adam<float> opt(cfg.lr);
  std::vector<double> trace;
  trace.reserve(size_t(cfg.steps));

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::vector<int>> seqs(size_t(cfg.batch));
    for (auto& s : seqs) {
      const auto& sent = sentences[size_t(rng.uniform_int(sentences.size()))];
      s = frame_sentence(sent.ids, c.max_positions);
    }
    Batch batch = make_batch(seqs);

    // 80/10/10 masking over non-special positions
    std::vector<int> sel_rows, sel_labels;
    for (int b = 0; b < batch.bsz; ++b) {
      for (int s = 0; s < batch.seq; ++s) {
        const size_t r = batch.row(b, s);
        if (!batch.mask[r]) continue;
        const int id = batch.ids[r];
        if (id < SubwordVocab::kNumSpecials) continue;
        if (rng.uniform() >= double(cfg.mask_prob)) continue;
        sel_rows.push_back(int(r));
        sel_labels.push_back(id);
        const double roll = rng.uniform();
        if (roll < 0.8) {
          batch.ids[r] = SubwordVocab::kMask;
        } else if (roll < 0.9) {
          batch.ids[r] = SubwordVocab::kNumSpecials +
                         int(rng.uniform_int(uint64_t(c.vocab_size - SubwordVocab::kNumSpecials)));
        }
      }
    }
    if (sel_rows.empty()) {
      trace.push_back(0.0);
      continue;
    }

    auto fwd = encoder_forward(w, batch, true, derive_seed(cfg.seed, "dropout") + uint64_t(step));
    const Mat<float>& top = fwd.states.back();

    const int nsel = int(sel_rows.size());
    Mat<float> xsel(nsel, c.model_dim);
    for (int i = 0; i < nsel; ++i) {
      std::memcpy(xsel.row(i), top.row(sel_rows[size_t(i)]), sizeof(float) * size_t(c.model_dim));
    }
    Mat<float> logits(nsel, c.vocab_size);
    linear_forward(xsel, w.mlm_w, w.mlm_b, logits);
    const float loss = softmax_xent_inplace(logits, sel_labels);
    trace.push_back(double(loss));

    EncoderWeights grads = w.zeros_like();
    Mat<float> dxsel(nsel, c.model_dim);
    linear_backward(xsel, w.mlm_w, logits, dxsel, false, grads.mlm_w, grads.mlm_b);

    std::vector<Mat<float>> state_grads(size_t(c.layers) + 1);
    Mat<float> dtop(top.rows, top.cols);
    for (int i = 0; i < nsel; ++i) {
      kernels::axpy(c.model_dim, 1.0f, dxsel.row(i), dtop.row(sel_rows[size_t(i)]));
    }
    state_grads[size_t(c.layers)] = std::move(dtop);
    encoder_backward(w, batch, fwd, state_grads, grads);

    auto params = w.param_list();
    auto glist = const_cast<const EncoderWeights&>(grads).param_list();
    opt.step(params, glist);
  }
  return trace;
}

// ---- checkpoint IO ----

namespace {

constexpr char kMagic[4] = {'X', 'L', 'N', 'G'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& out, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const std::string& buf;
  size_t off = 0;
  const std::string& path;

  void need(size_t n, const char* what) {
    if (off + n > buf.size()) {
      std::ostringstream os;
      os << path << ": truncated checkpoint reading " << what << " at offset " << off;
      throw std::runtime_error(os.str());
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[off + size_t(i)])) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[off + size_t(i)])) << (8 * i);
    off += 8;
    return v;
  }
  float f32(const char* what) {
    uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
};

}  // namespace

void save_checkpoint(const EncoderWeights& w, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(w.config.layers));
  put_u32(out, uint32_t(w.config.model_dim));
  put_u32(out, uint32_t(w.config.heads));
  put_u32(out, uint32_t(w.config.ffn_dim));
  put_u32(out, uint32_t(w.config.max_positions));
  put_u32(out, uint32_t(w.config.vocab_size));
  put_f32(out, w.config.dropout);
  w.for_each_param([&](const char*, const Mat<float>& m) {
    put_u64(out, uint64_t(m.size()));
    for (float f : m.v) put_f32(out, f);
  });
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

EncoderWeights load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};

  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw std::runtime_error(path + ": bad magic bytes at offset 0 (not an XLNG checkpoint)");
  }
  r.off = 4;
  const uint32_t version = r.u32("version");
  if (version != kVersion) {
    std::ostringstream os;
    os << path << ": checkpoint version " << version << " unsupported (expected " << kVersion
       << ")";
    throw std::runtime_error(os.str());
  }
  EncoderConfig c;
  c.layers = int(r.u32("layers"));
  c.model_dim = int(r.u32("model_dim"));
  c.heads = int(r.u32("heads"));
  c.ffn_dim = int(r.u32("ffn_dim"));
  c.max_positions = int(r.u32("max_positions"));
  c.vocab_size = int(r.u32("vocab_size"));
  c.dropout = r.f32("dropout");
  c.validate();

  EncoderWeights w = make_weights<float>(c);
  w.for_each_param([&](const char* name, Mat<float>& m) {
    const uint64_t n = r.u64(name);
    if (n != m.size()) {
      std::ostringstream os;
      os << path << ": tensor " << name << " has " << n << " values, expected " << m.size()
         << " (offset " << r.off << ")";
      throw std::runtime_error(os.str());
    }
    for (auto& x : m.v) x = r.f32(name);
  });
  if (r.off != buf.size()) {
    std::ostringstream os;
    os << path << ": " << buf.size() - r.off << " trailing bytes at offset " << r.off;
    throw std::runtime_error(os.str());
  }
  return w;
}

// explicit instantiations
template struct LayerWeightsT<float>;
template struct LayerWeightsT<double>;
template EncoderWeightsT<float> init_encoder_t<float>(const EncoderConfig&, uint64_t);
template EncoderWeightsT<double> init_encoder_t<double>(const EncoderConfig&, uint64_t);
template ForwardResult<float> encoder_forward<float>(const EncoderWeightsT<float>&, const Batch&,
                                                     bool, uint64_t);
template ForwardResult<double> encoder_forward<double>(const EncoderWeightsT<double>&,
                                                       const Batch&, bool, uint64_t);
template void encoder_backward<float>(const EncoderWeightsT<float>&, const Batch&,
                                      const ForwardResult<float>&, const std::vector<Mat<float>>&,
                                      EncoderWeightsT<float>&);
template void encoder_backward<double>(const EncoderWeightsT<double>&, const Batch&,
                                       const ForwardResult<double>&,
                                       const std::vector<Mat<double>>&, EncoderWeightsT<double>&);
template std::vector<float> pool_word_vector<float>(const Mat<float>&, int, std::pair<int, int>,
                                                    Pooling);
template std::vector<double> pool_word_vector<double>(const Mat<double>&, int,
                                                      std::pair<int, int>, Pooling);
template void pool_word_vector_backward<float>(const std::vector<float>&, int,
                                               std::pair<int, int>, Pooling, Mat<float>&);
template void pool_word_vector_backward<double>(const std::vector<double>&, int,
                                                std::pair<int, int>, Pooling, Mat<double>&);
template float softmax_xent_inplace<float>(Mat<float>&, const std::vector<int>&);
template double softmax_xent_inplace<double>(Mat<double>&, const std::vector<int>&);

}  // namespace xladj
