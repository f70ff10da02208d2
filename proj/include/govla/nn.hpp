#pragma once

#include "govla/common.hpp"
#include "govla/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace govla {

// Trainable tensor with its gradient accumulator. Modules register their
// params by pointer so the optimizer and the checkpoint writer see one flat
// named list.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<S>::Zero(rows, cols)), grad(Mat<S>::Zero(rows, cols)) {}

  void init_normal(Philox& gen, double stddev) { value = gen.normal_matrix<S>(value.rows(), value.cols(), stddev); }
  void zero_grad() { grad.setZero(); }
};

template <class S>
using ParamRefs = std::vector<Param<S>*>;

template <class S>
inline void zero_grads(const ParamRefs<S>& params) {
  for (Param<S>* p : params) p->zero_grad();
}

template <class S>
inline Mat<S> softmax_rows(const Mat<S>& scores) {
  Mat<S> p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    S mx = scores.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (scores.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

// d scores given p = softmax_rows(scores) and dp.
template <class S>
inline Mat<S> softmax_rows_backward(const Mat<S>& p, const Mat<S>& dp) {
  Mat<S> ds(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    S dot = p.row(i).dot(dp.row(i));
    ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
  }
  return ds;
}

template <class S>
inline S gelu_scalar(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <class S>
inline S gelu_grad_scalar(S x) {
  const S inv_sqrt2pi = S(1) / std::sqrt(S(2) * S(M_PI));
  return S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2)))) + x * inv_sqrt2pi * std::exp(S(-0.5) * x * x);
}

// y = x W + b with x row-major [T x in], W [in x out].
template <class S>
struct Linear {
  Param<S> w, b;
  Mat<S> cache_x;

  Linear() = default;
  Linear(const std::string& prefix, Eigen::Index in, Eigen::Index out)
      : w(prefix + ".w", in, out), b(prefix + ".b", 1, out) {}

  void init(Philox& gen, double stddev = 0.02) { w.init_normal(gen, stddev); }

  void collect(ParamRefs<S>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }

  Mat<S> forward(const Mat<S>& x) {
    if (x.cols() != w.value.rows())
      throw DimensionError("linear " + w.name + ": input width " + std::to_string(x.cols()) +
                           " != " + std::to_string(w.value.rows()));
    cache_x = x;
    return (x * w.value).rowwise() + b.value.row(0);
  }

  Mat<S> backward(const Mat<S>& dy) {
    w.grad.noalias() += cache_x.transpose() * dy;
    b.grad.row(0) += dy.colwise().sum();
    return dy * w.value.transpose();
  }
};

template <class S>
struct LayerNorm {
  static constexpr double kEps = 1e-5;
  Param<S> gamma, beta;
  Mat<S> cache_xhat;
  Mat<S> cache_inv;  // column vector of 1/std per row

  LayerNorm() = default;
  LayerNorm(const std::string& prefix, Eigen::Index dim)
      : gamma(prefix + ".gamma", 1, dim), beta(prefix + ".beta", 1, dim) {
    gamma.value.setOnes();
  }

  void collect(ParamRefs<S>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

  Mat<S> forward(const Mat<S>& x) {
    const auto d = static_cast<S>(x.cols());
    cache_xhat.resize(x.rows(), x.cols());
    cache_inv.resize(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S mu = x.row(i).mean();
      S var = (x.row(i).array() - mu).square().sum() / d;
      S inv = S(1) / std::sqrt(var + S(kEps));
      cache_inv(i, 0) = inv;
      cache_xhat.row(i) = (x.row(i).array() - mu) * inv;
    }
    return (cache_xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() +
           beta.value.row(0).array();
  }

  Mat<S> backward(const Mat<S>& dy) {
    const auto d = static_cast<S>(dy.cols());
    gamma.grad.row(0) += (dy.array() * cache_xhat.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      Eigen::Array<S, 1, Eigen::Dynamic> dxhat = dy.row(i).array() * gamma.value.row(0).array();
      S m1 = dxhat.sum() / d;
      S m2 = (dxhat * cache_xhat.row(i).array()).sum() / d;
      dx.row(i) = cache_inv(i, 0) * (dxhat - m1 - cache_xhat.row(i).array() * m2);
    }
    return dx;
  }
};

template <class S>
struct FeedForward {
  Linear<S> lin1, lin2;
  Mat<S> cache_pre;

  FeedForward() = default;
  FeedForward(const std::string& prefix, Eigen::Index dim, Eigen::Index hidden)
      : lin1(prefix + ".lin1", dim, hidden), lin2(prefix + ".lin2", hidden, dim) {}

  void init(Philox& gen, double stddev = 0.02) {
    lin1.init(gen, stddev);
    lin2.init(gen, stddev);
  }

  void collect(ParamRefs<S>& out) {
    lin1.collect(out);
    lin2.collect(out);
  }

  Mat<S> forward(const Mat<S>& x) {
    cache_pre = lin1.forward(x);
    Mat<S> act = cache_pre.unaryExpr([](S v) { return gelu_scalar(v); });
    return lin2.forward(act);
  }

  Mat<S> backward(const Mat<S>& dy) {
    Mat<S> dact = lin2.backward(dy);
    Mat<S> dpre = dact.array() * cache_pre.unaryExpr([](S v) { return gelu_grad_scalar(v); }).array();
    return lin1.backward(dpre);
  }
};

// Multi-head self-attention with 1/sqrt(head_dim) score scaling. Optionally
// causal (each position attends to itself and earlier positions only).
template <class S>
struct MultiHeadAttention {
  Linear<S> wq, wk, wv, wo;
  int heads = 1;
  bool causal = false;
  Mat<S> cache_q, cache_k, cache_v;
  std::vector<Mat<S>> cache_p;  // per-head attention weights, T x T

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& prefix, Eigen::Index dim, int n_heads, bool causal_mask)
      : wq(prefix + ".wq", dim, dim),
        wk(prefix + ".wk", dim, dim),
        wv(prefix + ".wv", dim, dim),
        wo(prefix + ".wo", dim, dim),
        heads(n_heads),
        causal(causal_mask) {
    if (dim % n_heads != 0) throw DimensionError("attention width not divisible by head count");
  }

  void init(Philox& gen, double stddev = 0.02) {
    wq.init(gen, stddev);
    wk.init(gen, stddev);
    wv.init(gen, stddev);
    wo.init(gen, stddev);
  }

  void collect(ParamRefs<S>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }

  Mat<S> forward(const Mat<S>& x) {
    const Eigen::Index t = x.rows(), m = x.cols();
    const Eigen::Index hd = m / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    cache_q = wq.forward(x);
    cache_k = wk.forward(x);
    cache_v = wv.forward(x);
    cache_p.assign(static_cast<std::size_t>(heads), Mat<S>());
    Mat<S> ctx(t, m);
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * hd;
      Mat<S> scores = cache_q.middleCols(off, hd) * cache_k.middleCols(off, hd).transpose() * scale;
      if (causal) {
        for (Eigen::Index i = 0; i < t; ++i)
          for (Eigen::Index j = i + 1; j < t; ++j)
            scores(i, j) = -std::numeric_limits<S>::infinity();
      }
      Mat<S>& p = cache_p[static_cast<std::size_t>(h)];
      p = softmax_rows(scores);
      ctx.middleCols(off, hd).noalias() = p * cache_v.middleCols(off, hd);
    }
    return wo.forward(ctx);
  }

  Mat<S> backward(const Mat<S>& dy) {
    const Eigen::Index t = cache_q.rows(), m = cache_q.cols();
    const Eigen::Index hd = m / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(hd));
    Mat<S> dctx = wo.backward(dy);
    Mat<S> dq = Mat<S>::Zero(t, m), dk = Mat<S>::Zero(t, m), dv = Mat<S>::Zero(t, m);
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * hd;
      const Mat<S>& p = cache_p[static_cast<std::size_t>(h)];
      Mat<S> dp = dctx.middleCols(off, hd) * cache_v.middleCols(off, hd).transpose();
      dv.middleCols(off, hd).noalias() = p.transpose() * dctx.middleCols(off, hd);
      Mat<S> ds = softmax_rows_backward(p, dp) * scale;
      dq.middleCols(off, hd).noalias() = ds * cache_k.middleCols(off, hd);
      dk.middleCols(off, hd).noalias() = ds.transpose() * cache_q.middleCols(off, hd);
    }
    return wq.backward(dq) + wk.backward(dk) + wv.backward(dv);
  }

  // Attention weights from the latest forward pass, one T x T matrix per head.
  const std::vector<Mat<S>>& attention_weights() const { return cache_p; }
};

// Pre-norm encoder block: x + MHSA(LN(x)), then + FFN(LN(.)).
template <class S>
struct TransformerBlock {
  LayerNorm<S> ln1, ln2;
  MultiHeadAttention<S> attn;
  FeedForward<S> ffn;

  TransformerBlock() = default;
  TransformerBlock(const std::string& prefix, Eigen::Index dim, int heads, Eigen::Index ffn_hidden,
                   bool causal_mask = false)
      : ln1(prefix + ".ln1", dim),
        ln2(prefix + ".ln2", dim),
        attn(prefix + ".attn", dim, heads, causal_mask),
        ffn(prefix + ".ffn", dim, ffn_hidden) {}

  void init(Philox& gen, double stddev = 0.02) {
    attn.init(gen, stddev);
    ffn.init(gen, stddev);
  }

  void collect(ParamRefs<S>& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    ffn.collect(out);
  }

  Mat<S> forward(const Mat<S>& x) {
    Mat<S> x1 = x + attn.forward(ln1.forward(x));
    return x1 + ffn.forward(ln2.forward(x1));
  }

  Mat<S> backward(const Mat<S>& dy) {
    Mat<S> dx1 = dy + ln2.backward(ffn.backward(dy));
    return dx1 + ln1.backward(attn.backward(dx1));
  }
};

// Token embedding table; rows gather on forward, scatter-add on backward.
template <class S>
struct Embedding {
  Param<S> table;
  std::vector<int> cache_ids;

  Embedding() = default;
  Embedding(const std::string& name, Eigen::Index vocab, Eigen::Index dim) : table(name, vocab, dim) {}

  void init(Philox& gen, double stddev = 0.02) { table.init_normal(gen, stddev); }

  void collect(ParamRefs<S>& out) { out.push_back(&table); }

  Mat<S> forward(const std::vector<int>& ids) {
    cache_ids = ids;
    Mat<S> out(static_cast<Eigen::Index>(ids.size()), table.value.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table.value.rows())
        throw ValidationError("embedding id out of range: " + std::to_string(ids[i]));
      out.row(static_cast<Eigen::Index>(i)) = table.value.row(ids[i]);
    }
    return out;
  }

  void backward(const Mat<S>& dy) {
    for (std::size_t i = 0; i < cache_ids.size(); ++i)
      table.grad.row(cache_ids[i]) += dy.row(static_cast<Eigen::Index>(i));
  }
};

}  // namespace govla
