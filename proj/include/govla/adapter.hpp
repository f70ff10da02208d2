#pragma once

#include "govla/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace govla {

// The three frozen feature streams delivered by the grounding backend for one
// image: pooled global image tokens, text-guided query features, and decoded
// grounding features. Channel width C is shared; token counts may differ.
template <class S>
struct FeatureBundle {
  Mat<S> f_img;      // N x C
  Mat<S> f_query;    // L_q x C
  Mat<S> f_decoder;  // L_d x C

  void validate() const {
    if (f_img.rows() < 1 || f_query.rows() < 1 || f_decoder.rows() < 1)
      throw DimensionError("feature bundle: every stream needs at least one token");
    if (f_query.cols() != f_img.cols() || f_decoder.cols() != f_img.cols())
      throw DimensionError("feature bundle: channel widths disagree");
    require_finite(f_img, "f_img");
    require_finite(f_query, "f_query");
    require_finite(f_decoder, "f_decoder");
  }
};

struct AdapterConfig {
  Eigen::Index n = 32;     // compressed token count
  Eigen::Index c = 64;     // backend channel width
  Eigen::Index depth = 2;  // fusion blocks
  int heads = 4;
  Eigen::Index d_lm = 64;  // language model embedding width

  void validate() const {
    if (n < 1 || c < 1 || depth < 1 || heads < 1 || d_lm < 1)
      throw ConfigError("adapter config: all dimensions must be positive");
    if ((3 * c) % heads != 0) throw ConfigError("adapter config: 3*C must be divisible by the head count");
  }
};

// Cross-attention resampler: each learned token row attends over the L rows
// of f (softmax over L, no scaling factor) and takes the convex combination.
template <class S>
inline Mat<S> compress_tokens(const Mat<S>& tokens, const Mat<S>& f, Mat<S>* weights_out = nullptr) {
  if (tokens.cols() != f.cols())
    throw DimensionError("compress_tokens: token width " + std::to_string(tokens.cols()) +
                         " != feature width " + std::to_string(f.cols()));
  if (!all_finite(tokens) || !all_finite(f)) throw ValidationError("compress_tokens: non-finite input");
  Mat<S> p = softmax_rows<S>(tokens * f.transpose());
  if (weights_out) *weights_out = p;
  return p * f;
}

template <class S>
inline Mat<S> integrate_tokens(const Mat<S>& f_img, const Mat<S>& fq, const Mat<S>& fd) {
  if (f_img.rows() != fq.rows() || f_img.rows() != fd.rows() || f_img.cols() != fq.cols() ||
      f_img.cols() != fd.cols())
    throw DimensionError("integrate_tokens: the three streams must share shape N x C");
  Mat<S> out(f_img.rows(), 3 * f_img.cols());
  out << f_img, fq, fd;
  return out;
}

// Trainable adapter state plus its forward/backward pass. Holds the two
// learned token sets, the fusion stack (width 3C, pre-norm, no positional
// encodings), and the projection into the LM embedding space.
template <class S>
class AdapterState {
 public:
  AdapterState(const AdapterConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    t_query_ = Param<S>("adapter.t_query", cfg_.n, cfg_.c);
    t_decoder_ = Param<S>("adapter.t_decoder", cfg_.n, cfg_.c);
    blocks_.reserve(static_cast<std::size_t>(cfg_.depth));
    for (Eigen::Index i = 0; i < cfg_.depth; ++i)
      blocks_.emplace_back("adapter.fuse." + std::to_string(i), 3 * cfg_.c, cfg_.heads, 12 * cfg_.c);
    projection_ = Linear<S>("adapter.proj", 3 * cfg_.c, cfg_.d_lm);
    Philox gen(derive_key(seed, "adapter-init"));
    t_query_.init_normal(gen, 0.02);
    t_decoder_.init_normal(gen, 0.02);
    for (auto& b : blocks_) b.init(gen);
    projection_.init(gen);
  }

  const AdapterConfig& config() const { return cfg_; }

  ParamRefs<S> params() {
    ParamRefs<S> out;
    out.push_back(&t_query_);
    out.push_back(&t_decoder_);
    for (auto& b : blocks_) b.collect(out);
    projection_.collect(out);
    return out;
  }

  Mat<S> fuse(const Mat<S>& f_cat) {
    if (f_cat.cols() != 3 * cfg_.c) throw DimensionError("fuse: input width != 3C");
    Mat<S> x = f_cat;
    for (auto& b : blocks_) x = b.forward(x);
    return x;
  }

  Mat<S> project(const Mat<S>& f_fuse) { return projection_.forward(f_fuse); }

  // compress both streams -> channel concat -> fusion stack -> projection.
  Mat<S> forward(const FeatureBundle<S>& bundle) {
    bundle.validate();
    if (bundle.f_img.cols() != cfg_.c) throw DimensionError("adapter: bundle channel width != config C");
    if (bundle.f_img.rows() != cfg_.n) throw DimensionError("adapter: f_img token count != config N");
    cache_fq_src_ = bundle.f_query;
    cache_fd_src_ = bundle.f_decoder;
    Mat<S> cq = compress_tokens<S>(t_query_.value, bundle.f_query, &cache_pq_);
    Mat<S> cd = compress_tokens<S>(t_decoder_.value, bundle.f_decoder, &cache_pd_);
    Mat<S> out = project(fuse(integrate_tokens<S>(bundle.f_img, cq, cd)));
    require_finite(out, "adapter output");
    return out;
  }

  // Gradients for every parameter given d(loss)/d(output) of the latest
  // forward call. Grads accumulate; pair with zero_grads between steps.
  void backward(const Mat<S>& d_out) {
    Mat<S> dx = projection_.backward(d_out);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dx = it->backward(dx);
    Mat<S> dq = dx.middleCols(cfg_.c, cfg_.c);
    Mat<S> dd = dx.middleCols(2 * cfg_.c, cfg_.c);
    t_query_.grad.noalias() +=
        softmax_rows_backward<S>(cache_pq_, dq * cache_fq_src_.transpose()) * cache_fq_src_;
    t_decoder_.grad.noalias() +=
        softmax_rows_backward<S>(cache_pd_, dd * cache_fd_src_.transpose()) * cache_fd_src_;
  }

  Param<S>& t_query() { return t_query_; }
  Param<S>& t_decoder() { return t_decoder_; }
  std::vector<TransformerBlock<S>>& blocks() { return blocks_; }
  Linear<S>& projection() { return projection_; }

  // Attention probes from the latest forward pass.
  const Mat<S>& query_attention() const { return cache_pq_; }
  const Mat<S>& decoder_attention() const { return cache_pd_; }

 private:
  AdapterConfig cfg_;
  Param<S> t_query_, t_decoder_;
  std::vector<TransformerBlock<S>> blocks_;
  Linear<S> projection_;
  Mat<S> cache_pq_, cache_pd_, cache_fq_src_, cache_fd_src_;
};

}  // namespace govla
