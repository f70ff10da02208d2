// Shared utilities for the test binaries: conversions between the library's
// Eigen matrices and the oracle's plain grids, seeded random instances, and a
// central-difference gradient checker.
#pragma once

#include "govla/nn.hpp"
#include "govla/rng.hpp"
#include "oracles.hpp"

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace testutil {

inline oracle::Grid to_grid(const govla::Mat<double>& m) {
  oracle::Grid g(static_cast<std::size_t>(m.rows()), oracle::Row(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return g;
}

inline oracle::Row to_row(const govla::Mat<double>& m) {
  oracle::Row r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(0, j);
  return r;
}

inline govla::Mat<double> to_mat(const oracle::Grid& g) {
  govla::Mat<double> m(static_cast<Eigen::Index>(g.size()), static_cast<Eigen::Index>(g[0].size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[0].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g[i][j];
  return m;
}

template <class S>
inline double max_abs_diff(const govla::Mat<S>& m, const oracle::Grid& g) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(static_cast<double>(m(i, j)) -
                                       g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]));
  return worst;
}

// Copies an implementation block's parameters into the oracle's layout.
inline oracle::BlockWeights extract_block(govla::TransformerBlock<double>& b) {
  oracle::BlockWeights w;
  w.ln1_gamma = to_row(b.ln1.gamma.value);
  w.ln1_beta = to_row(b.ln1.beta.value);
  w.ln2_gamma = to_row(b.ln2.gamma.value);
  w.ln2_beta = to_row(b.ln2.beta.value);
  w.wq = to_grid(b.attn.wq.w.value);
  w.wk = to_grid(b.attn.wk.w.value);
  w.wv = to_grid(b.attn.wv.w.value);
  w.wo = to_grid(b.attn.wo.w.value);
  w.bq = to_row(b.attn.wq.b.value);
  w.bk = to_row(b.attn.wk.b.value);
  w.bv = to_row(b.attn.wv.b.value);
  w.bo = to_row(b.attn.wo.b.value);
  w.w1 = to_grid(b.ffn.lin1.w.value);
  w.b1 = to_row(b.ffn.lin1.b.value);
  w.w2 = to_grid(b.ffn.lin2.w.value);
  w.b2 = to_row(b.ffn.lin2.b.value);
  w.heads = b.attn.heads;
  return w;
}

struct GradCheckResult {
  double worst_rel = 0.0;
  std::string worst_param;
};

// Central-difference check: `loss` must re-run the forward pass from current
// parameter values and return a scalar; `grads` holds the analytic gradients
// captured beforehand. Relative error is per-parameter-tensor, norm based.
inline GradCheckResult grad_check(const govla::ParamRefs<double>& params,
                                  const std::vector<govla::Mat<double>>& grads,
                                  const std::function<double()>& loss, double h = 1e-5) {
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    govla::Param<double>* p = params[pi];
    govla::Mat<double> fd(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        double orig = p->value(i, j);
        p->value(i, j) = orig + h;
        double up = loss();
        p->value(i, j) = orig - h;
        double down = loss();
        p->value(i, j) = orig;
        fd(i, j) = (up - down) / (2.0 * h);
      }
    }
    double denom = std::max({grads[pi].norm(), fd.norm(), 1e-10});
    double rel = (grads[pi] - fd).norm() / denom;
    if (rel > res.worst_rel) {
      res.worst_rel = rel;
      res.worst_param = p->name;
    }
  }
  return res;
}

// Seeded toy caption corpora for the metric-oracle comparisons.
struct CaptionInstance {
  std::vector<oracle::Tokens> hyps;
  std::vector<std::vector<oracle::Tokens>> refs;
};

inline CaptionInstance random_captions(std::uint64_t seed, std::size_t images = 6) {
  static const std::vector<std::string> words = {"two",  "debris", "piles",   "near", "gate",
                                                 "zone", "worker", "scaffold", "bin",  "litter"};
  govla::Philox gen(seed);
  CaptionInstance inst;
  auto sentence = [&](std::size_t min_len, std::size_t max_len) {
    std::size_t len = min_len + static_cast<std::size_t>(gen.next_below(max_len - min_len + 1));
    oracle::Tokens t;
    for (std::size_t k = 0; k < len; ++k)
      t.push_back(words[static_cast<std::size_t>(gen.next_below(words.size()))]);
    return t;
  };
  for (std::size_t i = 0; i < images; ++i) {
    inst.hyps.push_back(sentence(1, 12));
    std::size_t nref = 1 + static_cast<std::size_t>(gen.next_below(3));
    std::vector<oracle::Tokens> rs;
    for (std::size_t r = 0; r < nref; ++r) rs.push_back(sentence(1, 12));
    inst.refs.push_back(rs);
  }
  return inst;
}

// Seeded toy detection sets for the average-precision comparisons.
struct DetectionInstance {
  std::vector<oracle::Det> dets;
  std::vector<oracle::Gt> gts;
};

inline DetectionInstance random_detections(std::uint64_t seed) {
  govla::Philox gen(seed);
  DetectionInstance inst;
  int images = 1 + static_cast<int>(gen.next_below(3));
  auto box = [&]() {
    double x0 = gen.next_double() * 80.0, y0 = gen.next_double() * 80.0;
    return oracle::Box{x0, y0, x0 + 4.0 + gen.next_double() * 30.0, y0 + 4.0 + gen.next_double() * 30.0};
  };
  for (int img = 0; img < images; ++img) {
    std::size_t ng = 1 + static_cast<std::size_t>(gen.next_below(4));
    for (std::size_t g = 0; g < ng; ++g) inst.gts.push_back({img, box()});
    std::size_t nd = static_cast<std::size_t>(gen.next_below(6));
    for (std::size_t d = 0; d < nd; ++d) {
      // half the detections perturb a true box, half are noise
      oracle::Box b;
      if (gen.next_below(2) == 0 && !inst.gts.empty()) {
        const oracle::Box& src = inst.gts[static_cast<std::size_t>(gen.next_below(inst.gts.size()))].box;
        double dx = (gen.next_double() - 0.5) * 10.0, dy = (gen.next_double() - 0.5) * 10.0;
        b = {src.x0 + dx, src.y0 + dy, src.x1 + dx, src.y1 + dy};
      } else {
        b = box();
      }
      inst.dets.push_back({img, b, gen.next_double()});
    }
  }
  return inst;
}

}  // namespace testutil
