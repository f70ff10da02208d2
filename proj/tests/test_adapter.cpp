#include <catch2/catch_amalgamated.hpp>

#include "govla/adapter.hpp"
#include "helpers.hpp"

#include <cmath>

using govla::AdapterConfig;
using govla::AdapterState;
using govla::FeatureBundle;
using govla::Mat;
using govla::Philox;

namespace {

template <class S>
FeatureBundle<S> random_bundle(std::uint64_t seed, Eigen::Index n, Eigen::Index c, Eigen::Index lq,
                               Eigen::Index ld) {
  Philox gen(seed);
  FeatureBundle<S> b;
  b.f_img = gen.normal_matrix<S>(n, c);
  b.f_query = gen.normal_matrix<S>(lq, c);
  b.f_decoder = gen.normal_matrix<S>(ld, c);
  return b;
}

}  // namespace

TEST_CASE("compress_tokens single-element softmax is the identity") {
  Mat<double> t(1, 2), f(1, 2);
  t << 0.7, -4.0;
  f << 3.0, -2.0;
  Mat<double> out = govla::compress_tokens<double>(t, f);
  CHECK(out(0, 0) == 3.0);
  CHECK(out(0, 1) == -2.0);
}

TEST_CASE("compress_tokens collapses identical feature rows") {
  Philox gen(21);
  Mat<double> t = gen.normal_matrix<double>(3, 4);
  Mat<double> f(5, 4);
  Mat<double> v = gen.normal_matrix<double>(1, 4);
  for (int i = 0; i < 5; ++i) f.row(i) = v.row(0);
  Mat<double> out = govla::compress_tokens<double>(t, f);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) CHECK(out(i, j) == Catch::Approx(v(0, j)).margin(1e-12));
}

TEST_CASE("compress_tokens matches the straight-line oracle") {
  Mat<double> t(2, 2), f(3, 2);
  t << 1, 0, -1, 2;
  f << 1, 2, 0, -1, 3, 1;
  Mat<double> weights;
  Mat<double> out = govla::compress_tokens<double>(t, f, &weights);
  auto ref = oracle::cross_attention(testutil::to_grid(t), testutil::to_grid(f));
  CHECK(testutil::max_abs_diff(out, ref.out) < 1e-12);
  CHECK(testutil::max_abs_diff(weights, ref.weights) < 1e-12);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Philox gen(seed);
    Mat<double> tr = gen.normal_matrix<double>(4, 6);
    Mat<double> fr = gen.normal_matrix<double>(9, 6);
    auto r2 = oracle::cross_attention(testutil::to_grid(tr), testutil::to_grid(fr));
    CHECK(testutil::max_abs_diff(govla::compress_tokens<double>(tr, fr), r2.out) < 1e-10);
  }
}

TEST_CASE("compress_tokens attention rows sum to one and output stays in the hull") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    Philox gen(seed);
    Mat<float> t = gen.normal_matrix<float>(5, 8, 2.0);
    Mat<float> f = gen.normal_matrix<float>(11, 8, 2.0);
    Mat<float> weights;
    Mat<float> out = govla::compress_tokens<float>(t, f, &weights);
    for (Eigen::Index i = 0; i < weights.rows(); ++i)
      CHECK(std::abs(weights.row(i).sum() - 1.0f) < 1e-6f);
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
      float lo = f.col(j).minCoeff(), hi = f.col(j).maxCoeff();
      for (Eigen::Index i = 0; i < out.rows(); ++i) {
        CHECK(out(i, j) >= lo - 1e-5f);
        CHECK(out(i, j) <= hi + 1e-5f);
      }
    }
  }
}

TEST_CASE("compress_tokens rejects bad inputs") {
  Mat<double> t(2, 3), f(4, 2);
  t.setZero();
  f.setZero();
  CHECK_THROWS_AS(govla::compress_tokens<double>(t, f), govla::DimensionError);
  Mat<double> f2(4, 3);
  f2.setZero();
  f2(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(govla::compress_tokens<double>(t, f2), govla::ValidationError);
}

TEST_CASE("integrate_tokens concatenates along channels") {
  Mat<double> a = Mat<double>::Constant(4, 8, 1.0);
  Mat<double> b = Mat<double>::Constant(4, 8, 2.0);
  Mat<double> c = Mat<double>::Constant(4, 8, 3.0);
  Mat<double> out = govla::integrate_tokens<double>(a, b, c);
  REQUIRE(out.rows() == 4);
  REQUIRE(out.cols() == 24);
  CHECK(out.leftCols(8) == a);
  CHECK(out.middleCols(8, 8) == b);
  CHECK(out.rightCols(8) == c);
  CHECK(govla::integrate_tokens<double>(Mat<double>::Zero(4, 8), Mat<double>::Zero(4, 8),
                                        Mat<double>::Zero(4, 8))
            .isZero());
  Mat<double> bad(3, 8);
  bad.setZero();
  CHECK_THROWS_AS(govla::integrate_tokens<double>(a, bad, c), govla::DimensionError);
}

TEST_CASE("transformer block matches the straight-line oracle") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    govla::TransformerBlock<double> block("b", 8, 2, 32);
    Philox gen(govla::derive_key(seed, "block-test"));
    block.init(gen, 0.3);
    // non-trivial layer-norm affine too
    block.ln1.gamma.value = gen.normal_matrix<double>(1, 8, 0.2).array() + 1.0;
    block.ln1.beta.value = gen.normal_matrix<double>(1, 8, 0.2);
    block.ln2.gamma.value = gen.normal_matrix<double>(1, 8, 0.2).array() + 1.0;
    block.ln2.beta.value = gen.normal_matrix<double>(1, 8, 0.2);
    Mat<double> x = gen.normal_matrix<double>(5, 8);
    Mat<double> got = block.forward(x);
    oracle::Grid want = oracle::transformer_block(testutil::to_grid(x), testutil::extract_block(block));
    CHECK(testutil::max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("causal attention matches the oracle and ignores the future") {
  govla::TransformerBlock<double> block("b", 8, 2, 32, true);
  Philox gen(7);
  block.init(gen, 0.3);
  Mat<double> x = gen.normal_matrix<double>(6, 8);
  Mat<double> got = block.forward(x);
  oracle::Grid want =
      oracle::transformer_block(testutil::to_grid(x), testutil::extract_block(block), true);
  CHECK(testutil::max_abs_diff(got, want) < 1e-9);

  // editing position 5 must not change positions 0..4
  Mat<double> x2 = x;
  x2.row(5).setConstant(9.0);
  Mat<double> got2 = block.forward(x2);
  CHECK((got2.topRows(5) - got.topRows(5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fuse preserves shape and is permutation equivariant") {
  AdapterConfig cfg;
  cfg.n = 4;
  cfg.c = 8;
  cfg.depth = 2;
  cfg.heads = 4;
  cfg.d_lm = 8;
  AdapterState<float> adapter(cfg, 3);
  Philox gen(15);
  for (int trial = 0; trial < 5; ++trial) {
    Mat<float> x = gen.normal_matrix<float>(4, 24);
    Mat<float> y = adapter.fuse(x);
    REQUIRE(y.rows() == 4);
    REQUIRE(y.cols() == 24);
    std::vector<int> perm = {2, 0, 3, 1};
    Mat<float> xp(4, 24), yp_want(4, 24);
    for (int i = 0; i < 4; ++i) {
      xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
      yp_want.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
    }
    Mat<float> yp = adapter.fuse(xp);
    CHECK((yp - yp_want).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("fusion attention rows sum to one") {
  AdapterConfig cfg;
  cfg.n = 6;
  cfg.c = 8;
  cfg.depth = 2;
  cfg.heads = 4;
  cfg.d_lm = 8;
  AdapterState<float> adapter(cfg, 4);
  Philox gen(16);
  adapter.fuse(gen.normal_matrix<float>(6, 24));
  for (auto& block : adapter.blocks()) {
    for (const auto& p : block.attn.attention_weights()) {
      REQUIRE(p.rows() == 6);
      for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(std::abs(p.row(i).sum() - 1.0f) < 1e-6f);
    }
  }
}

TEST_CASE("project is affine") {
  AdapterConfig cfg;
  cfg.n = 4;
  cfg.c = 8;
  cfg.depth = 1;
  cfg.heads = 4;
  cfg.d_lm = 24;
  AdapterState<double> adapter(cfg, 5);
  SECTION("identity weights pass input through") {
    adapter.projection().w.value = Mat<double>::Identity(24, 24);
    adapter.projection().b.value.setZero();
    Philox gen(1);
    Mat<double> x = gen.normal_matrix<double>(4, 24);
    CHECK((adapter.project(x) - x).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("zero input exposes the bias") {
    Mat<double> out = adapter.project(Mat<double>::Zero(4, 24));
    for (int i = 0; i < 4; ++i)
      CHECK((out.row(i) - adapter.projection().b.value.row(0)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("weight path is homogeneous") {
    Philox gen(2);
    Mat<double> x = gen.normal_matrix<double>(4, 24);
    Mat<double> bias = adapter.projection().b.value.row(0).replicate(4, 1);
    Mat<double> lhs = adapter.project(2.5 * x) - bias;
    Mat<double> rhs = 2.5 * (adapter.project(x) - bias);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("adapter forward has the contracted shape and is deterministic") {
  AdapterConfig cfg;
  cfg.n = 8;
  cfg.c = 16;
  cfg.depth = 2;
  cfg.heads = 4;
  cfg.d_lm = 32;
  AdapterState<float> adapter(cfg, 7);
  auto bundle = random_bundle<float>(7, 8, 16, 20, 24);
  Mat<float> a = adapter.forward(bundle);
  REQUIRE(a.rows() == 8);
  REQUIRE(a.cols() == 32);
  CHECK(govla::all_finite(a));
  Mat<float> b = adapter.forward(bundle);
  CHECK(a == b);
}

TEST_CASE("adapter forward matches the composed stage oracles") {
  AdapterConfig cfg;
  cfg.n = 2;
  cfg.c = 2;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.d_lm = 3;
  AdapterState<double> adapter(cfg, 11);
  auto bundle = random_bundle<double>(11, 2, 2, 5, 4);
  Mat<double> got = adapter.forward(bundle);

  auto cq = oracle::cross_attention(testutil::to_grid(adapter.t_query().value),
                                    testutil::to_grid(bundle.f_query));
  auto cd = oracle::cross_attention(testutil::to_grid(adapter.t_decoder().value),
                                    testutil::to_grid(bundle.f_decoder));
  oracle::Grid cat = oracle::zeros(2, 6);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      cat[i][j] = bundle.f_img(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      cat[i][2 + j] = cq.out[i][j];
      cat[i][4 + j] = cd.out[i][j];
    }
  oracle::Grid fused = oracle::transformer_block(cat, testutil::extract_block(adapter.blocks()[0]));
  oracle::Grid want = oracle::linear(fused, testutil::to_grid(adapter.projection().w.value),
                                     testutil::to_row(adapter.projection().b.value));
  CHECK(testutil::max_abs_diff(got, want) < 1e-9);
}

TEST_CASE("adapter rejects malformed bundles") {
  AdapterConfig cfg;
  cfg.n = 4;
  cfg.c = 8;
  cfg.depth = 1;
  cfg.heads = 4;
  cfg.d_lm = 8;
  AdapterState<float> adapter(cfg, 1);
  auto bad_n = random_bundle<float>(1, 5, 8, 6, 6);
  CHECK_THROWS_AS(adapter.forward(bad_n), govla::DimensionError);
  auto bad_c = random_bundle<float>(1, 4, 9, 6, 6);
  CHECK_THROWS_AS(adapter.forward(bad_c), govla::DimensionError);
  auto nan = random_bundle<float>(1, 4, 8, 6, 6);
  nan.f_decoder(2, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(adapter.forward(nan), govla::ValidationError);
}

TEST_CASE("adapter analytic gradients match central differences") {
  AdapterConfig cfg;
  cfg.n = 4;
  cfg.c = 8;
  cfg.depth = 1;
  cfg.heads = 4;
  cfg.d_lm = 8;
  AdapterState<double> adapter(cfg, 13);
  auto bundle = random_bundle<double>(13, 4, 8, 16, 16);

  auto params = adapter.params();
  govla::zero_grads(params);
  Mat<double> out = adapter.forward(bundle);
  adapter.backward(Mat<double>::Ones(out.rows(), out.cols()));
  std::vector<Mat<double>> grads;
  for (auto* p : params) grads.push_back(p->grad);

  auto loss = [&]() { return adapter.forward(bundle).sum(); };
  auto res = testutil::grad_check(params, grads, loss);
  INFO("worst parameter: " << res.worst_param);
  CHECK(res.worst_rel < 1e-4);
}

TEST_CASE("layer gradients match central differences") {
  Philox gen(31);
  SECTION("linear") {
    govla::Linear<double> lin("lin", 5, 3);
    lin.init(gen, 0.5);
    lin.b.value = gen.normal_matrix<double>(1, 3, 0.5);
    Mat<double> x = gen.normal_matrix<double>(4, 5);
    govla::ParamRefs<double> params;
    lin.collect(params);
    govla::zero_grads(params);
    lin.forward(x);
    lin.backward(Mat<double>::Ones(4, 3));
    std::vector<Mat<double>> grads;
    for (auto* p : params) grads.push_back(p->grad);
    auto res = testutil::grad_check(params, grads, [&]() { return lin.forward(x).sum(); });
    CHECK(res.worst_rel < 1e-6);
  }
  SECTION("layer norm") {
    govla::LayerNorm<double> ln("ln", 6);
    ln.gamma.value = gen.normal_matrix<double>(1, 6, 0.3).array() + 1.0;
    ln.beta.value = gen.normal_matrix<double>(1, 6, 0.3);
    Mat<double> x = gen.normal_matrix<double>(3, 6);
    Mat<double> dy = gen.normal_matrix<double>(3, 6);
    govla::ParamRefs<double> params;
    ln.collect(params);
    govla::zero_grads(params);
    ln.forward(x);
    ln.backward(dy);
    std::vector<Mat<double>> grads;
    for (auto* p : params) grads.push_back(p->grad);
    auto res = testutil::grad_check(params, grads,
                                    [&]() { return (ln.forward(x).array() * dy.array()).sum(); });
    CHECK(res.worst_rel < 1e-6);
  }
  SECTION("causal block") {
    govla::TransformerBlock<double> block("b", 8, 2, 16, true);
    block.init(gen, 0.3);
    Mat<double> x = gen.normal_matrix<double>(5, 8);
    govla::ParamRefs<double> params;
    block.collect(params);
    govla::zero_grads(params);
    block.forward(x);
    block.backward(Mat<double>::Ones(5, 8));
    std::vector<Mat<double>> grads;
    for (auto* p : params) grads.push_back(p->grad);
    auto res = testutil::grad_check(params, grads, [&]() { return block.forward(x).sum(); });
    CHECK(res.worst_rel < 1e-4);
  }
  SECTION("embedding") {
    govla::Embedding<double> emb("emb", 7, 4);
    emb.init(gen, 0.5);
    std::vector<int> ids = {1, 3, 3, 0};
    Mat<double> dy = gen.normal_matrix<double>(4, 4);
    govla::ParamRefs<double> params;
    emb.collect(params);
    govla::zero_grads(params);
    emb.forward(ids);
    emb.backward(dy);
    std::vector<Mat<double>> grads;
    for (auto* p : params) grads.push_back(p->grad);
    auto res = testutil::grad_check(params, grads,
                                    [&]() { return (emb.forward(ids).array() * dy.array()).sum(); });
    CHECK(res.worst_rel < 1e-6);
  }
}

TEST_CASE("gradients accumulate across backward calls") {
  AdapterConfig cfg;
  cfg.n = 2;
  cfg.c = 4;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.d_lm = 4;
  AdapterState<double> adapter(cfg, 17);
  auto bundle = random_bundle<double>(17, 2, 4, 6, 6);
  auto params = adapter.params();

  govla::zero_grads(params);
  Mat<double> out = adapter.forward(bundle);
  adapter.backward(Mat<double>::Ones(out.rows(), out.cols()));
  Mat<double> once = adapter.t_query().grad;

  govla::zero_grads(params);
  adapter.forward(bundle);
  adapter.backward(Mat<double>::Ones(out.rows(), out.cols()));
  adapter.forward(bundle);
  adapter.backward(Mat<double>::Ones(out.rows(), out.cols()));
  CHECK((adapter.t_query().grad - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
}
