#include <catch2/catch_amalgamated.hpp>

#include "govla/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using govla::Philox;

TEST_CASE("philox matches the published 4x32-10 test vector") {
  Philox g(0);
  CHECK(g.next_u32() == 0x6627e8d5u);
  CHECK(g.next_u32() == 0xe169c58du);
  CHECK(g.next_u32() == 0xbc57ac4cu);
  CHECK(g.next_u32() == 0x9b00dbd8u);
  // next block comes from counter 1
  CHECK(g.next_u32() == 0xf8e4cca4u);
}

TEST_CASE("philox key words are the low and high halves of the seed") {
  Philox g(0x9abcdef012345678ull);
  CHECK(g.next_u32() == 0x0279b337u);
}

TEST_CASE("streams are reproducible and key-separated") {
  Philox a(42), b(42), c(43);
  bool same = true, differ = false;
  for (int i = 0; i < 256; ++i) {
    std::uint32_t x = a.next_u32();
    same = same && (x == b.next_u32());
    differ = differ || (x != c.next_u32());
  }
  CHECK(same);
  CHECK(differ);
}

TEST_CASE("uniform doubles stay in the half-open unit interval") {
  Philox g(7);
  for (int i = 0; i < 10000; ++i) {
    double u = g.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("normal draws have unit scale and bounded support") {
  Philox g(11);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = g.normal();
    REQUIRE(std::abs(z) <= 6.0);
    sum += z;
    sq += z * z;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle permutes deterministically") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  std::vector<int> w = v;
  Philox(99).shuffle(v);
  Philox(99).shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  bool moved = false;
  for (int i = 0; i < 50; ++i) moved = moved || v[static_cast<std::size_t>(i)] != i;
  CHECK(moved);
}

TEST_CASE("next_below covers the range") {
  Philox g(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 500; ++i) {
    std::uint64_t x = g.next_below(7);
    REQUIRE(x < 7);
    seen.insert(x);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("fnv1a64 matches the published vectors") {
  CHECK(govla::fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(govla::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(govla::fnv1a64("abc") == 0xe71fa2190541574bull);
}

TEST_CASE("derived keys separate by tag and index") {
  std::uint64_t a = govla::derive_key(1, "weights");
  std::uint64_t b = govla::derive_key(1, "data");
  std::uint64_t c = govla::derive_key(2, "weights");
  CHECK(a != b);
  CHECK(a != c);
  CHECK(govla::derive_key(1, "weights", 0) != govla::derive_key(1, "weights", 1));
  CHECK(govla::derive_key(1, "weights") == govla::derive_key(1, "weights"));
}

TEST_CASE("normal_matrix is keyed by the generator state") {
  auto m = Philox(3).normal_matrix<float>(4, 5, 0.02);
  auto m2 = Philox(3).normal_matrix<float>(4, 5, 0.02);
  CHECK(m == m2);
  CHECK(m.rows() == 4);
  CHECK(m.cols() == 5);
  CHECK(std::abs(m(0, 0)) < 0.2);
}
