#pragma once

#include "govla/common.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace govla {

// Philox4x32-10 counter-based generator (Salmon et al.). Chosen over the
// platform engines so that a stream is a pure function of its 64-bit key,
// bit-identical across platforms and runs. normal() draws use a sum of 12
// uniforms, which involves only exactly-rounded IEEE additions and therefore
// stays bit-exact everywhere (tails truncated at +/-6 sigma, irrelevant at
// this scale).
class Philox {
 public:
  explicit Philox(std::uint64_t key) : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)} {}

  std::uint32_t next_u32() {
    if (buf_pos_ == 4) {
      block_ = run_block();
      advance_counter();
      buf_pos_ = 0;
    }
    return block_[buf_pos_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return lo | (hi << 32);
  }

  // Uniform in [0, 1) with 32 bits of resolution.
  double next_double() { return next_u32() * 0x1p-32; }

  // Standard normal via Irwin-Hall(12) - 6; exact in double arithmetic.
  double normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += next_double();
    return s - 6.0;
  }

  // Uniform integer in [0, n). Modulo bias is irrelevant for the stream
  // sizes used here and keeps the consumption pattern fixed.
  std::uint64_t next_below(std::uint64_t n) { return n <= 1 ? 0 : next_u64() % n; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <class S>
  Mat<S> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<S>(normal() * stddev);
    return m;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  std::array<std::uint32_t, 4> run_block() const {
    std::array<std::uint32_t, 4> c = ctr_;
    std::uint32_t k0 = key_[0], k1 = key_[1];
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
      std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
    return c;
  }

  void advance_counter() {
    for (int i = 0; i < 4; ++i) {
      if (++ctr_[i] != 0) break;
    }
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_{0, 0, 0, 0};
  std::array<std::uint32_t, 4> block_{};
  int buf_pos_ = 4;
};

// Stream-key derivation: every random stream in the project is keyed by the
// FNV-1a hash of a root seed plus a purpose tag, so one config seed pins all
// randomness.
inline std::uint64_t derive_key(std::uint64_t root, std::string_view tag) {
  return fnv1a64(tag, fnv1a64_u64(root));
}

inline std::uint64_t derive_key(std::uint64_t root, std::string_view tag, std::uint64_t index) {
  return fnv1a64_u64(index, derive_key(root, tag));
}

}  // namespace govla
