#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace govla {

// Order-preserving JSON everywhere, so serialized artifacts are canonical.
using ordered_json = nlohmann::ordered_json;

// Dense row-major matrix; tokens are rows, channels are columns everywhere.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Error hierarchy. CLI maps these to exit codes: configuration/input errors
// exit 2, invariant/audit failures exit 3.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct LoadError : IoError {
  enum class Kind { bad_magic, bad_header, truncated, size_mismatch, non_finite };
  Kind kind;
  LoadError(Kind k, const std::string& msg) : IoError(msg), kind(k) {}
};

struct AuditError : Error {
  using Error::Error;
};

template <class S>
inline bool all_finite(const Mat<S>& m) {
  return m.array().isFinite().all();
}

template <class S>
inline void require_finite(const Mat<S>& m, const char* what) {
  if (!all_finite(m)) throw ValidationError(std::string(what) + ": non-finite entries");
}

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for stream-key derivation and input content hashes.
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h = kFnvOffset) {
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<unsigned char>(v >> (8 * i));
    h *= kFnvPrime;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Little-endian binary I/O for cross-platform bit-exact file formats.
// ---------------------------------------------------------------------------

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32_le(std::string& out, float f) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(f));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32_le(const unsigned char* p) {
  return std::bit_cast<float>(get_u32_le(p));
}

inline std::uint32_t get_u32_le(const std::string& bytes, std::size_t offset) {
  return get_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + offset);
}

inline float get_f32_le(const std::string& bytes, std::size_t offset) {
  return get_f32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + offset);
}

inline void append_matrix_f32_le(std::string& out, const Mat<float>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_f32_le(out, m(i, j));
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace govla
