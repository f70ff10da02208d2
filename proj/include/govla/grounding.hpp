#pragma once

#include "govla/adapter.hpp"
#include "govla/common.hpp"
#include "govla/rng.hpp"
#include "govla/text.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace govla {

struct GroundingRequest {
  std::string image_id;
  std::string prompt;
  std::uint64_t seed = 0;

  void validate() const {
    if (image_id.empty()) throw ValidationError("grounding request: empty image_id");
    if (prompt.empty()) throw ValidationError("grounding request: empty prompt");
  }
};

struct FeatureShape {
  Eigen::Index n = 32;
  Eigen::Index l_query = 64;
  Eigen::Index l_decoder = 64;
  Eigen::Index c = 64;

  void validate() const {
    if (n < 1 || l_query < 1 || l_decoder < 1 || c < 1)
      throw ValidationError("feature shape: all dims must be at least 1");
  }
};

// Unit-norm direction associated with one prompt phrase; global across
// images, so the same phrase always leaves the same trace in feature space.
inline Mat<float> signature_direction(const std::string& phrase, Eigen::Index c) {
  Philox gen(fnv1a64(phrase, fnv1a64("sig")));
  Mat<float> d = gen.normal_matrix<float>(1, c);
  float n = d.norm();
  return d / (n > 0 ? n : 1.0f);
}

// Deterministic synthetic stand-in for the frozen Stage-I grounding model.
// f_img is keyed background noise; f_query and f_decoder are noise with one
// signature direction injected per whitespace-separated prompt phrase, so
// the prompt content is recoverable from the features. Amplitudes are scaled
// by sqrt(C) to keep the signature dominant over the unit-variance noise row
// regardless of channel width.
inline FeatureBundle<float> generate_features(const GroundingRequest& req, const FeatureShape& shape) {
  req.validate();
  shape.validate();
  std::uint64_t key = fnv1a64(req.prompt, fnv1a64(req.image_id, fnv1a64_u64(req.seed)));
  Philox gen(key);
  FeatureBundle<float> b;
  b.f_img = gen.normal_matrix<float>(shape.n, shape.c);
  b.f_query = gen.normal_matrix<float>(shape.l_query, shape.c);
  b.f_decoder = gen.normal_matrix<float>(shape.l_decoder, shape.c);
  const float amp = 2.0f * std::sqrt(static_cast<float>(shape.c));
  std::vector<std::string> phrases = text::split_ws(req.prompt);
  for (std::size_t i = 0; i < phrases.size(); ++i) {
    Mat<float> dir = signature_direction(phrases[i], shape.c);
    auto li = static_cast<Eigen::Index>(i);
    b.f_query.row(li % shape.l_query) += amp * dir.row(0);
    b.f_decoder.row(li % shape.l_decoder) += amp * dir.row(0);
    // redundant half-amplitude copies in two extra rows per stream
    for (int extra = 0; extra < 2; ++extra) {
      b.f_query.row(static_cast<Eigen::Index>(gen.next_below(static_cast<std::uint64_t>(shape.l_query)))) +=
          0.5f * amp * dir.row(0);
      b.f_decoder.row(static_cast<Eigen::Index>(gen.next_below(static_cast<std::uint64_t>(shape.l_decoder)))) +=
          0.5f * amp * dir.row(0);
    }
  }
  return b;
}

// Feature bundle file: magic "GVLF", one version byte, u32 little-endian
// header length, UTF-8 JSON header, then f_img / f_query / f_decoder as
// row-major little-endian f32.
inline constexpr char kBundleMagic[4] = {'G', 'V', 'L', 'F'};
inline constexpr std::uint8_t kBundleVersion = 1;

inline std::string bundle_to_bytes(const FeatureBundle<float>& b) {
  b.validate();
  nlohmann::ordered_json header;
  header["n"] = b.f_img.rows();
  header["l_query"] = b.f_query.rows();
  header["l_decoder"] = b.f_decoder.rows();
  header["c"] = b.f_img.cols();
  header["dtype"] = "f32";
  header["order"] = "row-major";
  std::string head = header.dump();
  std::string out;
  out.append(kBundleMagic, 4);
  out.push_back(static_cast<char>(kBundleVersion));
  put_u32_le(out, static_cast<std::uint32_t>(head.size()));
  out += head;
  append_matrix_f32_le(out, b.f_img);
  append_matrix_f32_le(out, b.f_query);
  append_matrix_f32_le(out, b.f_decoder);
  return out;
}

inline FeatureBundle<float> bundle_from_bytes(const std::string& bytes) {
  if (bytes.size() < 9) throw LoadError(LoadError::Kind::truncated, "feature file: shorter than its fixed header");
  if (bytes.compare(0, 4, kBundleMagic, 4) != 0)
    throw LoadError(LoadError::Kind::bad_magic, "feature file: magic bytes are not GVLF");
  if (static_cast<std::uint8_t>(bytes[4]) != kBundleVersion)
    throw LoadError(LoadError::Kind::bad_header, "feature file: unsupported version");
  std::uint32_t head_len = get_u32_le(bytes, 5);
  if (bytes.size() < 9 + static_cast<std::size_t>(head_len))
    throw LoadError(LoadError::Kind::truncated, "feature file: header extends past end of file");
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(9, head_len));
  } catch (const nlohmann::ordered_json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, std::string("feature file: header is not valid JSON: ") + e.what());
  }
  Eigen::Index n, lq, ld, c;
  try {
    n = header.at("n").get<Eigen::Index>();
    lq = header.at("l_query").get<Eigen::Index>();
    ld = header.at("l_decoder").get<Eigen::Index>();
    c = header.at("c").get<Eigen::Index>();
    if (header.at("dtype").get<std::string>() != "f32" || header.at("order").get<std::string>() != "row-major")
      throw LoadError(LoadError::Kind::bad_header, "feature file: unsupported dtype or layout");
  } catch (const nlohmann::ordered_json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, std::string("feature file: bad header fields: ") + e.what());
  }
  if (n < 1 || lq < 1 || ld < 1 || c < 1)
    throw LoadError(LoadError::Kind::bad_header, "feature file: non-positive dimensions");
  std::size_t want = 4u * static_cast<std::size_t>(c) * static_cast<std::size_t>(n + lq + ld);
  std::size_t have = bytes.size() - 9 - head_len;
  if (have != want)
    throw LoadError(LoadError::Kind::size_mismatch, "feature file: payload is " + std::to_string(have) +
                                                        " bytes, header promises " + std::to_string(want));
  std::size_t off = 9 + head_len;
  auto read_mat = [&](Eigen::Index rows, Eigen::Index cols) {
    Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) {
        m(i, j) = get_f32_le(bytes, off);
        off += 4;
      }
    return m;
  };
  FeatureBundle<float> b;
  b.f_img = read_mat(n, c);
  b.f_query = read_mat(lq, c);
  b.f_decoder = read_mat(ld, c);
  if (!all_finite(b.f_img) || !all_finite(b.f_query) || !all_finite(b.f_decoder))
    throw LoadError(LoadError::Kind::non_finite, "feature file: payload holds non-finite values");
  return b;
}

inline void save_features(const FeatureBundle<float>& b, const std::string& path) {
  write_file(path, bundle_to_bytes(b));
}

inline FeatureBundle<float> load_features(const std::string& path) { return bundle_from_bytes(read_file(path)); }

}  // namespace govla
