#pragma once

#include "govla/adapter.hpp"
#include "govla/common.hpp"
#include "govla/nn.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace govla {

// Named-tensor container used for every saved model in the project.
// Layout: magic "GVCK", one version byte, u32 little-endian header length,
// UTF-8 JSON header {config, tensors:[{name,rows,cols}...]}, then the tensor
// payloads in listed order as row-major little-endian f32. Serialization is
// canonical: save -> load -> save reproduces the bytes exactly.
struct Checkpoint {
  static constexpr char kMagic[4] = {'G', 'V', 'C', 'K'};
  static constexpr std::uint8_t kVersion = 1;

  ordered_json config;
  std::vector<std::pair<std::string, Mat<float>>> tensors;

  void add(const std::string& name, const Mat<float>& m) { tensors.emplace_back(name, m); }

  const Mat<float>& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw LoadError(LoadError::Kind::bad_header, "checkpoint: missing tensor " + name);
  }

  std::string to_bytes() const {
    ordered_json header;
    header["config"] = config;
    header["tensors"] = ordered_json::array();
    for (const auto& [name, m] : tensors) {
      header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    }
    std::string head = header.dump();
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(kVersion));
    put_u32_le(out, static_cast<std::uint32_t>(head.size()));
    out += head;
    for (const auto& [name, m] : tensors) append_matrix_f32_le(out, m);
    return out;
  }

  static Checkpoint from_bytes(const std::string& bytes) {
    if (bytes.size() < 9) throw LoadError(LoadError::Kind::truncated, "checkpoint: shorter than its fixed header");
    if (bytes.compare(0, 4, kMagic, 4) != 0)
      throw LoadError(LoadError::Kind::bad_magic, "checkpoint: magic bytes are not GVCK");
    if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
      throw LoadError(LoadError::Kind::bad_header, "checkpoint: unsupported version");
    std::uint32_t head_len = get_u32_le(bytes, 5);
    if (bytes.size() < 9 + static_cast<std::size_t>(head_len))
      throw LoadError(LoadError::Kind::truncated, "checkpoint: header extends past end of file");
    ordered_json header;
    try {
      header = ordered_json::parse(bytes.substr(9, head_len));
    } catch (const ordered_json::exception& e) {
      throw LoadError(LoadError::Kind::bad_header, std::string("checkpoint: header is not valid JSON: ") + e.what());
    }
    if (!header.contains("config") || !header.contains("tensors"))
      throw LoadError(LoadError::Kind::bad_header, "checkpoint: header lacks config or tensors");
    Checkpoint ck;
    ck.config = header["config"];
    std::size_t offset = 9 + head_len;
    std::size_t expected = 0;
    for (const auto& t : header["tensors"])
      expected += 4 * t.at("rows").get<std::size_t>() * t.at("cols").get<std::size_t>();
    if (bytes.size() - offset != expected)
      throw LoadError(LoadError::Kind::size_mismatch,
                      "checkpoint: payload is " + std::to_string(bytes.size() - offset) + " bytes, header promises " +
                          std::to_string(expected));
    for (const auto& t : header["tensors"]) {
      auto rows = t.at("rows").get<Eigen::Index>();
      auto cols = t.at("cols").get<Eigen::Index>();
      Mat<float> m(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
          m(i, j) = get_f32_le(bytes, offset);
          offset += 4;
        }
      if (!all_finite(m))
        throw LoadError(LoadError::Kind::non_finite, "checkpoint: tensor " + t.at("name").get<std::string>() +
                                                         " holds non-finite values");
      ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
    }
    return ck;
  }

  void save(const std::string& path) const { write_file(path, to_bytes()); }
  static Checkpoint load(const std::string& path) { return from_bytes(read_file(path)); }
};

// Snapshot of any param-bearing module, used both for checkpoints and for the
// byte-level freeze audit.
template <class S>
inline Checkpoint snapshot_params(const ParamRefs<S>& params, ordered_json config) {
  Checkpoint ck;
  ck.config = std::move(config);
  for (const Param<S>* p : params) ck.add(p->name, p->value.template cast<float>());
  return ck;
}

// Restores values into an already-built module; the tensor inventory must
// match the parameter list exactly, names and shapes both.
template <class S>
inline void restore_params(const ParamRefs<S>& params, const Checkpoint& ck) {
  if (params.size() != ck.tensors.size())
    throw LoadError(LoadError::Kind::bad_header, "checkpoint: expected " + std::to_string(params.size()) +
                                                     " tensors, found " + std::to_string(ck.tensors.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = ck.tensors[i];
    Param<S>* p = params[i];
    if (name != p->name)
      throw LoadError(LoadError::Kind::bad_header, "checkpoint: tensor " + name + " where " + p->name + " expected");
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw LoadError(LoadError::Kind::size_mismatch, "checkpoint: tensor " + name + " has the wrong shape");
    p->value = m.template cast<S>();
    p->grad = Mat<S>::Zero(m.rows(), m.cols());
  }
}

inline Checkpoint adapter_checkpoint(AdapterState<float>& adapter) {
  ordered_json cfg;
  cfg["N"] = adapter.config().n;
  cfg["C"] = adapter.config().c;
  cfg["D"] = adapter.config().depth;
  cfg["H"] = adapter.config().heads;
  cfg["d_lm"] = adapter.config().d_lm;
  return snapshot_params<float>(adapter.params(), cfg);
}

inline AdapterState<float> adapter_from_checkpoint(const Checkpoint& ck) {
  AdapterConfig cfg;
  try {
    cfg.n = ck.config.at("N").get<Eigen::Index>();
    cfg.c = ck.config.at("C").get<Eigen::Index>();
    cfg.depth = ck.config.at("D").get<Eigen::Index>();
    cfg.heads = ck.config.at("H").get<int>();
    cfg.d_lm = ck.config.at("d_lm").get<Eigen::Index>();
  } catch (const ordered_json::exception& e) {
    throw LoadError(LoadError::Kind::bad_header, std::string("checkpoint: bad adapter config: ") + e.what());
  }
  AdapterState<float> adapter(cfg, 0);
  restore_params<float>(adapter.params(), ck);
  return adapter;
}

}  // namespace govla
