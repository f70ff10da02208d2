#pragma once

#include "govla/common.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace govla {

// Written next to every command's outputs: enough to re-run the command and
// check that the inputs were the same bytes.
struct RunManifest {
  std::string command;
  ordered_json config = ordered_json::object();
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> input_hashes;  // path -> content hash
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;

  void add_input(const std::string& path) { input_hashes.emplace_back(path, to_hex(fnv1a64(read_file(path)))); }

  void add_input_bytes(const std::string& label, const std::string& bytes) {
    input_hashes.emplace_back(label, to_hex(fnv1a64(bytes)));
  }

  ordered_json to_json() const {
    ordered_json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["inputs"] = ordered_json::object();
    for (const auto& [path, hash] : input_hashes) j["inputs"][path] = hash;
    j["outputs"] = outputs;
    j["wall_seconds"] = wall_seconds;
    return j;
  }

  void write(const std::string& path) const { write_file(path, to_json().dump(2) + "\n"); }
};

}  // namespace govla
