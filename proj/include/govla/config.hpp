#pragma once

#include "govla/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace govla {

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// Flat key-value configuration. INI sections are flattened into dotted keys
// ("[train]\nlr = 1e-4" becomes "train.lr"), so overrides and the manifest
// snapshot share one namespace.
class Config {
 public:
  static Config parse_ini(const std::string& text) {
    Config cfg;
    std::string section;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      std::string line = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
      start = end == std::string::npos ? text.size() + 1 : end + 1;
      lineno += 1;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']' || t.size() < 3)
          throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
        continue;
      }
      std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
      cfg.set(section.empty() ? key : section + "." + key, value);
    }
    return cfg;
  }

  static Config load(const std::string& path) { return parse_ini(read_file(path)); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Accepts "key=value" as passed to --set.
  void apply_override(const std::string& assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override \"" + assignment + "\": expected key=value");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key \"" + key + "\"");
    return it->second;
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_int(key, it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      std::uint64_t v = std::stoull(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\" is not an unsigned integer: " + it->second);
    }
  }

  double get_real(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\" is not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config: key \"" + key + "\" is not a boolean: " + it->second);
  }

  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    std::string cur;
    std::string value = it->second + ",";
    for (char c : value) {
      if (c == ',') {
        std::string item = detail::trim(cur);
        cur.clear();
        if (item.empty()) continue;
        out.push_back(static_cast<int>(parse_int(key, item)));
      } else {
        cur += c;
      }
    }
    return out;
  }

  ordered_json to_json() const {
    ordered_json j = ordered_json::object();
    for (const auto& [key, value] : values_) j[key] = value;
    return j;
  }

 private:
  long parse_int(const std::string& key, const std::string& value) const {
    try {
      std::size_t pos = 0;
      long v = std::stol(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\" is not an integer: " + value);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace govla
