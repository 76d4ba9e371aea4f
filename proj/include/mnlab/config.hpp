#pragma once

/// Flat `key = value` configuration files with `#` comments.

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mnlab/error.hpp"

namespace mnlab {

class Config {
 public:
  static Config parse(std::istream& in, const std::string& origin = "<input>") {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw InvalidConfig(origin + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot read config file '" + path + "'");
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }
  [[nodiscard]] const std::map<std::string, std::string>& values() const { return values_; }

  [[nodiscard]] std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw InvalidConfig("missing config key '" + key + "'");
    return it->second;
  }

  [[nodiscard]] double real(const std::string& key) const {
    const std::string v = str(key);
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw InvalidConfig("config key '" + key + "': '" + v + "' is not a number");
    }
    return out;
  }

  [[nodiscard]] long long integer(const std::string& key) const {
    const std::string v = str(key);
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw InvalidConfig("config key '" + key + "': '" + v + "' is not an integer");
    }
    return out;
  }

  [[nodiscard]] bool boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidConfig("config key '" + key + "': '" + v + "' is not a boolean");
  }

  /// Sorted `key = value` lines; parses back to an equal Config.
  [[nodiscard]] std::string dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mnlab
