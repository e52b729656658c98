#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace gap::config {

// JSON-backed configuration with dotted-path access and `--set key=value`
// overrides. Unknown keys are allowed; consumers read with defaults.
class Config {
 public:
  Config() : root_(nlohmann::json::object()) {}
  static Config from_file(const std::string& path);

  // "a.b.c=value"; the value is parsed as JSON when possible, else string.
  void apply_override(const std::string& kv);

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::vector<std::string> get_string_list(
      const std::string& key, const std::vector<std::string>& fallback) const;

  void set(const std::string& key, nlohmann::json value);
  bool has(const std::string& key) const;

  std::string dump() const { return root_.dump(2); }
  std::uint64_t hash() const;
  const nlohmann::json& root() const { return root_; }

 private:
  const nlohmann::json* find(const std::string& key) const;
  nlohmann::json root_;
};

}  // namespace gap::config
