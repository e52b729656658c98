#include "gap/config.hpp"

#include <fstream>
#include <sstream>

#include "gap/common.hpp"

namespace gap::config {

using nlohmann::json;

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("config: cannot open " + path);
  Config c;
  try {
    f >> c.root_;
  } catch (const json::exception& e) {
    throw ValidationError("config: bad JSON in " + path + ": " + e.what());
  }
  return c;
}

void Config::apply_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("config: override must look like key=value: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // plain string
  }
  set(key, std::move(value));
}

void Config::set(const std::string& key, json value) {
  json* node = &root_;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ValidationError("config: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object())
      (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = std::move(value);
}

const json* Config::find(const std::string& key) const {
  const json* node = &root_;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) return nullptr;
    node = &(*node)[part];
  }
  return node;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

double Config::get_double(const std::string& key, double fallback) const {
  const json* n = find(key);
  return n && n->is_number() ? n->get<double>() : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  const json* n = find(key);
  return n && n->is_number() ? n->get<int>() : fallback;
}

std::uint64_t Config::get_u64(const std::string& key,
                              std::uint64_t fallback) const {
  const json* n = find(key);
  return n && n->is_number() ? n->get<std::uint64_t>() : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const json* n = find(key);
  return n && n->is_boolean() ? n->get<bool>() : fallback;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  const json* n = find(key);
  return n && n->is_string() ? n->get<std::string>() : fallback;
}

std::vector<std::string> Config::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
  const json* n = find(key);
  if (!n || !n->is_array()) return fallback;
  return n->get<std::vector<std::string>>();
}

std::uint64_t Config::hash() const {
  const std::string s = root_.dump();
  return fnv1a64(s.data(), s.size());
}

}  // namespace gap::config
