#pragma once

// Line-oriented "key = value" text used by model, run and manifest headers.
// '#' starts a comment; blank lines are ignored; keys are unique.

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dualdis/layer_spec.hpp"

namespace dualdis {

class ConfigError : public Error {
 public:
  using Error::Error;
};

class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source = "config") {
    KeyValues kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      std::string key = detail::trim(std::string_view(t).substr(0, eq));
      std::string value = detail::trim(std::string_view(t).substr(eq + 1));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      kv.order_.push_back(key);
      kv.values_[key] = std::move(value);
    }
    return kv;
  }

  static KeyValues read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
    used_.insert(key);
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  int get_int(const std::string& key) const { return static_cast<int>(parse_number<long long>(key, get(key))); }
  long long get_int64(const std::string& key) const { return parse_number<long long>(key, get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
  double get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> get_list(const std::string& key) const {
    std::vector<std::string> out;
    const std::string& v = get(key);
    std::size_t start = 0;
    if (detail::trim(v).empty()) return out;
    while (start <= v.size()) {
      std::size_t comma = v.find(',', start);
      if (comma == std::string::npos) comma = v.size();
      out.push_back(detail::trim(std::string_view(v).substr(start, comma - start)));
      start = comma + 1;
    }
    return out;
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : get_list(key)) out.push_back(parse_number<double>(key, s));
    return out;
  }

  /// Throws if any key was never read.
  void reject_unused(const std::string& source) const {
    for (const auto& k : order_) {
      if (!used_.count(k)) throw ConfigError(source + ": unknown key '" + k + "'");
    }
  }

  const std::vector<std::string>& keys() const { return order_; }

 private:
  template <class N>
  static N parse_number(const std::string& key, const std::string& s) {
    N v{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end) throw ConfigError("key '" + key + "': invalid number '" + s + "'");
    return v;
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace dualdis
