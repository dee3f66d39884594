#pragma once

#include <filesystem>
#include <initializer_list>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace goodlab {

// Flat key-value configuration file.
//
//   # comment
//   key = value
//   list_key = 0.1, 0.2, 0.3
//
// Keys are case sensitive. Numbers use plain decimal notation. A key may only
// appear once. Unknown keys are reported by name via require_known().
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view text, std::string source = "<string>");
  static KvConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  std::string get_string(const std::string& key, std::string fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ConfigError listing every key not in `allowed`.
  void require_known(std::initializer_list<std::string_view> allowed) const;
  void require_known(const std::vector<std::string>& allowed) const;

  // Deterministic text form (sorted keys).
  std::string serialize() const;

  const std::map<std::string, std::string>& entries() const { return values_; }
  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void missing(const std::string& key) const;
  std::map<std::string, std::string> values_;
  std::string source_ = "<empty>";
};

}  // namespace goodlab
