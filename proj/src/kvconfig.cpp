#include "goodlab/kvconfig.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "goodlab/errors.hpp"

namespace goodlab {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

KvConfig KvConfig::parse(std::string_view text, std::string source) {
  KvConfig cfg;
  cfg.source_ = std::move(source);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view raw = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": empty key");
    }
    if (cfg.values_.count(key)) {
      throw ConfigError(cfg.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    cfg.values_.emplace(std::move(key), std::move(value));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void KvConfig::missing(const std::string& key) const {
  throw ConfigError(source_ + ": missing required key '" + key + "'");
}

std::string KvConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) missing(key);
  return it->second;
}

double KvConfig::get_double(const std::string& key) const {
  return parse_double(key, get_string(key));
}

long long KvConfig::get_int(const std::string& key) const {
  const std::string text = get_string(key);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

bool KvConfig::get_bool(const std::string& key) const {
  const std::string text = get_string(key);
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

std::vector<double> KvConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get_string(key))) out.push_back(parse_double(key, item));
  return out;
}

std::vector<std::string> KvConfig::get_strings(const std::string& key) const {
  return split_list(get_string(key));
}

std::string KvConfig::get_string(const std::string& key, std::string fallback) const {
  return has(key) ? get_string(key) : fallback;
}
double KvConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
long long KvConfig::get_int(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}
bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void KvConfig::require_known(std::initializer_list<std::string_view> allowed) const {
  require_known(std::vector<std::string>(allowed.begin(), allowed.end()));
}

void KvConfig::require_known(const std::vector<std::string>& allowed) const {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : values_) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) unknown.push_back(key);
  }
  if (unknown.empty()) return;
  std::string msg = source_ + ": invalid config key(s):";
  for (const auto& k : unknown) msg += " '" + k + "'";
  throw ConfigError(msg);
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + " = " + value + "\n";
  return out;
}

}  // namespace goodlab
