#include "heatlens/config.hpp"

#include <fstream>
#include <stdexcept>

namespace heatlens {

namespace {

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_line(std::size_t lineno, const std::string& why) {
  throw std::runtime_error("config line " + std::to_string(lineno) + ": " + why);
}

}  // namespace

ConfigMap parse_config_text(std::istream& in) {
  ConfigMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = strip(line);
    if (t.empty()) continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) bad_line(lineno, "expected `key = value`");
    const std::string key = strip(t.substr(0, eq));
    const std::string val = strip(t.substr(eq + 1));
    if (key.empty()) bad_line(lineno, "empty key");
    if (out.count(key)) bad_line(lineno, "duplicate key '" + key + "'");
    out[key] = val;
  }
  return out;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  return parse_config_text(f);
}

std::string canonical_config_text(const ConfigMap& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

std::optional<std::string> ConfigView::take(const std::string& key) {
  auto it = left_.find(key);
  if (it == left_.end()) return std::nullopt;
  std::string v = it->second;
  left_.erase(it);
  return v;
}

std::string ConfigView::take_str(const std::string& key, const std::string& fallback) {
  auto v = take(key);
  return v ? *v : fallback;
}

long ConfigView::take_long(const std::string& key, long fallback) {
  auto v = take(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    long out = std::stol(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants an integer, got '" + *v + "'");
  }
}

double ConfigView::take_double(const std::string& key, double fallback) {
  auto v = take(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    double out = std::stod(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants a number, got '" + *v + "'");
  }
}

bool ConfigView::take_bool(const std::string& key, bool fallback) {
  auto v = take(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "off") return false;
  throw std::runtime_error("config: key '" + key + "' wants a boolean, got '" + *v + "'");
}

std::uint64_t ConfigView::take_u64(const std::string& key, std::uint64_t fallback) {
  auto v = take(key);
  if (!v) return fallback;
  try {
    std::size_t pos = 0;
    unsigned long long out = std::stoull(*v, &pos);
    if (pos != v->size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' wants an unsigned integer, got '" + *v +
                             "'");
  }
}

void ConfigView::expect_empty() const {
  if (left_.empty()) return;
  std::string keys;
  for (const auto& [k, v] : left_) {
    if (!keys.empty()) keys += ", ";
    keys += k;
  }
  throw std::runtime_error("config: unknown keys: " + keys);
}

}  // namespace heatlens
