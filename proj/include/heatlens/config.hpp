#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <string>

namespace heatlens {

using ConfigMap = std::map<std::string, std::string>;

// UTF-8 lines of `key = value`; '#' starts a comment; blank lines ignored.
// Malformed lines fail with their line number.
ConfigMap parse_config_text(std::istream& in);
ConfigMap parse_config_file(const std::string& path);

// sorted `key = value` lines, one per key
std::string canonical_config_text(const ConfigMap& cfg);

// Consume-tracking view over a parsed config. Each consumer takes the keys it
// understands; expect_empty() then rejects anything left over, so unknown
// keys fail fast.
class ConfigView {
 public:
  explicit ConfigView(ConfigMap m) : left_(std::move(m)) {}

  std::optional<std::string> take(const std::string& key);
  std::string take_str(const std::string& key, const std::string& fallback);
  long take_long(const std::string& key, long fallback);
  double take_double(const std::string& key, double fallback);
  bool take_bool(const std::string& key, bool fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);

  void expect_empty() const;
  bool empty() const { return left_.empty(); }

 private:
  ConfigMap left_;
};

}  // namespace heatlens
