#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace heatlens {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] inline void fail_shape(const std::string& op, const std::string& msg) {
  throw std::invalid_argument(op + ": " + msg);
}

[[noreturn]] inline void fail_value(const std::string& op, const std::string& msg) {
  throw std::runtime_error(op + ": " + msg);
}

// NaN/Inf is an error state, never a silently propagated value. Ops whose
// math can leave the finite range (exp, div, sqrt) call this on their output.
template <typename T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) fail_value(op, "produced a non-finite value");
}

template <typename T>
struct DtypeCode;

template <>
struct DtypeCode<float> {
  static constexpr std::uint32_t value = 0;
  static constexpr const char* name = "f32";
};

template <>
struct DtypeCode<double> {
  static constexpr std::uint32_t value = 1;
  static constexpr const char* name = "f64";
};

}  // namespace heatlens
