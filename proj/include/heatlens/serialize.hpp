#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "heatlens/tensor.hpp"

namespace heatlens {

static_assert(std::endian::native == std::endian::little,
              "RSVH serialization assumes a little-endian host");

// Binary tensor dump:
//   magic "RSVH", u32 format version, u32 dtype code (0=f32, 1=f64),
//   u32 rank, u64 extents[rank], then the little-endian payload.
inline constexpr std::uint32_t kRsvhVersion = 1;

namespace detail {

template <typename U>
void write_pod(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in, const char* what) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) fail_value("rsvh", std::string("truncated stream reading ") + what);
  return v;
}

}  // namespace detail

struct RsvhHeader {
  std::uint32_t version = 0;
  std::uint32_t dtype = 0;
  Shape shape;
};

inline RsvhHeader read_rsvh_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "RSVH", 4) != 0) fail_value("rsvh", "bad magic");
  RsvhHeader h;
  h.version = detail::read_pod<std::uint32_t>(in, "version");
  if (h.version != kRsvhVersion)
    fail_value("rsvh", "unsupported format version " + std::to_string(h.version));
  h.dtype = detail::read_pod<std::uint32_t>(in, "dtype");
  if (h.dtype > 1) fail_value("rsvh", "unknown dtype code " + std::to_string(h.dtype));
  const auto rank = detail::read_pod<std::uint32_t>(in, "rank");
  h.shape.resize(rank);
  for (auto& d : h.shape)
    d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in, "extent"));
  return h;
}

template <typename T>
void write_rsvh(std::ostream& out, const Tensor<T>& t) {
  out.write("RSVH", 4);
  detail::write_pod<std::uint32_t>(out, kRsvhVersion);
  detail::write_pod<std::uint32_t>(out, DtypeCode<T>::value);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::write_pod<std::uint64_t>(out, d);
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!out) fail_value("rsvh", "stream write failed");
}

template <typename T>
Tensor<T> read_rsvh(std::istream& in) {
  const RsvhHeader h = read_rsvh_header(in);
  if (h.dtype != DtypeCode<T>::value)
    fail_value("rsvh", std::string("stored dtype is not ") + DtypeCode<T>::name);
  std::vector<T> vals(numel(h.shape));
  in.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(vals.size() * sizeof(T)));
  if (!in) fail_value("rsvh", "truncated payload");
  return Tensor<T>(h.shape, std::move(vals));
}

// named tensor table: u64 count, then per entry u32 name length, name bytes,
// RSVH blob
template <typename T>
void write_tensor_table(std::ostream& out, const NamedTensors<T>& table) {
  detail::write_pod<std::uint64_t>(out, table.size());
  for (const auto& [name, tensor] : table) {
    detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_rsvh(out, tensor);
  }
}

template <typename T>
NamedTensors<T> read_tensor_table(std::istream& in) {
  const auto count = detail::read_pod<std::uint64_t>(in, "table size");
  NamedTensors<T> table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::read_pod<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) fail_value("rsvh", "truncated tensor name");
    table.emplace(std::move(name), read_rsvh<T>(in));
  }
  return table;
}

}  // namespace heatlens
