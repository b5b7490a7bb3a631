#pragma once

// Little-endian scalar and array IO shared by the checkpoint formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "nat/types.hpp"

namespace nat::io {

template <typename T>
T byteswap_if_big(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw InputError("truncated checkpoint");
  return byteswap_if_big(v);
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes()));
  } else {
    for (const T& x : xs) write_le(out, x);
  }
}

template <typename T>
void read_array(std::istream& in, std::span<T> xs) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(xs.data()), static_cast<std::streamsize>(xs.size_bytes()))) {
      throw InputError("truncated checkpoint");
    }
  } else {
    for (T& x : xs) x = read_le<T>(in);
  }
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
  char buf[8] = {};
  if (!in.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw InputError("not a " + what + " file");
}

/// FNV-1a, used for config fingerprints in file headers.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace nat::io
