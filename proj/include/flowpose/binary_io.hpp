#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "flowpose/error.hpp"

namespace flowpose::binary {

namespace detail {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | (v & 0xFF));
      v = static_cast<U>(v >> 8);
    }
    return out;
  }
}

template <typename U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  os.write(bytes, sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
  char bytes[sizeof(U)];
  if (!is.read(bytes, sizeof(U))) throw FormatError(std::string("truncated file while reading ") + what);
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return to_little(v);
}

}  // namespace detail

inline void write_u32(std::ostream& os, std::uint32_t v) { detail::put(os, v); }
inline void write_i32(std::ostream& os, std::int32_t v) { detail::put(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f32(std::ostream& os, float v) { detail::put(os, std::bit_cast<std::uint32_t>(v)); }
inline void write_f64(std::ostream& os, double v) { detail::put(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
  return detail::get<std::uint32_t>(is, what);
}
inline std::int32_t read_i32(std::istream& is, const char* what = "i32") {
  return std::bit_cast<std::int32_t>(detail::get<std::uint32_t>(is, what));
}
inline float read_f32(std::istream& is, const char* what = "f32") {
  return std::bit_cast<float>(detail::get<std::uint32_t>(is, what));
}
inline double read_f64(std::istream& is, const char* what = "f64") {
  return std::bit_cast<double>(detail::get<std::uint64_t>(is, what));
}

/// Reads exactly `magic.size()` bytes and compares them to `magic`.
inline void expect_magic(std::istream& is, const std::string& magic, const char* format) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
    throw FormatError(std::string("bad magic: not a ") + format + " file");
}

}  // namespace flowpose::binary
