#pragma once

// Little-endian scalar I/O shared by the binary file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include <fmt/format.h>

#include "smm/error.hpp"

namespace smm::binary {

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& in, const char* file_kind, const char* what) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) {
    throw Error(ErrorKind::input, fmt::format("{} truncated while reading {}", file_kind, what));
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

inline std::string get_string(std::istream& in, std::size_t length, const char* file_kind,
                              const char* what) {
  std::string s(length, '\0');
  if (length > 0 && !in.read(s.data(), static_cast<std::streamsize>(length))) {
    throw Error(ErrorKind::input, fmt::format("{} truncated while reading {}", file_kind, what));
  }
  return s;
}

}  // namespace smm::binary
