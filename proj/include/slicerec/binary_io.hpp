#pragma once

// Little-endian primitives for the binary containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "slicerec/error.hpp"

namespace slicerec::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(std::string("truncated file reading ") + what);
  return v;
}

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) { os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  if (!is.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("truncated file reading ") + what);
  }
}

inline void put_string16(std::ostream& os, const std::string& s) {
  if (s.size() > 0xFFFF) throw FormatError("name too long");
  put<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline std::string get_string16(std::istream& is, const char* what) {
  const auto n = get<std::uint16_t>(is, what);
  std::string s(n, '\0');
  get_bytes(is, s.data(), n, what);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& kind) {
  char buf[8];
  if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0) throw FormatError("not a " + kind + " file (bad magic)");
}

}  // namespace slicerec::binio
