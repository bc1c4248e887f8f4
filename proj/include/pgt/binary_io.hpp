#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "pgt/errors.hpp"

namespace pgt::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError("unexpected end of file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("implausible string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("unexpected end of file");
  return s;
}

}  // namespace pgt::io
