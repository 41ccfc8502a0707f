#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>
#include <utility>

// Little-endian primitives shared by the CIMG and SGSW containers.
namespace sarsgs::detail {

template <typename T>
void write_le(std::ostream &os, T value)
{
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) { std::swap(bytes[i], bytes[sizeof(T) - 1 - i]); }
  }
  os.write(reinterpret_cast<char const *>(bytes), sizeof(T));
}

template <typename T>
bool read_le(std::istream &is, T &value)
{
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char *>(bytes), sizeof(T))) { return false; }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) { std::swap(bytes[i], bytes[sizeof(T) - 1 - i]); }
  }
  std::memcpy(&value, bytes, sizeof(T));
  return true;
}

template <typename T>
T from_le_bytes(unsigned char const *bytes)
{
  unsigned char tmp[sizeof(T)];
  std::memcpy(tmp, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) { std::swap(tmp[i], tmp[sizeof(T) - 1 - i]); }
  }
  T value;
  std::memcpy(&value, tmp, sizeof(T));
  return value;
}

} // namespace sarsgs::detail
