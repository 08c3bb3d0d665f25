#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "longdoc/errors.hpp"

namespace longdoc::binio {

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_integral_v<T>);
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw ValidationError("binary read: truncated stream");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  }
  return static_cast<T>(v);
}

inline void write_f64(std::ostream& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  write_le<std::uint64_t>(out, bits);
}

inline double read_f64(std::istream& in) {
  const std::uint64_t bits = read_le<std::uint64_t>(in);
  double value;
  std::memcpy(&value, &bits, sizeof(value));
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const std::uint32_t n = read_le<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw ValidationError("binary read: truncated string");
  return s;
}

inline void write_f64_vector(std::ostream& out, const std::vector<double>& v) {
  write_le<std::uint64_t>(out, v.size());
  for (double x : v) write_f64(out, x);
}

inline std::vector<double> read_f64_vector(std::istream& in) {
  const std::uint64_t n = read_le<std::uint64_t>(in);
  std::vector<double> v(n);
  for (std::uint64_t i = 0; i < n; ++i) v[i] = read_f64(in);
  return v;
}

}  // namespace longdoc::binio
