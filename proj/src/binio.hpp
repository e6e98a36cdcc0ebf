#pragma once

// Private little-endian stream helpers shared by the binary containers.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace featage::io::detail {

inline void put_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

inline void put_str(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw std::invalid_argument("binio: string too long to serialize");
  put_u16(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

[[noreturn]] inline void fail_truncated(const std::string& what) {
  throw std::runtime_error(what + ": truncated or corrupt");
}

inline void get_bytes(std::istream& is, void* dst, size_t n, const std::string& what) {
  is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) fail_truncated(what);
}

inline uint16_t get_u16(std::istream& is, const std::string& what) {
  unsigned char b[2];
  get_bytes(is, b, 2, what);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

inline uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline uint64_t get_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  get_bytes(is, b, 8, what);
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float get_f32(std::istream& is, const std::string& what) {
  uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double get_f64(std::istream& is, const std::string& what) {
  uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string get_str(std::istream& is, const std::string& what) {
  uint16_t n = get_u16(is, what);
  std::string s(n, '\0');
  if (n) get_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace featage::io::detail
