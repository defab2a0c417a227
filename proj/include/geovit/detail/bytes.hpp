#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "geovit/errors.hpp"

namespace geovit::detail {

// little-endian byte packing shared by the tile and checkpoint containers

inline void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& b, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, u);
}

inline void put_f64(std::string& b, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(b, u);
}

struct ByteReader {
  const unsigned char* p;
  size_t size;
  const char* what;  // container name for error messages
  size_t off = 0;

  ByteReader(const unsigned char* data, size_t n, const char* name) : p(data), size(n), what(name) {}

  void need(size_t n) const {
    if (off + n > size) throw TruncatedError(std::string(what) + " ends mid-record");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(p[off] | (p[off + 1] << 8));
    off += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + static_cast<size_t>(i)]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + static_cast<size_t>(i)]) << (8 * i);
    off += 8;
    return v;
  }
  float f32() {
    uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  double f64() {
    uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
};

}  // namespace geovit::detail
