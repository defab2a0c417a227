#pragma once

#include <cstdint>
#include <vector>

namespace geovit {

/// Pixels carrying this label are excluded from losses and metrics.
inline constexpr int kIgnoreIndex = 255;

/// Integer label raster, row-major. Valid class labels live in [0, 255);
/// 255 marks ignored pixels.
struct ClassMap {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> v;

  ClassMap() = default;
  ClassMap(int64_t height, int64_t width, uint8_t fill = 0)
      : h(height), w(width), v(static_cast<size_t>(height * width), fill) {}

  uint8_t& at(int64_t y, int64_t x) { return v[static_cast<size_t>(y * w + x)]; }
  uint8_t at(int64_t y, int64_t x) const { return v[static_cast<size_t>(y * w + x)]; }
};

}  // namespace geovit
