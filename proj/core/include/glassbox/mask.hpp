#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace glassbox {

/// H×W binary image, row-major, one byte per pixel (0 or 1).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& operator()(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t operator()(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool empty() const { return count() == 0; }

  /// Number of pixels set in both masks (dimensions must agree).
  std::size_t overlap(const Mask& other) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < bits.size() && i < other.bits.size(); ++i) n += (bits[i] & other.bits[i]);
    return n;
  }

  /// True when every set pixel of this mask is also set in `other`.
  bool subset_of(const Mask& other) const {
    for (std::size_t i = 0; i < bits.size(); ++i) {
      if (bits[i] && !other.bits[i]) return false;
    }
    return true;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

}  // namespace glassbox
