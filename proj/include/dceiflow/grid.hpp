#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dceiflow {

/// Row-major H x W array of T.
template <typename T>
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<T> values;

  Grid() = default;
  Grid(int w, int h, T fill = T{}) : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
    if (w < 0 || h < 0) throw std::invalid_argument("grid extents must be non-negative");
  }

  T& operator()(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int y, int x) const { return x >= 0 && y >= 0 && x < width && y < height; }
  std::size_t size() const { return values.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using BinaryMask = Grid<std::uint8_t>;

inline std::size_t count_set(const BinaryMask& mask) {
  std::size_t n = 0;
  for (auto v : mask.values) n += v != 0;
  return n;
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("mask size mismatch");
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = (a.values[i] && b.values[i]) ? 1 : 0;
  return out;
}

inline BinaryMask mask_not(const BinaryMask& a) {
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] ? 0 : 1;
  return out;
}

}  // namespace dceiflow
