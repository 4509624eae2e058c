#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dceiflow/tensor.hpp"

namespace dceiflow {

/// Interleaved RGB image with channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0F) {}

  float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// (1, 3, H, W) planar tensor.
Tensor image_to_tensor(const Image& image);

/// Binary PPM (P6), maxval 255. Values are rounded to the nearest level.
void write_ppm(const std::filesystem::path& path, const Image& image);
/// Raw 8-bit RGB bytes as P6.
void write_ppm_bytes(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
/// Reads P6 with maxval < 256.
Image read_ppm(const std::filesystem::path& path);

}  // namespace dceiflow
