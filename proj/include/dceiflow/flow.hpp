#pragma once

#include <filesystem>

#include "dceiflow/grid.hpp"
#include "dceiflow/tensor.hpp"

namespace dceiflow {

/// Per-pixel displacement (u along columns, v along rows) in full-resolution
/// pixels, with a validity mask.
struct FlowField {
  Grid<float> u;
  Grid<float> v;
  BinaryMask valid;

  FlowField() = default;
  FlowField(int width, int height) : u(width, height), v(width, height), valid(width, height, 1) {}

  int width() const { return u.width; }
  int height() const { return u.height; }

  static FlowField constant(int width, int height, float du, float dv);
};

/// (1, 2, H, W) tensor, channel 0 = u, channel 1 = v.
Tensor flow_to_tensor(const FlowField& flow);
/// Validity as a (1, 1, H, W) tensor of 0/1.
Tensor valid_to_tensor(const FlowField& flow);
/// Inverse of flow_to_tensor for a (1, 2, H, W) or (2, H, W) tensor; every
/// pixel is marked valid.
FlowField flow_from_tensor(const Tensor& tensor);

/// Middlebury .flo: f32 202021.25, i32 width, i32 height, then interleaved
/// (u, v) f32 pairs in row-major order, little-endian. Invalid pixels are
/// written as 1e10 and read back as invalid.
void write_flo(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flo(const std::filesystem::path& path);

inline constexpr float kFloSentinel = 202021.25F;
inline constexpr float kUnknownFlow = 1e10F;

}  // namespace dceiflow
