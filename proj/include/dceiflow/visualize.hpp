#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "dceiflow/flow.hpp"

namespace dceiflow {

/// Color-wheel rendering: hue follows atan2(v, u), saturation the magnitude
/// divided by max_magnitude (clamped to 1), value is 1, so zero flow is
/// white. Without max_magnitude the 99th percentile of valid magnitudes is
/// used (1 when that is zero). Invalid pixels are black. Returns
/// interleaved 8-bit RGB.
std::vector<std::uint8_t> flow_to_color(const FlowField& flow, std::optional<double> max_magnitude = std::nullopt);

void write_flow_ppm(const std::filesystem::path& path, const FlowField& flow,
                    std::optional<double> max_magnitude = std::nullopt);

}  // namespace dceiflow
