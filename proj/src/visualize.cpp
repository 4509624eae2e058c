#include "dceiflow/visualize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dceiflow/image.hpp"

namespace dceiflow {

namespace {

double percentile99(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(values.size()))) - 1;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
  return values[k];
}

std::uint8_t to_byte(double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

}  // namespace

std::vector<std::uint8_t> flow_to_color(const FlowField& flow, std::optional<double> max_magnitude) {
  const std::size_t n = flow.u.size();
  std::vector<double> magnitudes;
  for (std::size_t i = 0; i < n; ++i) {
    if (!flow.valid.values[i]) continue;
    const double m = std::hypot(static_cast<double>(flow.u.values[i]), static_cast<double>(flow.v.values[i]));
    if (!std::isfinite(m)) throw std::invalid_argument("flow_to_color: non-finite flow");
    magnitudes.push_back(m);
  }
  double scale = max_magnitude ? *max_magnitude : percentile99(magnitudes);
  if (max_magnitude && !(scale > 0.0)) throw std::invalid_argument("flow_to_color: max magnitude must be positive");
  if (!(scale > 0.0)) scale = 1.0;

  std::vector<std::uint8_t> rgb(n * 3, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!flow.valid.values[i]) continue;
    const double u = flow.u.values[i], v = flow.v.values[i];
    const double saturation = std::min(1.0, std::hypot(u, v) / scale);
    double hue = std::atan2(v, u) / (2.0 * M_PI);
    if (hue < 0.0) hue += 1.0;
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const double f = h6 - std::floor(h6);
    const double p = 1.0 - saturation;
    const double q = 1.0 - saturation * f;
    const double t = 1.0 - saturation * (1.0 - f);
    double r = 1.0, g = 1.0, b = 1.0;
    switch (sector) {
      case 0: r = 1.0, g = t, b = p; break;
      case 1: r = q, g = 1.0, b = p; break;
      case 2: r = p, g = 1.0, b = t; break;
      case 3: r = p, g = q, b = 1.0; break;
      case 4: r = t, g = p, b = 1.0; break;
      default: r = 1.0, g = p, b = q; break;
    }
    rgb[i * 3] = to_byte(r);
    rgb[i * 3 + 1] = to_byte(g);
    rgb[i * 3 + 2] = to_byte(b);
  }
  return rgb;
}

void write_flow_ppm(const std::filesystem::path& path, const FlowField& flow, std::optional<double> max_magnitude) {
  write_ppm_bytes(path, flow.width(), flow.height(), flow_to_color(flow, max_magnitude));
}

}  // namespace dceiflow
