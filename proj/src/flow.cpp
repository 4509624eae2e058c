#include "dceiflow/flow.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "binary_io.hpp"

namespace dceiflow {

FlowField FlowField::constant(int width, int height, float du, float dv) {
  FlowField f(width, height);
  std::fill(f.u.values.begin(), f.u.values.end(), du);
  std::fill(f.v.values.begin(), f.v.values.end(), dv);
  return f;
}

Tensor flow_to_tensor(const FlowField& flow) {
  const int h = flow.height(), w = flow.width();
  std::vector<float> data(flow.u.values);
  data.insert(data.end(), flow.v.values.begin(), flow.v.values.end());
  return Tensor({1, 2, h, w}, std::move(data));
}

Tensor valid_to_tensor(const FlowField& flow) {
  std::vector<float> data(flow.valid.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = flow.valid.values[i] ? 1.0F : 0.0F;
  return Tensor({1, 1, flow.height(), flow.width()}, std::move(data));
}

FlowField flow_from_tensor(const Tensor& tensor) {
  const bool batched = tensor.rank() == 4 && tensor.dim(0) == 1;
  if (!(batched || tensor.rank() == 3) || tensor.dim(-3) != 2) {
    throw std::invalid_argument("flow tensor must be (1,2,H,W) or (2,H,W), got " + shape_to_string(tensor.shape()));
  }
  const int h = tensor.dim(-2), w = tensor.dim(-1);
  FlowField f(w, h);
  const auto data = tensor.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::copy_n(data.begin(), plane, f.u.values.begin());
  std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(plane), plane, f.v.values.begin());
  return f;
}

void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  binio::put<float>(out, kFloSentinel);
  binio::put<std::int32_t>(out, flow.width());
  binio::put<std::int32_t>(out, flow.height());
  for (std::size_t i = 0; i < flow.u.size(); ++i) {
    float u = flow.u.values[i], v = flow.v.values[i];
    if (!flow.valid.values[i]) {
      u = kUnknownFlow;
      v = kUnknownFlow;
    } else if (!std::isfinite(u) || !std::isfinite(v)) {
      throw std::invalid_argument("write_flo: non-finite flow at a valid pixel");
    }
    binio::put<float>(out, u);
    binio::put<float>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open flow file " + path.string());
  const std::string what = "flow file " + path.string();
  const float tag = binio::get<float>(in, what);
  if (tag != kFloSentinel) throw std::runtime_error(what + ": bad sentinel (not a .flo file)");
  const auto width = binio::get<std::int32_t>(in, what);
  const auto height = binio::get<std::int32_t>(in, what);
  if (width <= 0 || height <= 0 || width > (1 << 16) || height > (1 << 16)) {
    throw std::runtime_error(what + ": implausible size " + std::to_string(width) + "x" + std::to_string(height));
  }
  FlowField f(width, height);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    const float u = binio::get<float>(in, what);
    const float v = binio::get<float>(in, what);
    f.u.values[i] = u;
    f.v.values[i] = v;
    const bool known = std::isfinite(u) && std::isfinite(v) && std::abs(u) < 1e9F && std::abs(v) < 1e9F;
    f.valid.values[i] = known ? 1 : 0;
  }
  return f;
}

}  // namespace dceiflow
