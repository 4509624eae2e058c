#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "binary_io.hpp"
#include "dceiflow/network.hpp"

namespace dceiflow {

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'C', 'E', 'I'};

struct StoredParameter {
  Shape shape;
  std::vector<float> data;
};

const StoredParameter& find(const std::map<std::string, StoredParameter>& stored, const std::string& name,
                            const std::string& what) {
  auto it = stored.find(name);
  if (it == stored.end()) throw std::runtime_error(what + ": missing parameter " + name);
  return it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DCEIFlowNet& net) {
  const auto params = net.parameters();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, value] : params) {
    binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::put<std::uint8_t>(out, static_cast<std::uint8_t>(value.rank()));
    for (int extent : value.shape()) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
    for (float v : value.data()) binio::put<float>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

DCEIFlowNet load_checkpoint(const std::filesystem::path& path, int iterations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string what = "checkpoint " + path.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kCheckpointMagic)) throw std::runtime_error(what + ": bad magic");
  const auto version = binio::get<std::uint32_t>(in, what);
  if (version != kCheckpointVersion) throw std::runtime_error(what + ": unsupported version " + std::to_string(version));
  const auto count = binio::get<std::uint32_t>(in, what);

  std::map<std::string, StoredParameter> stored;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_length = binio::get<std::uint16_t>(in, what);
    std::string name(name_length, '\0');
    in.read(name.data(), name_length);
    if (in.gcount() != name_length) throw std::runtime_error(what + ": truncated file");
    const auto rank = binio::get<std::uint8_t>(in, what);
    StoredParameter p;
    for (int d = 0; d < rank; ++d) p.shape.push_back(static_cast<int>(binio::get<std::uint32_t>(in, what)));
    p.data.resize(shape_numel(p.shape));
    for (float& v : p.data) v = binio::get<float>(in, what);
    if (!stored.emplace(name, std::move(p)).second) throw std::runtime_error(what + ": duplicate parameter " + name);
  }

  // Architecture hyper-parameters follow from the stored shapes.
  ModelConfig cfg;
  cfg.iterations = iterations;
  cfg.feature_channels = find(stored, "image_encoder.head.weight", what).shape.at(0);
  cfg.gru_hidden = find(stored, "update.hidden_init.weight", what).shape.at(0);
  cfg.event_bins = find(stored, "event_encoder.stem.weight", what).shape.at(1) / 2;
  cfg.fusion = stored.contains("fusion.image_conv.weight") ? FusionVariant::conv : FusionVariant::add;
  const int window = (find(stored, "update.motion1.weight", what).shape.at(1) - 2) / cfg.pyramid_levels;
  const int diameter = static_cast<int>(std::lround(std::sqrt(static_cast<double>(window))));
  if (diameter * diameter != window || diameter % 2 == 0) throw std::runtime_error(what + ": inconsistent lookup window");
  cfg.lookup_radius = (diameter - 1) / 2;
  try {
    cfg.validate();
  } catch (const std::invalid_argument& err) {
    throw std::runtime_error(what + ": " + err.what());
  }

  DCEIFlowNet net(cfg, 0);
  auto params = net.parameters();
  if (params.size() != stored.size()) {
    throw std::runtime_error(what + ": expected " + std::to_string(params.size()) + " parameters, found " +
                             std::to_string(stored.size()));
  }
  for (auto& [name, value] : params) {
    const StoredParameter& p = find(stored, name, what);
    if (p.shape != value.shape()) {
      throw std::runtime_error(what + ": parameter " + name + " has shape " + shape_to_string(p.shape) + ", expected " +
                               shape_to_string(value.shape()));
    }
    std::copy(p.data.begin(), p.data.end(), value.mutable_data().begin());
  }
  return net;
}

}  // namespace dceiflow
