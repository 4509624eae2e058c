#include "dceiflow/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "binary_io.hpp"

namespace dceiflow {

EventStream::EventStream(int width, int height, std::uint64_t t_start, std::uint64_t t_end, std::vector<Event> events)
    : width_(width), height_(height), t_start_(t_start), t_end_(t_end), events_(std::move(events)) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("event stream: sensor size must be positive");
  if (width > 65536 || height > 65536) throw std::invalid_argument("event stream: sensor size exceeds 16-bit coordinates");
  if (t_start > t_end) throw std::invalid_argument("event stream: t_start > t_end");
  for (const Event& e : events_) {
    if (e.x >= width || e.y >= height) {
      throw std::invalid_argument("event stream: event at (" + std::to_string(e.x) + ", " + std::to_string(e.y) +
                                  ") outside a " + std::to_string(width) + "x" + std::to_string(height) + " sensor");
    }
    if (e.p != 1 && e.p != -1) throw std::invalid_argument("event stream: polarity must be +1 or -1");
    if (e.t < t_start || e.t > t_end) {
      throw std::invalid_argument("event stream: timestamp " + std::to_string(e.t) + " outside window [" +
                                  std::to_string(t_start) + ", " + std::to_string(t_end) + "]");
    }
  }
  std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
}

double bin_weight(double t_norm, int bin, int bins) {
  return std::max(0.0, 1.0 - std::abs(static_cast<double>(bin) - t_norm * static_cast<double>(bins - 1)));
}

EventVolume voxelize(const EventStream& stream, int bins) {
  if (bins < 1) throw std::invalid_argument("voxelize: bins must be >= 1");
  const int h = stream.height(), w = stream.width();
  Tensor data({2 * bins, h, w});
  float* out = data.mutable_data().data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double duration = static_cast<double>(stream.t_end() - stream.t_start());
  for (const Event& e : stream.events()) {
    const double t_norm = duration > 0.0 ? static_cast<double>(e.t - stream.t_start()) / duration : 0.0;
    const double pos = t_norm * static_cast<double>(bins - 1);
    const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, bins - 1);
    const std::size_t pixel = static_cast<std::size_t>(e.y) * w + e.x;
    const int base = e.p > 0 ? 0 : bins;
    for (int b = lo; b <= std::min(lo + 1, bins - 1); ++b) {
      const double weight = bin_weight(t_norm, b, bins);
      if (weight > 0.0) out[static_cast<std::size_t>(base + b) * plane + pixel] += static_cast<float>(weight);
    }
  }
  return {std::move(data), bins};
}

EventStream reverse(const EventStream& stream) {
  std::vector<Event> reversed;
  reversed.reserve(stream.size());
  const auto events = stream.events();
  for (auto it = events.rbegin(); it != events.rend(); ++it) {
    Event e = *it;
    e.t = stream.t_start() + stream.t_end() - e.t;
    e.p = static_cast<std::int8_t>(-e.p);
    reversed.push_back(e);
  }
  return {stream.width(), stream.height(), stream.t_start(), stream.t_end(), std::move(reversed)};
}

BinaryMask event_mask(const EventStream& stream) {
  BinaryMask mask(stream.width(), stream.height());
  for (const Event& e : stream.events()) mask(e.y, e.x) = 1;
  return mask;
}

EventStream clip_prefix(const EventStream& stream, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("clip_prefix: fraction must be in [0, 1]");
  const std::uint64_t span = stream.t_end() - stream.t_start();
  const auto length = static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(span)));
  const std::uint64_t end = stream.t_start() + std::min(length, span);
  std::vector<Event> kept;
  for (const Event& e : stream.events()) {
    if (e.t > end) break;
    kept.push_back(e);
  }
  return {stream.width(), stream.height(), stream.t_start(), end, std::move(kept)};
}

namespace {
constexpr char kEventMagic[4] = {'E', 'V', 'S', '1'};
}

void write_events(const std::filesystem::path& path, const EventStream& stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kEventMagic, 4);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.width()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.height()));
  binio::put<std::uint64_t>(out, stream.t_start());
  binio::put<std::uint64_t>(out, stream.t_end());
  binio::put<std::uint64_t>(out, stream.size());
  const char pad[3] = {0, 0, 0};
  for (const Event& e : stream.events()) {
    binio::put<std::uint16_t>(out, e.x);
    binio::put<std::uint16_t>(out, e.y);
    binio::put<std::uint64_t>(out, e.t);
    binio::put<std::int8_t>(out, e.p);
    out.write(pad, 3);
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

EventStream read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open event file " + path.string());
  const std::string what = "event file " + path.string();
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kEventMagic)) throw std::runtime_error(what + ": bad magic");
  const auto width = binio::get<std::uint32_t>(in, what);
  const auto height = binio::get<std::uint32_t>(in, what);
  const auto t_start = binio::get<std::uint64_t>(in, what);
  const auto t_end = binio::get<std::uint64_t>(in, what);
  const auto count = binio::get<std::uint64_t>(in, what);
  std::vector<Event> events;
  events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = binio::get<std::uint16_t>(in, what);
    e.y = binio::get<std::uint16_t>(in, what);
    e.t = binio::get<std::uint64_t>(in, what);
    e.p = binio::get<std::int8_t>(in, what);
    char pad[3];
    in.read(pad, 3);
    if (in.gcount() != 3) throw std::runtime_error(what + ": truncated file");
    events.push_back(e);
  }
  try {
    return {static_cast<int>(width), static_cast<int>(height), t_start, t_end, std::move(events)};
  } catch (const std::invalid_argument& err) {
    throw std::runtime_error(what + ": " + err.what());
  }
}

}  // namespace dceiflow
