#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dceiflow/grid.hpp"
#include "dceiflow/tensor.hpp"

namespace dceiflow {

/// One brightness-change record: pixel column/row, timestamp in
/// microseconds, polarity +1 or -1.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint64_t t = 0;
  std::int8_t p = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Time-ordered events inside a closed window [t_start, t_end] on a
/// width x height sensor. The constructor validates every event and
/// stably sorts them by timestamp.
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::uint64_t t_start, std::uint64_t t_end, std::vector<Event> events);

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint64_t t_start() const { return t_start_; }
  std::uint64_t t_end() const { return t_end_; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::uint64_t t_start_ = 0;
  std::uint64_t t_end_ = 0;
  std::vector<Event> events_;
};

/// (2B, H, W) tensor: channels [0, B) hold positive events, [B, 2B) negative.
struct EventVolume {
  Tensor data;
  int bins = 0;
};

inline constexpr int kDefaultEventBins = 5;

/// Accumulates each event's temporal-bilinear kernel weight
/// max(0, 1 - |b - t_norm (B - 1)|) into its pixel, split by polarity.
/// The volume is not normalized. A zero-length window maps every event to
/// t_norm = 0.
EventVolume voxelize(const EventStream& stream, int bins = kDefaultEventBins);

/// Kernel weight of one normalized timestamp in bin b.
double bin_weight(double t_norm, int bin, int bins);

/// Time-reversed stream: t -> t_start + t_end - t and p -> -p, same window.
EventStream reverse(const EventStream& stream);

/// 1 where at least one event fired, 0 elsewhere.
BinaryMask event_mask(const EventStream& stream);

/// Events in [t_start, t_start + fraction * (t_end - t_start)], with the
/// window shrunk to match. fraction must lie in [0, 1].
EventStream clip_prefix(const EventStream& stream, double fraction);

/// EVS1 little-endian binary: "EVS1", u32 width, u32 height, u64 t_start,
/// u64 t_end, u64 count, then 16-byte records (u16 x, u16 y, u64 t, i8 p,
/// 3 zero bytes).
void write_events(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events(const std::filesystem::path& path);

}  // namespace dceiflow
