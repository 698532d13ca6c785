#pragma once

#include "fusedepth/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace fusedepth {

/// A single brightness-change event. Timestamps are integer microseconds.
struct Event {
  std::int64_t t = 0;
  int x = 0;
  int y = 0;
  int p = 1;  // polarity, -1 or +1

  bool operator==(const Event&) const = default;
};

using EventStream = std::vector<Event>;

/// Malformed or inconsistent event data (ordering, coordinates, polarity).
class EventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Events falling in [t_start, t_end).
struct EventWindow {
  std::vector<Event> events;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  int index = 0;
  /// Set on a trailing window the stream does not fully cover.
  bool partial = false;

  std::int64_t duration() const { return t_end - t_start; }
};

/// B x H x W temporal voxel encoding of one window.
struct VoxelGrid {
  Tensor<double> data;
  bool normalized = false;

  int bins() const { return data.channels(); }
  int height() const { return data.height(); }
  int width() const { return data.width(); }
};

/// Splits a time-sorted stream into contiguous windows of length `delta_t`
/// starting at the first event. The trailing window is kept and flagged.
std::vector<EventWindow> accumulate_windows(std::span<const Event> stream, std::int64_t delta_t);

/// Same partition with an explicit origin and window count; events outside
/// [origin, origin + count * delta_t) are ignored.
std::vector<EventWindow> accumulate_windows(std::span<const Event> stream, std::int64_t delta_t,
                                            std::int64_t origin, int count);

/// Bin positions and weights one event deposits into.
struct TemporalSplit {
  int lower_bin = 0;
  int upper_bin = 0;
  double lower_weight = 1.0;
  double upper_weight = 0.0;
};

/// Linear interpolation between the two nearest bin centres; bin b sits at
/// t_start + b * duration / (B - 1).
TemporalSplit temporal_split(std::int64_t t, std::int64_t t_start, std::int64_t duration, int bins);

VoxelGrid build_voxel_grid(const EventWindow& window, int bins, int height, int width);

/// Standardises the nonzero cells to zero mean and unit deviation. Zero
/// cells stay zero; an all-zero grid is returned unchanged.
VoxelGrid normalize_voxel_grid(VoxelGrid grid);

/// Reads the `t,x,y,p` text format. Throws EventError naming the line.
EventStream load_events_csv(const std::filesystem::path& path);
void save_events_csv(const std::filesystem::path& path, std::span<const Event> stream);

}  // namespace fusedepth
