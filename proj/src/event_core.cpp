#include "fusedepth/event_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace fusedepth {

namespace {

void require_sorted(std::span<const Event> stream) {
  for (std::size_t i = 1; i < stream.size(); ++i)
    if (stream[i].t < stream[i - 1].t)
      throw EventError("event stream not sorted by timestamp at index " + std::to_string(i));
}

}  // namespace

std::vector<EventWindow> accumulate_windows(std::span<const Event> stream, std::int64_t delta_t) {
  if (delta_t <= 0) throw std::invalid_argument("delta_t must be positive");
  require_sorted(stream);
  if (stream.empty()) return {};
  const std::int64_t origin = stream.front().t;
  const int count = int((stream.back().t - origin) / delta_t) + 1;
  auto windows = accumulate_windows(stream, delta_t, origin, count);
  windows.back().partial = stream.back().t + 1 < windows.back().t_end;
  return windows;
}

std::vector<EventWindow> accumulate_windows(std::span<const Event> stream, std::int64_t delta_t,
                                            std::int64_t origin, int count) {
  if (delta_t <= 0) throw std::invalid_argument("delta_t must be positive");
  if (count < 0) throw std::invalid_argument("window count must be non-negative");
  require_sorted(stream);
  std::vector<EventWindow> windows(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    windows[k].index = k;
    windows[k].t_start = origin + k * delta_t;
    windows[k].t_end = origin + (k + 1) * delta_t;
  }
  for (const Event& e : stream) {
    if (e.t < origin) continue;
    const std::int64_t k = (e.t - origin) / delta_t;
    if (k >= count) break;
    windows[std::size_t(k)].events.push_back(e);
  }
  return windows;
}

TemporalSplit temporal_split(std::int64_t t, std::int64_t t_start, std::int64_t duration, int bins) {
  TemporalSplit s;
  if (bins == 1) return s;
  const double pos = double(bins - 1) * double(t - t_start) / double(duration);
  const double clamped = std::clamp(pos, 0.0, double(bins - 1));
  s.lower_bin = std::min(int(std::floor(clamped)), bins - 1);
  s.upper_bin = std::min(s.lower_bin + 1, bins - 1);
  s.upper_weight = s.upper_bin == s.lower_bin ? 0.0 : clamped - s.lower_bin;
  s.lower_weight = 1.0 - s.upper_weight;
  return s;
}

VoxelGrid build_voxel_grid(const EventWindow& window, int bins, int height, int width) {
  if (bins <= 0 || height <= 0 || width <= 0) throw std::invalid_argument("voxel grid dimensions must be positive");
  if (window.t_end <= window.t_start) throw EventError("degenerate event window");
  VoxelGrid grid{Tensor<double>::zeros({bins, height, width}), false};
  for (const Event& e : window.events) {
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw EventError("event at (" + std::to_string(e.x) + ", " + std::to_string(e.y) + ") outside " +
                       std::to_string(width) + "x" + std::to_string(height) + " sensor");
    const TemporalSplit s = temporal_split(e.t, window.t_start, window.duration(), bins);
    grid.data(s.lower_bin, e.y, e.x) += e.p * s.lower_weight;
    if (s.upper_weight > 0.0) grid.data(s.upper_bin, e.y, e.x) += e.p * s.upper_weight;
  }
  return grid;
}

VoxelGrid normalize_voxel_grid(VoxelGrid grid) {
  auto& v = grid.data.values();
  const auto nonzero = (v != 0.0);
  const double n = double(nonzero.count());
  grid.normalized = true;
  if (n == 0) return grid;
  const double mean = nonzero.select(v, 0.0).sum() / n;
  const double var = nonzero.select((v - mean).square(), 0.0).sum() / n;
  const double stddev = std::sqrt(var);
  // A constant nonzero population has no spread to standardise.
  if (stddev <= 0.0) return grid;
  v = nonzero.select((v - mean) / stddev, 0.0);
  return grid;
}

EventStream load_events_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EventError("cannot open event file " + path.string());
  EventStream events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    Event e;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> e.t >> c1 >> e.x >> c2 >> e.y >> c3 >> e.p) || c1 != ',' || c2 != ',' || c3 != ',')
      throw EventError(path.string() + ":" + std::to_string(lineno) + ": expected 't,x,y,p'");
    std::string rest;
    if (ss >> rest) throw EventError(path.string() + ":" + std::to_string(lineno) + ": trailing characters");
    if (e.p != 1 && e.p != -1)
      throw EventError(path.string() + ":" + std::to_string(lineno) + ": polarity must be -1 or 1");
    if (e.t < 0 || e.x < 0 || e.y < 0)
      throw EventError(path.string() + ":" + std::to_string(lineno) + ": negative timestamp or coordinate");
    if (!events.empty() && e.t < events.back().t)
      throw EventError(path.string() + ":" + std::to_string(lineno) + ": timestamps not sorted");
    events.push_back(e);
  }
  return events;
}

void save_events_csv(const std::filesystem::path& path, std::span<const Event> stream) {
  std::ofstream out(path);
  if (!out) throw EventError("cannot write event file " + path.string());
  out << "# t,x,y,p\n";
  for (const Event& e : stream) out << e.t << ',' << e.x << ',' << e.y << ',' << e.p << '\n';
}

}  // namespace fusedepth
