// Maps a recording with independently clocked frames, depth and events into
// the on-disk sequence layout. Depth maps are attached to the frame with the
// nearest timestamp; a depth map farther than --max-skew from every frame is
// dropped, and a frame that attracts several depth maps keeps the closest.
//
// Inputs:
//   frames list   one "t_us path.pgm" per line (8-bit binary PGM)
//   depth list    one "t_us path.f32" per line, raw float32 LE metres, H*W,
//                 non-finite or non-positive values are invalid
//   events        t,x,y,p text with p in {-1,+1}

#include "fusedepth/data_harness.hpp"
#include "fusedepth/io.hpp"

#include <CLI11.hpp>

#include <bit>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

using namespace fusedepth;
namespace fs = std::filesystem;

namespace {

std::vector<std::pair<std::int64_t, fs::path>> read_list(const fs::path& list) {
  std::ifstream in(list);
  if (!in) throw DatasetError("cannot open " + list.string());
  std::vector<std::pair<std::int64_t, fs::path>> out;
  std::int64_t t;
  std::string p;
  while (in >> t >> p) out.emplace_back(t, list.parent_path() / p);
  std::sort(out.begin(), out.end());
  return out;
}

DepthRaster read_raw_depth(const fs::path& path, int h, int w, double alpha, double d_max) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes(std::size_t(h) * w * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
    throw DatasetError(path.string() + ": expected " + std::to_string(h) + "x" + std::to_string(w) + " float32 values");
  ArrayRM<double> d(h, w);
  for (int i = 0; i < h * w; ++i) {
    const unsigned char* b = &bytes[std::size_t(i) * 4];
    d.data()[i] = std::bit_cast<float>(std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                                       std::uint32_t(b[3]) << 24);
  }
  return DepthRaster::meters(d, alpha, d_max);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convert an external recording into the sequence layout"};
  std::string frames, depth, events, out;
  double alpha = 3.7, d_max = 80.0;
  std::int64_t max_skew = 50000;
  app.add_option("--frames", frames, "Frame list")->required();
  app.add_option("--depth", depth, "Depth list")->required();
  app.add_option("--events", events, "Event CSV")->required();
  app.add_option("--out", out, "Sequence directory to write")->required();
  app.add_option("--alpha", alpha, "Log-depth range parameter");
  app.add_option("--d-max", d_max, "Maximum depth in metres");
  app.add_option("--max-skew", max_skew, "Largest accepted depth/frame offset in microseconds");
  CLI11_PARSE(app, argc, argv);

  try {
    SequenceData seq;
    seq.name = fs::path(out).filename().string();
    for (const auto& [t, p] : read_list(frames)) seq.frames.push_back({t, load_pgm(p), std::nullopt});
    if (seq.frames.empty()) throw DatasetError("no frames listed in " + frames);
    seq.meta.height = seq.frames[0].frame.height();
    seq.meta.width = seq.frames[0].frame.width();
    seq.meta.alpha = alpha;
    seq.meta.d_max = d_max;
    seq.meta.frame_period_us =
        seq.frames.size() > 1 ? (seq.frames.back().t - seq.frames.front().t) / std::int64_t(seq.frames.size() - 1) : 50000;

    std::vector<std::int64_t> times;
    for (const auto& f : seq.frames) times.push_back(f.t);
    std::vector<std::int64_t> best(seq.frames.size(), std::numeric_limits<std::int64_t>::max());
    int attached = 0, dropped = 0;
    for (const auto& [t, p] : read_list(depth)) {
      const std::size_t k = nearest_timestamp(times, t);
      const std::int64_t skew = std::abs(times[k] - t);
      if (skew > max_skew || skew >= best[k]) {
        ++dropped;
        continue;
      }
      attached += !seq.frames[k].depth;
      dropped += bool(seq.frames[k].depth);
      best[k] = skew;
      seq.frames[k].depth = read_raw_depth(p, seq.meta.height, seq.meta.width, alpha, d_max);
    }

    seq.events = load_events_csv(events);
    write_sequence(out, seq);
    std::cout << "frames " << seq.frames.size() << ", depth attached " << attached << ", dropped " << dropped
              << ", events " << seq.events.size() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
