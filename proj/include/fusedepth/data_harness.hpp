#pragma once

#include "fusedepth/event_core.hpp"
#include "fusedepth/io.hpp"
#include "fusedepth/objective_metrics.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fusedepth {

// ---------------------------------------------------------------------------
// Synthetic scenes.

/// Procedural albedo: a sinusoidal pattern mixed with a checkerboard,
/// evaluated in surface coordinates (metres).
struct Texture {
  double base = 0.5;
  double amplitude = 0.35;
  double freq_u = 1.0;
  double freq_v = 1.0;
  double phase = 0.0;
  double checker = 1.0;  // checker cells per metre

  double albedo(double u, double v) const;
};

/// Fronto-parallel textured rectangle at depth `z` (camera frame: x right,
/// y down, z forward).
struct Panel {
  double x0 = -1, x1 = 1, y0 = -1, y1 = 1, z = 10;
  Texture texture;
};

/// Ground plane y = ground_height, a back wall at z = wall_depth and a few
/// panels, seen by a translating pinhole camera.
struct SyntheticScene {
  double ground_height = 1.5;
  Texture ground;
  double wall_depth = 35.0;
  Texture wall;
  std::vector<Panel> panels;
  Eigen::Vector3d start = Eigen::Vector3d::Zero();
  Eigen::Vector3d velocity = Eigen::Vector3d::Zero();  // metres per second
  double focal_ratio = 1.0;                            // focal length / image width
  double gain = 1.0;
  double noise_sigma = 0.01;

  Eigen::Vector3d camera_at(double seconds) const { return start + seconds * velocity; }
};

/// Random scene with 2-4 panels between 3 and 20 m, a wall between 25 and
/// 45 m and a nonzero constant camera velocity.
SyntheticScene random_scene(std::uint64_t seed, double gain = 1.0, double noise_sigma = 0.01);

struct RenderedFrame {
  Tensor<double> intensity;  // 1 x H x W, noisy, clamped to [0,1]
  Tensor<double> radiance;   // 1 x H x W, gain * albedo without noise
  DepthRaster depth;         // metres, valid everywhere
};

/// Renders one view at camera time `seconds`. Intensity is 2x2
/// supersampled; depth is the z distance of the pixel-centre ray.
RenderedFrame render_view(const SyntheticScene& scene, double seconds, int height, int width, std::mt19937_64& noise_rng);

// ---------------------------------------------------------------------------
// Event simulation.

struct EventSimConfig {
  double threshold = 0.2;  // contrast threshold C on log intensity
  int substeps = 10;       // temporal upsampling between frames
  double log_floor = 1e-3;
};

/// Per-pixel reference-crossing simulation on log(max(I, floor)). Intensity
/// is interpolated linearly between consecutive images with `substeps`
/// steps; crossing times are interpolated inside each step and rounded up
/// to whole microseconds in (t_k, t_k+1]. Output is sorted by (t, y, x).
EventStream simulate_events(const std::vector<Tensor<double>>& images, const std::vector<std::int64_t>& times,
                            const EventSimConfig& cfg);

// ---------------------------------------------------------------------------
// Datasets on disk.

struct SequenceMeta {
  int width = 64;
  int height = 64;
  std::int64_t frame_period_us = 50000;
  double alpha = 3.7;
  double d_max = 80.0;
  double threshold_c = 0.2;
  double gain = 1.0;
};

struct FrameRecord {
  std::int64_t t = 0;
  Tensor<double> frame;              // 1 x H x W in [0,1]
  std::optional<DepthRaster> depth;  // metres
};

struct SequenceData {
  std::string name;
  SequenceMeta meta;
  std::vector<FrameRecord> frames;
  EventStream events;
};

struct SynthOptions {
  int sequences = 8;
  int frames = 24;
  int height = 64;
  int width = 64;
  double gain = 1.0;
  double noise_sigma = 0.01;
  double threshold_c = 0.2;
  std::int64_t frame_period_us = 50000;
  double alpha = 3.7;
  double d_max = 80.0;
  std::uint64_t seed = 1;
};

/// Renders a sequence and simulates its events. Frame k is at k * period.
SequenceData synthesize_sequence(const SynthOptions& opt, int index);

/// Layout: <dir>/meta.json, events.csv, frames/%06d.pgm, depth/%06d.f32
/// with .json sidecars.
void write_sequence(const std::filesystem::path& dir, const SequenceData& seq);
/// Frames without a depth file get no depth. Throws DatasetError naming
/// the offending file.
SequenceData load_sequence(const std::filesystem::path& dir);
/// Every subdirectory holding a meta.json, sorted by name.
std::vector<SequenceData> load_dataset(const std::filesystem::path& root);

/// Writes `opt.sequences` sequences named seq_%03d under `root`.
void synthesize_dataset(const std::filesystem::path& root, const SynthOptions& opt);

/// Index of the timestamp in sorted `times` closest to `t` (ties go to the
/// earlier one). For aligning depth captured at its own rate to frames.
std::size_t nearest_timestamp(const std::vector<std::int64_t>& times, std::int64_t t);

// ---------------------------------------------------------------------------
// Training samples.

/// L consecutive aligned (event window, frame, depth) triples. Mask inputs
/// are stored instead of masks because the mask heads are learned.
struct SequenceSample {
  std::string name;
  std::vector<std::int64_t> times;
  std::vector<Tensor<double>> frames;   // 1 x H x W
  std::vector<VoxelGrid> voxels;        // normalised B x H x W
  std::vector<Tensor<double>> density;  // S x H x W
  std::vector<Tensor<double>> edges;    // 1 x H x W
  std::vector<DepthRaster> depth;       // metres

  int length() const { return int(frames.size()); }
  int height() const { return frames.front().height(); }
  int width() const { return frames.front().width(); }
};

struct AssemblyOptions {
  int sequence_length = 8;
  int bins = 5;
  std::vector<int> density_patches{8, 16, 32};
};

struct AssemblyReport {
  int samples = 0;
  int dropped = 0;         // runs with a frame lacking depth
  int leftover_frames = 0; // tail frames not filling a whole run
};

/// Frame k pairs with the events in (t_{k-1}, t_k], the window ending at
/// the frame; the first frame looks back one frame period. Runs are
/// non-overlapping.
std::vector<SequenceSample> assemble_samples(const SequenceData& seq, const AssemblyOptions& opt,
                                             AssemblyReport* report = nullptr);

/// Consistent horizontal mirror of every member.
SequenceSample flip_horizontal(const SequenceSample& s);
/// Consistent crop of every member.
SequenceSample crop(const SequenceSample& s, int y0, int x0, int height, int width);

}  // namespace fusedepth
