#include "fusedepth/data_harness.hpp"

#include "fusedepth/mask_init.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

namespace fusedepth {

namespace fs = std::filesystem;

double Texture::albedo(double u, double v) const {
  const double two_pi = 2.0 * std::numbers::pi;
  const double wave = 0.5 + 0.5 * std::sin(two_pi * freq_u * u + phase) * std::sin(two_pi * freq_v * v);
  const long cu = long(std::floor(u * checker));
  const long cv = long(std::floor(v * checker));
  const double check = ((cu + cv) & 1) ? 1.0 : 0.0;
  return std::clamp(base + amplitude * (0.5 * wave + 0.5 * check - 0.5), 0.05, 0.95);
}

namespace {

Texture random_texture(std::mt19937_64& rng, double checker_lo, double checker_hi) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Texture t;
  t.base = 0.3 + 0.4 * uni(rng);
  t.amplitude = 0.3 + 0.4 * uni(rng);
  t.freq_u = 0.3 + 1.2 * uni(rng);
  t.freq_v = 0.3 + 1.2 * uni(rng);
  t.phase = 2.0 * std::numbers::pi * uni(rng);
  t.checker = checker_lo + (checker_hi - checker_lo) * uni(rng);
  return t;
}

struct Hit {
  double depth = std::numeric_limits<double>::infinity();
  double albedo = 0.0;
};

constexpr double kNear = 0.05;

Hit trace(const SyntheticScene& s, const Eigen::Vector3d& cam, double dx, double dy) {
  Hit hit;
  // Back wall, always hit by forward rays.
  const double tw = s.wall_depth - cam.z();
  if (tw > kNear) {
    hit.depth = tw;
    hit.albedo = s.wall.albedo(cam.x() + tw * dx, cam.y() + tw * dy);
  }
  if (dy > 0.0) {
    const double tg = (s.ground_height - cam.y()) / dy;
    if (tg > kNear && tg < hit.depth) {
      hit.depth = tg;
      hit.albedo = s.ground.albedo(cam.x() + tg * dx, cam.z() + tg);
    }
  }
  for (const Panel& p : s.panels) {
    const double tp = p.z - cam.z();
    if (tp <= kNear || tp >= hit.depth) continue;
    const double x = cam.x() + tp * dx;
    const double y = cam.y() + tp * dy;
    if (x < p.x0 || x > p.x1 || y < p.y0 || y > p.y1) continue;
    hit.depth = tp;
    hit.albedo = p.texture.albedo(x - p.x0, y - p.y0);
  }
  return hit;
}

std::string frame_stem(std::size_t k) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << k;
  return os.str();
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

void flip_tensor(Tensor<double>& t) {
  for (int c = 0; c < t.channels(); ++c) {
    auto p = t.plane(c);
    p = p.rowwise().reverse().eval();
  }
}

Tensor<double> crop_tensor(const Tensor<double>& t, int y0, int x0, int h, int w) {
  Tensor<double> out({t.channels(), h, w});
  for (int c = 0; c < t.channels(); ++c) out.plane(c) = t.plane(c).block(y0, x0, h, w);
  return out;
}

}  // namespace

SyntheticScene random_scene(std::uint64_t seed, double gain, double noise_sigma) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  SyntheticScene s;
  s.gain = gain;
  s.noise_sigma = noise_sigma;
  s.ground_height = in(1.2, 1.8);
  s.ground = random_texture(rng, 0.5, 1.5);
  s.wall_depth = in(25.0, 45.0);
  s.wall = random_texture(rng, 0.1, 0.4);
  const int panels = 2 + int(rng() % 3);
  for (int i = 0; i < panels; ++i) {
    Panel p;
    p.z = in(3.0, 20.0);
    const double cx = in(-0.35, 0.35) * p.z;
    const double half_w = in(0.1, 0.25) * p.z;
    p.x0 = cx - half_w;
    p.x1 = cx + half_w;
    p.y1 = s.ground_height;
    p.y0 = s.ground_height - in(0.4, 0.8) * p.z;
    p.texture = random_texture(rng, 1.0, 4.0);
    s.panels.push_back(p);
  }
  // Constant-velocity translation; the lateral component keeps flow nonzero
  // everywhere, including the wall.
  const double side = uni(rng) < 0.5 ? -1.0 : 1.0;
  s.velocity = Eigen::Vector3d(side * in(1.0, 2.5), in(-0.2, 0.2), in(0.0, 1.5));
  return s;
}

RenderedFrame render_view(const SyntheticScene& scene, double seconds, int height, int width,
                          std::mt19937_64& noise_rng) {
  const Eigen::Vector3d cam = scene.camera_at(seconds);
  const double f = scene.focal_ratio * width;
  const double cx = 0.5 * width, cy = 0.5 * height;
  RenderedFrame out;
  out.radiance = Tensor<double>({1, height, width});
  ArrayRM<double> depth(height, width);
  constexpr double kSub[2] = {0.25, 0.75};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double albedo = 0.0;
      for (double sy : kSub)
        for (double sx : kSub) albedo += trace(scene, cam, (x + sx - cx) / f, (y + sy - cy) / f).albedo;
      out.radiance(0, y, x) = scene.gain * albedo / 4.0;
      depth(y, x) = trace(scene, cam, (x + 0.5 - cx) / f, (y + 0.5 - cy) / f).depth;
    }
  std::normal_distribution<double> noise(0.0, scene.noise_sigma);
  out.intensity = Tensor<double>({1, height, width});
  for (int i = 0; i < out.radiance.size(); ++i)
    out.intensity.data()[i] =
        std::clamp(out.radiance.data()[i] + (scene.noise_sigma > 0 ? noise(noise_rng) : 0.0), 0.0, 1.0);
  out.depth = DepthRaster::meters(std::move(depth));
  return out;
}

EventStream simulate_events(const std::vector<Tensor<double>>& images, const std::vector<std::int64_t>& times,
                            const EventSimConfig& cfg) {
  if (!(cfg.threshold > 0)) throw std::invalid_argument("contrast threshold must be positive");
  if (cfg.substeps < 1) throw std::invalid_argument("substeps must be at least 1");
  if (images.size() != times.size()) throw std::invalid_argument("one timestamp per image required");
  EventStream events;
  if (images.size() < 2) return events;
  const Shape shape = images.front().shape();
  for (const auto& im : images)
    if (im.shape() != shape || shape.channels != 1) throw ShapeError("event simulation needs equal 1 x H x W images");

  const double C = cfg.threshold;
  auto logi = [&](double v) { return std::log(std::max(v, cfg.log_floor)); };
  for (int y = 0; y < shape.height; ++y)
    for (int x = 0; x < shape.width; ++x) {
      double ref = logi(images[0](0, y, x));
      for (std::size_t k = 0; k + 1 < images.size(); ++k) {
        const double a = images[k](0, y, x), b = images[k + 1](0, y, x);
        const std::int64_t t0 = times[k], t1 = times[k + 1];
        if (t1 <= t0) throw std::invalid_argument("image timestamps must increase");
        double l_prev = logi(a);
        for (int s = 1; s <= cfg.substeps; ++s) {
          const double l_cur = logi(a + (b - a) * double(s) / cfg.substeps);
          const double ts_prev = t0 + double(t1 - t0) * (s - 1) / cfg.substeps;
          const double ts_cur = t0 + double(t1 - t0) * s / cfg.substeps;
          auto emit = [&](double level, int p) {
            const double frac = (level - l_prev) / (l_cur - l_prev);
            const auto t = std::int64_t(std::ceil(ts_prev + frac * (ts_cur - ts_prev)));
            events.push_back({std::clamp(t, t0 + 1, t1), x, y, p});
          };
          while (l_cur >= ref + C) {
            emit(ref + C, 1);
            ref += C;
          }
          while (l_cur <= ref - C) {
            emit(ref - C, -1);
            ref -= C;
          }
          l_prev = l_cur;
        }
      }
    }
  std::sort(events.begin(), events.end(), [](const Event& l, const Event& r) {
    return std::tie(l.t, l.y, l.x, l.p) < std::tie(r.t, r.y, r.x, r.p);
  });
  return events;
}

SequenceData synthesize_sequence(const SynthOptions& opt, int index) {
  if (opt.frames < 1 || opt.height < 1 || opt.width < 1) throw std::invalid_argument("bad synthesis size");
  const std::uint64_t seed = opt.seed * 1000003ULL + std::uint64_t(index);
  const SyntheticScene scene = random_scene(seed, opt.gain, opt.noise_sigma);
  std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  SequenceData seq;
  seq.name = "seq_" + frame_stem(std::size_t(index)).substr(3);
  seq.meta = {opt.width, opt.height, opt.frame_period_us, opt.alpha, opt.d_max, opt.threshold_c, opt.gain};
  std::vector<Tensor<double>> radiance;
  std::vector<std::int64_t> times;
  for (int k = 0; k < opt.frames; ++k) {
    const std::int64_t t = k * opt.frame_period_us;
    RenderedFrame r = render_view(scene, double(t) * 1e-6, opt.height, opt.width, noise_rng);
    r.depth.alpha = opt.alpha;
    r.depth.d_max = opt.d_max;
    radiance.push_back(r.radiance);
    times.push_back(t);
    seq.frames.push_back({t, std::move(r.intensity), std::move(r.depth)});
  }
  // Events come from the noise-free radiance; sensor noise only affects frames.
  seq.events = simulate_events(radiance, times, {opt.threshold_c, 10, 1e-3});
  return seq;
}

void write_sequence(const fs::path& dir, const SequenceData& seq) {
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "depth");
  nlohmann::json meta{{"resolution", {{"width", seq.meta.width}, {"height", seq.meta.height}}},
                      {"frame_period_us", seq.meta.frame_period_us},
                      {"alpha", seq.meta.alpha},
                      {"d_max", seq.meta.d_max},
                      {"threshold_C", seq.meta.threshold_c},
                      {"gain", seq.meta.gain}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  nlohmann::json stamps = nlohmann::json::array();
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    save_pgm(dir / "frames" / (frame_stem(k) + ".pgm"), seq.frames[k].frame);
    stamps.push_back(seq.frames[k].t);
    if (seq.frames[k].depth) write_depth_raster(dir / "depth" / (frame_stem(k) + ".f32"), *seq.frames[k].depth);
  }
  std::ofstream(dir / "frames" / "timestamps.json") << stamps.dump() << '\n';
  save_events_csv(dir / "events.csv", seq.events);
}

SequenceData load_sequence(const fs::path& dir) {
  SequenceData seq;
  seq.name = dir.filename().string();
  const fs::path meta_path = dir / "meta.json";
  const nlohmann::json meta = read_json(meta_path);
  try {
    seq.meta.width = meta.at("resolution").at("width").get<int>();
    seq.meta.height = meta.at("resolution").at("height").get<int>();
    seq.meta.frame_period_us = meta.at("frame_period_us").get<std::int64_t>();
    seq.meta.alpha = meta.at("alpha").get<double>();
    seq.meta.d_max = meta.at("d_max").get<double>();
    seq.meta.threshold_c = meta.value("threshold_C", 0.2);
    seq.meta.gain = meta.value("gain", 1.0);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(meta_path.string() + ": " + e.what());
  }
  if (seq.meta.frame_period_us <= 0) throw DatasetError(meta_path.string() + ": frame_period_us must be positive");

  std::vector<fs::path> frame_files;
  if (!fs::is_directory(dir / "frames")) throw DatasetError("missing frames directory " + (dir / "frames").string());
  for (const auto& e : fs::directory_iterator(dir / "frames"))
    if (e.path().extension() == ".pgm") frame_files.push_back(e.path());
  std::sort(frame_files.begin(), frame_files.end());

  std::vector<std::int64_t> stamps;
  const fs::path stamp_path = dir / "frames" / "timestamps.json";
  if (fs::exists(stamp_path)) {
    try {
      stamps = read_json(stamp_path).get<std::vector<std::int64_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw DatasetError(stamp_path.string() + ": " + e.what());
    }
    if (stamps.size() != frame_files.size())
      throw DatasetError(stamp_path.string() + ": " + std::to_string(stamps.size()) + " timestamps for " +
                         std::to_string(frame_files.size()) + " frames");
  }
  for (std::size_t k = 0; k < frame_files.size(); ++k) {
    FrameRecord r;
    r.t = stamps.empty() ? std::int64_t(k) * seq.meta.frame_period_us : stamps[k];
    r.frame = load_pgm(frame_files[k]);
    if (r.frame.height() != seq.meta.height || r.frame.width() != seq.meta.width)
      throw DatasetError(frame_files[k].string() + ": size differs from meta.json resolution");
    const fs::path depth_path = dir / "depth" / (frame_files[k].stem().string() + ".f32");
    if (fs::exists(depth_path)) {
      DepthRaster d = read_depth_raster(depth_path);
      if (d.height() != seq.meta.height || d.width() != seq.meta.width)
        throw DatasetError(depth_path.string() + ": size differs from meta.json resolution");
      if (d.space != DepthSpace::meters) throw DatasetError(depth_path.string() + ": ground truth must be in metres");
      d.alpha = seq.meta.alpha;
      d.d_max = seq.meta.d_max;
      r.depth = std::move(d);
    }
    seq.frames.push_back(std::move(r));
  }
  try {
    seq.events = load_events_csv(dir / "events.csv");
  } catch (const EventError& e) {
    throw DatasetError(e.what());
  }
  for (const Event& e : seq.events)
    if (e.x < 0 || e.y < 0 || e.x >= seq.meta.width || e.y >= seq.meta.height)
      throw DatasetError((dir / "events.csv").string() + ": event at (" + std::to_string(e.x) + ", " +
                         std::to_string(e.y) + ") outside the sensor");
  return seq;
}

std::vector<SequenceData> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DatasetError("no sequences (directories with meta.json) under " + root.string());
  std::vector<SequenceData> out;
  for (const auto& d : dirs) out.push_back(load_sequence(d));
  return out;
}

void synthesize_dataset(const fs::path& root, const SynthOptions& opt) {
  for (int i = 0; i < opt.sequences; ++i) {
    const SequenceData seq = synthesize_sequence(opt, i);
    write_sequence(root / seq.name, seq);
  }
}

std::size_t nearest_timestamp(const std::vector<std::int64_t>& times, std::int64_t t) {
  if (times.empty()) throw std::invalid_argument("nearest_timestamp: no timestamps");
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 0;
  if (it == times.end()) return times.size() - 1;
  const auto prev = it - 1;
  return std::size_t((t - *prev <= *it - t) ? prev - times.begin() : it - times.begin());
}

std::vector<SequenceSample> assemble_samples(const SequenceData& seq, const AssemblyOptions& opt,
                                             AssemblyReport* report) {
  if (opt.sequence_length < 1) throw std::invalid_argument("sequence length must be positive");
  AssemblyReport rep;
  std::vector<SequenceSample> out;
  const int n = int(seq.frames.size());
  if (n == 0) {
    if (report) *report = rep;
    return out;
  }
  const std::int64_t period = seq.meta.frame_period_us;
  for (int k = 1; k < n; ++k)
    if (seq.frames[k].t - seq.frames[k - 1].t != period)
      throw DatasetError(seq.name + ": frame " + std::to_string(k) + " is not one frame period after the previous one");
  const auto windows = accumulate_windows(seq.events, period, seq.frames[0].t - period + 1, n);

  const int L = opt.sequence_length;
  for (int start = 0; start + L <= n; start += L) {
    bool complete = true;
    for (int k = start; k < start + L; ++k) complete = complete && seq.frames[k].depth.has_value();
    if (!complete) {
      ++rep.dropped;
      continue;
    }
    SequenceSample s;
    s.name = seq.name + "@" + std::to_string(start);
    for (int k = start; k < start + L; ++k) {
      const FrameRecord& f = seq.frames[k];
      const VoxelGrid raw = build_voxel_grid(windows[std::size_t(k)], opt.bins, seq.meta.height, seq.meta.width);
      s.times.push_back(f.t);
      s.frames.push_back(f.frame);
      s.density.push_back(density_stack(raw, opt.density_patches));
      s.voxels.push_back(normalize_voxel_grid(raw));
      s.edges.push_back(sobel_edges(f.frame));
      s.depth.push_back(*f.depth);
    }
    out.push_back(std::move(s));
    ++rep.samples;
  }
  rep.leftover_frames = n % L;
  if (report) *report = rep;
  return out;
}

SequenceSample flip_horizontal(const SequenceSample& s) {
  SequenceSample o = s;
  for (auto& t : o.frames) flip_tensor(t);
  for (auto& v : o.voxels) flip_tensor(v.data);
  for (auto& t : o.density) flip_tensor(t);
  for (auto& t : o.edges) flip_tensor(t);
  for (auto& d : o.depth) {
    d.data = d.data.rowwise().reverse().eval();
    d.valid = d.valid.rowwise().reverse().eval();
    if (d.clamped.size()) d.clamped = d.clamped.rowwise().reverse().eval();
  }
  return o;
}

SequenceSample crop(const SequenceSample& s, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height < 1 || width < 1 || y0 + height > s.height() || x0 + width > s.width())
    throw ShapeError("crop window outside the sample");
  SequenceSample o;
  o.name = s.name;
  o.times = s.times;
  for (const auto& t : s.frames) o.frames.push_back(crop_tensor(t, y0, x0, height, width));
  for (const auto& v : s.voxels) o.voxels.push_back({crop_tensor(v.data, y0, x0, height, width), v.normalized});
  for (const auto& t : s.density) o.density.push_back(crop_tensor(t, y0, x0, height, width));
  for (const auto& t : s.edges) o.edges.push_back(crop_tensor(t, y0, x0, height, width));
  for (const auto& d : s.depth) {
    DepthRaster c = d;
    c.data = d.data.block(y0, x0, height, width);
    c.valid = d.valid.block(y0, x0, height, width);
    if (d.clamped.size()) c.clamped = d.clamped.block(y0, x0, height, width);
    o.depth.push_back(std::move(c));
  }
  return o;
}

}  // namespace fusedepth
