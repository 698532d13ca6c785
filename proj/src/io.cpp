#include "fusedepth/io.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

namespace fusedepth {

namespace {

void skip_pnm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

// Viridis anchors, evenly spaced.
constexpr std::array<std::array<double, 3>, 9> kColormap{{{0.267, 0.005, 0.329},
                                                          {0.279, 0.175, 0.483},
                                                          {0.230, 0.322, 0.546},
                                                          {0.173, 0.449, 0.558},
                                                          {0.128, 0.567, 0.551},
                                                          {0.154, 0.680, 0.504},
                                                          {0.363, 0.786, 0.386},
                                                          {0.678, 0.864, 0.190},
                                                          {0.993, 0.906, 0.144}}};

std::array<unsigned char, 3> colormap(double t) {
  t = std::clamp(t, 0.0, 1.0) * double(kColormap.size() - 1);
  const std::size_t i = std::min<std::size_t>(std::size_t(t), kColormap.size() - 2);
  const double f = t - double(i);
  std::array<unsigned char, 3> rgb{};
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<unsigned char>(std::lround(255.0 * ((1 - f) * kColormap[i][c] + f * kColormap[i + 1][c])));
  return rgb;
}

std::filesystem::path sidecar_path(const std::filesystem::path& f32_path) {
  auto p = f32_path;
  return p.replace_extension(".json");
}

}  // namespace

Tensor<double> load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open frame " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw DatasetError(path.string() + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  skip_pnm_space(in);
  in >> w;
  skip_pnm_space(in);
  in >> h;
  skip_pnm_space(in);
  in >> maxval;
  in.get();
  if (!in || w <= 0 || h <= 0) throw DatasetError(path.string() + ": bad PGM header");
  if (maxval != 255) throw DatasetError(path.string() + ": only 8-bit PGM (maxval 255) is supported");
  std::vector<unsigned char> bytes(std::size_t(w) * h);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size())))
    throw DatasetError(path.string() + ": truncated PGM data");
  Tensor<double> t({1, h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) t.data()[i] = bytes[i] / 255.0;
  return t;
}

void save_pgm(const std::filesystem::path& path, const Tensor<double>& image) {
  if (image.channels() != 1) throw ShapeError("save_pgm expects a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  for (int i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

void save_depth_ppm(const std::filesystem::path& path, const DepthRaster& raster, double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << "P6\n" << raster.width() << ' ' << raster.height() << "\n255\n";
  for (int y = 0; y < raster.height(); ++y)
    for (int x = 0; x < raster.width(); ++x) {
      std::array<unsigned char, 3> rgb{0, 0, 0};
      if (raster.valid(y, x)) rgb = colormap((raster.data(y, x) - lo) / (hi - lo));
      out.write(reinterpret_cast<const char*>(rgb.data()), 3);
    }
}

void write_depth_raster(const std::filesystem::path& f32_path, const DepthRaster& raster) {
  std::ofstream out(f32_path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + f32_path.string());
  for (int y = 0; y < raster.height(); ++y)
    for (int x = 0; x < raster.width(); ++x) {
      const float v = raster.valid(y, x) ? float(raster.data(y, x)) : std::numeric_limits<float>::quiet_NaN();
      const auto bits = std::bit_cast<std::uint32_t>(v);
      const char b[4] = {char(bits & 0xff), char((bits >> 8) & 0xff), char((bits >> 16) & 0xff), char(bits >> 24)};
      out.write(b, 4);
    }
  nlohmann::json meta{{"width", raster.width()},
                      {"height", raster.height()},
                      {"space", raster.space == DepthSpace::meters ? "meters" : "log01"},
                      {"alpha", raster.alpha},
                      {"d_max", raster.d_max}};
  std::ofstream side(sidecar_path(f32_path));
  if (!side) throw DatasetError("cannot write " + sidecar_path(f32_path).string());
  side << meta.dump(2) << '\n';
}

DepthRaster read_depth_raster(const std::filesystem::path& f32_path) {
  const auto side_path = sidecar_path(f32_path);
  std::ifstream side(side_path);
  if (!side) throw DatasetError("missing depth sidecar " + side_path.string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(side_path.string() + ": " + e.what());
  }
  DepthRaster r;
  int w = 0, h = 0;
  try {
    w = meta.at("width").get<int>();
    h = meta.at("height").get<int>();
    const std::string space = meta.at("space").get<std::string>();
    if (space != "meters" && space != "log01") throw DatasetError(side_path.string() + ": unknown space " + space);
    r.space = space == "meters" ? DepthSpace::meters : DepthSpace::log01;
    r.alpha = meta.at("alpha").get<double>();
    r.d_max = meta.at("d_max").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(side_path.string() + ": " + e.what());
  }
  if (w <= 0 || h <= 0) throw DatasetError(side_path.string() + ": invalid raster size");
  std::ifstream in(f32_path, std::ios::binary);
  if (!in) throw DatasetError("cannot open depth raster " + f32_path.string());
  r.data = ArrayRM<double>::Zero(h, w);
  r.valid = BoolPlane::Constant(h, w, false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      unsigned char b[4];
      if (!in.read(reinterpret_cast<char*>(b), 4)) throw DatasetError(f32_path.string() + ": truncated raster");
      const std::uint32_t bits =
          std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
      const double v = std::bit_cast<float>(bits);
      const bool ok = std::isfinite(v) && (r.space == DepthSpace::log01 || v > 0.0);
      r.valid(y, x) = ok;
      r.data(y, x) = ok ? v : 0.0;
    }
  return r;
}

}  // namespace fusedepth
