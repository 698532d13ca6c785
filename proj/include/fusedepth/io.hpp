#pragma once

#include "fusedepth/objective_metrics.hpp"
#include "fusedepth/tensor.hpp"

#include <filesystem>
#include <stdexcept>

namespace fusedepth {

/// Missing or malformed on-disk data. The message names the file.
class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary 8-bit PGM (P5) scaled to [0,1] as a 1 x H x W tensor.
Tensor<double> load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const Tensor<double>& image);

/// Colour image (P6) of a depth raster through a fixed perceptual colormap
/// over [lo, hi]; invalid pixels are black.
void save_depth_ppm(const std::filesystem::path& path, const DepthRaster& raster, double lo, double hi);

/// Little-endian float32 row-major samples plus a JSON sidecar
/// {width, height, space, alpha, d_max} next to it (same stem, .json).
/// Invalid pixels are stored as NaN.
void write_depth_raster(const std::filesystem::path& f32_path, const DepthRaster& raster);
DepthRaster read_depth_raster(const std::filesystem::path& f32_path);

}  // namespace fusedepth
