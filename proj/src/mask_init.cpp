#include "fusedepth/mask_init.hpp"

#include <algorithm>
#include <cmath>

namespace fusedepth {

namespace {

ArrayRM<double> replicate_pad(const ArrayRM<double>& plane, int rows, int cols) {
  ArrayRM<double> out(rows, cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x)
      out(y, x) = plane(std::min<int>(y, int(plane.rows()) - 1), std::min<int>(x, int(plane.cols()) - 1));
  return out;
}

ArrayRM<double> density_from_occupancy(const ArrayRM<double>& occupied, int patch) {
  if (patch <= 0) throw std::invalid_argument("patch size must be positive");
  const int h = int(occupied.rows());
  const int w = int(occupied.cols());
  const int gh = (h + patch - 1) / patch;
  const int gw = (w + patch - 1) / patch;
  const ArrayRM<double> padded = replicate_pad(occupied, gh * patch, gw * patch);

  ArrayRM<double> counts(gh, gw);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) counts(py, px) = padded.block(py * patch, px * patch, patch, patch).sum();

  ArrayRM<double> out = ArrayRM<double>::Zero(h, w);
  const double mean = counts.mean();
  if (mean <= 0.0) return out;
  counts /= mean;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = counts(y / patch, x / patch);
  return out;
}

}  // namespace

ArrayRM<double> patch_density(const ArrayRM<double>& plane, int patch) {
  return density_from_occupancy((plane != 0.0).cast<double>(), patch);
}

ArrayRM<double> patch_density(const VoxelGrid& grid, int patch) {
  ArrayRM<double> occupied = ArrayRM<double>::Zero(grid.height(), grid.width());
  for (int b = 0; b < grid.bins(); ++b) occupied = occupied.max((grid.data.plane(b) != 0.0).cast<double>());
  return density_from_occupancy(occupied, patch);
}

Tensor<double> density_stack(const VoxelGrid& grid, const std::vector<int>& patches) {
  Tensor<double> out = Tensor<double>::zeros({int(patches.size()), grid.height(), grid.width()});
  for (std::size_t s = 0; s < patches.size(); ++s) {
    if (patches[s] <= 0) throw std::invalid_argument("patch size must be positive");
    int populated = 0;
    auto plane = out.plane(int(s));
    for (int b = 0; b < grid.bins(); ++b) {
      const ArrayRM<double> bin = grid.data.plane(b);
      if ((bin != 0.0).any()) {
        plane += patch_density(bin, patches[s]);
        ++populated;
      }
    }
    if (populated > 0) plane /= double(populated);
  }
  return out;
}

Tensor<double> sobel_edges(const Tensor<double>& frame) {
  if (frame.channels() != 1) throw ShapeError("sobel_edges expects a single-channel frame");
  const Tensor<double> gx = sobel(frame, Axis::x);
  const Tensor<double> gy = sobel(frame, Axis::y);
  return Tensor<double>(frame.shape(), (gx.values().square() + gy.values().square()).sqrt());
}

}  // namespace fusedepth
