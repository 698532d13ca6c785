#include "fusedepth/rdr_refine.hpp"

#include <algorithm>
#include <stdexcept>

namespace fusedepth {

std::vector<std::pair<int, int>> neighbor_ring(int neighbors) {
  if (neighbors < 1) throw std::invalid_argument("neighbour count must be positive");
  int radius = 1;
  while ((2 * radius + 1) * (2 * radius + 1) - 1 < neighbors) ++radius;
  std::vector<std::pair<int, int>> cells;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dy != 0 || dx != 0) cells.emplace_back(dy, dx);
  // Nearest first; ties keep raster order.
  std::stable_sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
  });
  cells.resize(std::size_t(neighbors));
  return cells;
}

}  // namespace fusedepth
