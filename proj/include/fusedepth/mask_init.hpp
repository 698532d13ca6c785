#pragma once

#include "fusedepth/event_core.hpp"
#include "fusedepth/layers.hpp"

#include <string>
#include <vector>

namespace fusedepth {

/// Patch sizes of the multi-scale event density stack.
inline const std::vector<int> kDefaultDensityPatches{8, 16, 32};

/// Counts nonzero cells of `plane` (H x W) per non-overlapping patch and
/// divides by the mean patch count; every pixel carries its patch's value.
/// Sizes that do not divide H or W are handled by replicate padding.
ArrayRM<double> patch_density(const ArrayRM<double>& plane, int patch);

/// Density of events over all bins of the grid (a cell counts once if any
/// bin is nonzero there).
ArrayRM<double> patch_density(const VoxelGrid& grid, int patch);

/// S x H x W stack: per scale, per-bin densities averaged over the bins that
/// contain events.
Tensor<double> density_stack(const VoxelGrid& grid, const std::vector<int>& patches = kDefaultDensityPatches);

/// Gradient magnitude sqrt(Gx^2 + Gy^2) of a 1 x H x W image with the 3x3
/// Sobel kernels and replicate padding.
Tensor<double> sobel_edges(const Tensor<double>& frame);

enum class MaskSource { event, frame, fused };

template <typename Scalar>
struct ReliabilityMask {
  Var<Scalar> data;  // 1 x H x W
  MaskSource source = MaskSource::event;
};

/// Learnable 3x3 head mapping a prior (density stack or edge map) to a
/// single-channel mask. Weights start small (std 0.01) with zero bias.
template <typename Scalar>
class MaskHead {
 public:
  MaskHead() = default;
  MaskHead(ParameterStore<Scalar>& store, const std::string& name, int in_channels, MaskSource source,
           Initializer& init, double weight_std = 0.01)
      : conv_(store, name, in_channels, 1, 3, 1, weight_std, init), source_(source) {}

  ReliabilityMask<Scalar> operator()(const Var<Scalar>& prior) const {
    if (prior.shape().channels != conv_.in_channels())
      throw ShapeError("mask head expects " + std::to_string(conv_.in_channels()) + " channels, got " +
                       to_string(prior.shape()));
    return {conv_(prior), source_};
  }

  Conv2d<Scalar>& conv() { return conv_; }
  const Conv2d<Scalar>& conv() const { return conv_; }

 private:
  Conv2d<Scalar> conv_;
  MaskSource source_ = MaskSource::event;
};

/// Event mask from a voxel grid's density stack.
template <typename Scalar>
ReliabilityMask<Scalar> init_event_mask(const VoxelGrid& grid, const MaskHead<Scalar>& head,
                                        const std::vector<int>& patches = kDefaultDensityPatches) {
  return head(Var<Scalar>::constant(density_stack(grid, patches).template cast<Scalar>()));
}

/// Frame mask from the Sobel edge magnitude of a grayscale frame.
template <typename Scalar>
ReliabilityMask<Scalar> init_frame_mask(const Tensor<double>& frame, const MaskHead<Scalar>& head) {
  return head(Var<Scalar>::constant(sobel_edges(frame).template cast<Scalar>()));
}

/// Chain of stride-2 3x3 single-channel convolutions bringing a mask to the
/// resolution of a pyramid level. Starts as a 3x3 box filter.
template <typename Scalar>
class MaskDownsampler {
 public:
  MaskDownsampler() = default;
  MaskDownsampler(ParameterStore<Scalar>& store, const std::string& name, int levels, Initializer& init) {
    for (int l = 0; l < levels; ++l) {
      Conv2d<Scalar> conv(store, name + ".level" + std::to_string(l + 1), 1, 1, 3, 2, 0.0, init);
      conv.weight().mutable_value().values().setConstant(Scalar(1.0 / 9.0));
      stages_.push_back(conv);
    }
  }

  Var<Scalar> operator()(Var<Scalar> mask) const {
    for (const auto& s : stages_) mask = s(mask);
    return mask;
  }

  int levels() const { return int(stages_.size()); }

 private:
  std::vector<Conv2d<Scalar>> stages_;
};

}  // namespace fusedepth
