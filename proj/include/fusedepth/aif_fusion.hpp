#pragma once

#include "fusedepth/backbones.hpp"
#include "fusedepth/layers.hpp"

#include <string>
#include <vector>

namespace fusedepth {

/// Mask emphasis F * (1 + M); the mask (1,H,W) broadcasts over channels.
template <typename Scalar>
Var<Scalar> emphasize(const Var<Scalar>& features, const Var<Scalar>& mask) {
  const Shape f = features.shape();
  const Shape m = mask.shape();
  if (m.channels != 1 || m.height != f.height || m.width != f.width)
    throw ShapeError("emphasize: mask " + to_string(m) + " does not match features " + to_string(f));
  return features * add_scalar(mask, Scalar(1));
}

/// Channel attention followed by a 3x3 convolution.
template <typename Scalar>
class AttentionFuse {
 public:
  AttentionFuse() = default;
  AttentionFuse(ParameterStore<Scalar>& store, const std::string& name, int in_channels, int out_channels,
                Initializer& init)
      : attention_(store, name + ".attention", in_channels, init),
        conv_(store, name + ".conv", in_channels, out_channels, 3, 1, he_std(in_channels * 9) * 0.5, init) {}

  Var<Scalar> operator()(const Var<Scalar>& x) const { return conv_(attention_(x)); }

  ChannelAttention<Scalar>& attention() { return attention_; }
  Conv2d<Scalar>& conv() { return conv_; }

 private:
  ChannelAttention<Scalar> attention_;
  Conv2d<Scalar> conv_;
};

/// 1x1 convolution + sigmoid producing a mask in (0,1).
template <typename Scalar>
class FusedMaskHead {
 public:
  FusedMaskHead() = default;
  FusedMaskHead(ParameterStore<Scalar>& store, const std::string& name, int in_channels, Initializer& init)
      : conv_(store, name, in_channels, 1, 1, 1, 0.01, init) {}

  Var<Scalar> operator()(const Var<Scalar>& fused) const { return sigmoid(conv_(fused)); }

  Conv2d<Scalar>& conv() { return conv_; }

 private:
  Conv2d<Scalar> conv_;
};

template <typename Scalar>
struct ClBlockState {
  Var<Scalar> event_features;  // C x H x W
  Var<Scalar> frame_features;  // C x H x W
  Var<Scalar> event_mask;      // 1 x H x W
  Var<Scalar> frame_mask;      // 1 x H x W
};

template <typename Scalar>
struct ClBlockOutput {
  ClBlockState<Scalar> state;
  Var<Scalar> fused;       // 2C x H x W
  Var<Scalar> fused_mask;  // 1 x H x W, in (0,1)
};

/// Consensus-learning block. Non-final blocks fuse the concatenated,
/// mask-emphasised features, feed the two halves of the result back to the
/// branches (event half first) and add the fused mask to both branch masks.
/// The final block sums the emphasised features instead and has no feedback.
template <typename Scalar>
class ClBlock {
 public:
  ClBlock() = default;
  ClBlock(ParameterStore<Scalar>& store, const std::string& name, int channels, bool is_last, Initializer& init)
      : channels_(channels),
        is_last_(is_last),
        fuse_(store, name + ".fuse", is_last ? channels : 2 * channels, 2 * channels, init),
        mask_head_(store, name + ".mask_head", 2 * channels, init) {}

  ClBlockOutput<Scalar> operator()(const ClBlockState<Scalar>& in) const {
    check(in);
    const Var<Scalar> fe = emphasize(in.event_features, in.event_mask);
    const Var<Scalar> fi = emphasize(in.frame_features, in.frame_mask);
    ClBlockOutput<Scalar> out;
    out.fused = is_last_ ? fuse_(fe + fi) : fuse_(concat_channels<Scalar>({fe, fi}));
    if (out.fused.shape().channels != 2 * channels_)
      throw ConfigError("fused feature has " + std::to_string(out.fused.shape().channels) +
                        " channels; cannot split into two halves of " + std::to_string(channels_));
    out.fused_mask = mask_head_(out.fused);
    if (is_last_) {
      out.state = in;
      return out;
    }
    out.state.event_features = in.event_features + slice_channels(out.fused, 0, channels_);
    out.state.frame_features = in.frame_features + slice_channels(out.fused, channels_, channels_);
    out.state.event_mask = in.event_mask + out.fused_mask;
    out.state.frame_mask = in.frame_mask + out.fused_mask;
    return out;
  }

  bool is_last() const { return is_last_; }
  int channels() const { return channels_; }
  AttentionFuse<Scalar>& fuse() { return fuse_; }
  FusedMaskHead<Scalar>& mask_head() { return mask_head_; }

 private:
  void check(const ClBlockState<Scalar>& s) const {
    const Shape e = s.event_features.shape();
    if (e != s.frame_features.shape())
      throw ShapeError("CL block: event " + to_string(e) + " vs frame " + to_string(s.frame_features.shape()));
    if (e.channels != channels_)
      throw ShapeError("CL block expects " + std::to_string(channels_) + " channels, got " + to_string(e));
    const Shape m{1, e.height, e.width};
    if (s.event_mask.shape() != m || s.frame_mask.shape() != m)
      throw ShapeError("CL block: masks must be " + to_string(m));
  }

  int channels_ = 0;
  bool is_last_ = false;
  AttentionFuse<Scalar> fuse_;
  FusedMaskHead<Scalar> mask_head_;
};

template <typename Scalar>
struct FusionOutput {
  Var<Scalar> fused;       // 2C x H' x W'
  Var<Scalar> mask_stack;  // n_blocks x H' x W'
  std::vector<Var<Scalar>> fused_masks;
};

/// Chain of CL blocks at the deepest pyramid level.
template <typename Scalar>
class AifModule {
 public:
  AifModule() = default;
  AifModule(ParameterStore<Scalar>& store, const std::string& name, int channels, int blocks, Initializer& init) {
    if (blocks < 1) throw ConfigError("the fusion module needs at least one CL block");
    for (int b = 0; b < blocks; ++b)
      blocks_.emplace_back(store, name + ".block" + std::to_string(b + 1), channels, b + 1 == blocks, init);
  }

  /// Masks must already be at the deepest level's resolution.
  FusionOutput<Scalar> operator()(const FeaturePyramid<Scalar>& frame, const FeaturePyramid<Scalar>& event,
                                  const Var<Scalar>& frame_mask, const Var<Scalar>& event_mask) const {
    if (frame.levels.size() != event.levels.size())
      throw ShapeError("event and frame pyramids have different depths");
    for (std::size_t l = 0; l < frame.levels.size(); ++l)
      if (frame.levels[l].shape() != event.levels[l].shape())
        throw ShapeError("pyramid level " + std::to_string(l + 1) + " shapes differ");
    return run({event.deepest(), frame.deepest(), event_mask, frame_mask});
  }

  FusionOutput<Scalar> run(ClBlockState<Scalar> state) const {
    FusionOutput<Scalar> out;
    for (const auto& block : blocks_) {
      ClBlockOutput<Scalar> r = block(state);
      out.fused_masks.push_back(r.fused_mask);
      out.fused = r.fused;
      state = std::move(r.state);
    }
    out.mask_stack = concat_channels(out.fused_masks);
    return out;
  }

  int block_count() const { return int(blocks_.size()); }
  std::vector<ClBlock<Scalar>>& blocks() { return blocks_; }

 private:
  std::vector<ClBlock<Scalar>> blocks_;
};

}  // namespace fusedepth
