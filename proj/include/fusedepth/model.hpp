#pragma once

#include "fusedepth/aif_fusion.hpp"
#include "fusedepth/backbones.hpp"
#include "fusedepth/data_harness.hpp"
#include "fusedepth/mask_init.hpp"
#include "fusedepth/rdr_refine.hpp"

#include <string>
#include <vector>

namespace fusedepth {

struct NetworkConfig {
  int bins = 5;
  std::vector<int> density_patches{8, 16, 32};
  std::vector<int> encoder_channels{16, 32, 64};
  int cl_blocks = 3;
  int state_channels = 32;
  std::vector<int> decoder_channels{16, 32};
  int output_channels = 16;
  int neighbors = 8;
  double offset_radius = 3.0;
  double gamma_init = 8.0;
  int iterations = 18;
};

/// Fixed affine normalisation of frame intensities.
inline constexpr double kFrameMean = 0.5;
inline constexpr double kFrameStd = 0.25;

/// Network inputs for one time step.
template <typename Scalar>
struct StepInput {
  Tensor<Scalar> voxels;   // B x H x W
  Tensor<Scalar> frame;    // 1 x H x W, normalised
  Tensor<Scalar> density;  // S x H x W
  Tensor<Scalar> edges;    // 1 x H x W
};

/// Inputs of step `k` of a sample. With `zero_events` the event branch sees
/// an empty stream (zero voxels and density).
template <typename Scalar>
StepInput<Scalar> make_step_input(const SequenceSample& s, int k, bool zero_events = false) {
  StepInput<Scalar> in;
  in.voxels = s.voxels[std::size_t(k)].data.template cast<Scalar>();
  in.density = s.density[std::size_t(k)].template cast<Scalar>();
  if (zero_events) {
    in.voxels.set_zero();
    in.density.set_zero();
  }
  in.frame = s.frames[std::size_t(k)].template cast<Scalar>();
  in.frame.values() = (in.frame.values() - Scalar(kFrameMean)) / Scalar(kFrameStd);
  in.edges = s.edges[std::size_t(k)].template cast<Scalar>();
  return in;
}

template <typename Scalar>
struct StepOutput {
  RdrOutput<Scalar> rdr;
  FusionOutput<Scalar> fusion;
  ReliabilityMask<Scalar> event_mask;
  ReliabilityMask<Scalar> frame_mask;
};

/// Complete recurrent depth network: mask initialisation, two encoders,
/// fusion at the deepest level and recurrent refinement.
template <typename Scalar>
class DepthNet {
 public:
  DepthNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.encoder_channels.size() < 2) throw ConfigError("the encoder needs at least two levels");
    if (cfg.decoder_channels.size() != cfg.encoder_channels.size() - 1)
      throw ConfigError("decoder needs one width per shallow encoder level");
    Initializer init(seed);
    const int levels = int(cfg.encoder_channels.size());
    event_head_ = MaskHead<Scalar>(store_, "mask.event_head", int(cfg.density_patches.size()), MaskSource::event, init);
    frame_head_ = MaskHead<Scalar>(store_, "mask.frame_head", 1, MaskSource::frame, init);
    event_down_ = MaskDownsampler<Scalar>(store_, "mask.event_down", levels, init);
    frame_down_ = MaskDownsampler<Scalar>(store_, "mask.frame_down", levels, init);
    event_encoder_ = PyramidEncoder<Scalar>(store_, "encoder.event", cfg.bins, cfg.encoder_channels, Modality::event, init);
    frame_encoder_ = PyramidEncoder<Scalar>(store_, "encoder.frame", 1, cfg.encoder_channels, Modality::frame, init);
    aif_ = AifModule<Scalar>(store_, "aif", cfg.encoder_channels.back(), cfg.cl_blocks, init);
    RdrConfig r;
    r.fused_channels = 2 * cfg.encoder_channels.back();
    r.state_channels = cfg.state_channels;
    r.skip_channels.clear();
    for (int l = 0; l + 1 < levels; ++l) r.skip_channels.push_back(2 * cfg.encoder_channels[std::size_t(l)]);
    r.decoder_channels = cfg.decoder_channels;
    r.output_channels = cfg.output_channels;
    r.mask_channels = cfg.cl_blocks;
    r.neighbors = cfg.neighbors;
    r.offset_radius = cfg.offset_radius;
    r.gamma_init = cfg.gamma_init;
    r.iterations = cfg.iterations;
    rdr_ = RdrModule<Scalar>(store_, "rdr", r, init);
  }

  // Copies would share parameter nodes.
  DepthNet(const DepthNet&) = delete;
  DepthNet& operator=(const DepthNet&) = delete;

  int downsample_factor() const { return 1 << cfg_.encoder_channels.size(); }

  Var<Scalar> initial_state(int height, int width) const {
    return rdr_.zero_state(height / downsample_factor(), width / downsample_factor());
  }

  StepOutput<Scalar> step(const StepInput<Scalar>& in, const Var<Scalar>& state) const {
    const int h = in.frame.height(), w = in.frame.width();
    StepOutput<Scalar> out;
    out.event_mask = event_head_(Var<Scalar>::constant(in.density));
    out.frame_mask = frame_head_(Var<Scalar>::constant(in.edges));
    const FeaturePyramid<Scalar> ev = event_encoder_.encode(Var<Scalar>::constant(in.voxels));
    const FeaturePyramid<Scalar> fr = frame_encoder_.encode(Var<Scalar>::constant(in.frame));
    out.fusion = aif_(fr, ev, frame_down_(out.frame_mask.data), event_down_(out.event_mask.data));
    std::vector<Var<Scalar>> skips;
    for (std::size_t l = 0; l + 1 < ev.levels.size(); ++l)
      skips.push_back(concat_channels<Scalar>({ev.levels[l], fr.levels[l]}));
    out.rdr = rdr_(out.fusion.fused, out.fusion.mask_stack, state, skips, h, w);
    return out;
  }

  /// Runs a whole sequence from a zero state and returns the refined maps.
  std::vector<Var<Scalar>> run(const std::vector<StepInput<Scalar>>& steps) const {
    std::vector<Var<Scalar>> preds;
    if (steps.empty()) return preds;
    Var<Scalar> state = initial_state(steps.front().frame.height(), steps.front().frame.width());
    for (const auto& s : steps) {
      StepOutput<Scalar> o = step(s, state);
      state = o.rdr.state;
      preds.push_back(o.rdr.refined);
    }
    return preds;
  }

  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }
  const NetworkConfig& config() const { return cfg_; }
  const RdrModule<Scalar>& rdr() const { return rdr_; }

 private:
  NetworkConfig cfg_;
  ParameterStore<Scalar> store_;
  MaskHead<Scalar> event_head_, frame_head_;
  MaskDownsampler<Scalar> event_down_, frame_down_;
  PyramidEncoder<Scalar> event_encoder_, frame_encoder_;
  AifModule<Scalar> aif_;
  RdrModule<Scalar> rdr_;
};

}  // namespace fusedepth
