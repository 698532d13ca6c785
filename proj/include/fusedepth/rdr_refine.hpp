#pragma once

#include "fusedepth/backbones.hpp"
#include "fusedepth/layers.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace fusedepth {

// ---------------------------------------------------------------------------
// Temporal recurrence.

/// Convolutional GRU. The emitted temporal feature is the new state.
template <typename Scalar>
class ConvGru {
 public:
  struct Result {
    Var<Scalar> features;
    Var<Scalar> state;
  };

  ConvGru() = default;
  ConvGru(ParameterStore<Scalar>& store, const std::string& name, int input_channels, int state_channels,
          Initializer& init)
      : state_channels_(state_channels) {
    const int in = input_channels + state_channels;
    const double std = 1.0 / std::sqrt(double(in * 9));
    update_ = Conv2d<Scalar>(store, name + ".update", in, state_channels, 3, 1, std, init);
    reset_ = Conv2d<Scalar>(store, name + ".reset", in, state_channels, 3, 1, std, init);
    candidate_ = Conv2d<Scalar>(store, name + ".candidate", in, state_channels, 3, 1, std, init);
  }

  Var<Scalar> zero_state(int height, int width) const {
    return Var<Scalar>::constant(Tensor<Scalar>::zeros({state_channels_, height, width}));
  }

  Result operator()(const Var<Scalar>& input, const Var<Scalar>& state) const {
    const Shape expected{state_channels_, input.shape().height, input.shape().width};
    if (state.shape() != expected)
      throw ShapeError("recurrent state " + to_string(state.shape()) + " does not match " + to_string(expected));
    const Var<Scalar> joint = concat_channels<Scalar>({input, state});
    const Var<Scalar> z = sigmoid(update_(joint));
    const Var<Scalar> r = sigmoid(reset_(joint));
    const Var<Scalar> candidate = tanh(candidate_(concat_channels<Scalar>({input, r * state})));
    const Var<Scalar> next = state + z * (candidate - state);
    return {next, next};
  }

  int state_channels() const { return state_channels_; }
  Conv2d<Scalar>& update() { return update_; }
  Conv2d<Scalar>& reset() { return reset_; }
  Conv2d<Scalar>& candidate() { return candidate_; }

 private:
  int state_channels_ = 0;
  Conv2d<Scalar> update_;
  Conv2d<Scalar> reset_;
  Conv2d<Scalar> candidate_;
};

// ---------------------------------------------------------------------------
// Output heads.

/// 3x3 convolution + sigmoid, resized to the output resolution.
template <typename Scalar>
class CoarseDepthHead {
 public:
  CoarseDepthHead() = default;
  CoarseDepthHead(ParameterStore<Scalar>& store, const std::string& name, int in_channels, Initializer& init)
      : conv_(store, name, in_channels, 1, 3, 1, 0.01, init) {}

  Var<Scalar> operator()(const Var<Scalar>& features, int out_h, int out_w) const {
    return resize_bilinear(sigmoid(conv_(features)), out_h, out_w);
  }

  Conv2d<Scalar>& conv() { return conv_; }

 private:
  Conv2d<Scalar> conv_;
};

template <typename Scalar>
struct AffinityPrediction {
  Var<Scalar> raw;      // K x H x W, unbounded
  Var<Scalar> offsets;  // 2K x H x W as (dy, dx) pairs, |.| < radius
};

/// Raw affinities and residual neighbour offsets for K neighbours.
template <typename Scalar>
class AffinityHead {
 public:
  AffinityHead() = default;
  AffinityHead(ParameterStore<Scalar>& store, const std::string& name, int in_channels, int neighbors,
               double offset_radius, Initializer& init)
      : affinity_(store, name + ".affinity", in_channels, neighbors, 3, 1, 0.01, init),
        offset_(store, name + ".offset", in_channels, 2 * neighbors, 3, 1, 0.01, init),
        radius_(offset_radius) {}

  AffinityPrediction<Scalar> operator()(const Var<Scalar>& features) const {
    return {affinity_(features), scale(tanh(offset_(features)), Scalar(radius_))};
  }

  int neighbors() const { return affinity_.out_channels(); }
  double radius() const { return radius_; }
  Conv2d<Scalar>& affinity() { return affinity_; }
  Conv2d<Scalar>& offset() { return offset_; }

 private:
  Conv2d<Scalar> affinity_;
  Conv2d<Scalar> offset_;
  double radius_ = 3.0;
};

/// Confidence in (0,1) from decoded features and the stacked fused masks,
/// via channel attention and a 1x1 convolution.
template <typename Scalar>
class ConfidenceHead {
 public:
  ConfidenceHead() = default;
  ConfidenceHead(ParameterStore<Scalar>& store, const std::string& name, int feature_channels, int mask_channels,
                 Initializer& init)
      : attention_(store, name + ".attention", feature_channels + mask_channels, init),
        conv_(store, name + ".conv", feature_channels + mask_channels, 1, 1, 1,
              he_std(feature_channels + mask_channels) * 0.5, init) {}

  Var<Scalar> operator()(const Var<Scalar>& features, const Var<Scalar>& mask_stack) const {
    const Var<Scalar> masks = resize_bilinear(mask_stack, features.shape().height, features.shape().width);
    return sigmoid(conv_(attention_(concat_channels<Scalar>({features, masks}))));
  }

  ChannelAttention<Scalar>& attention() { return attention_; }
  Conv2d<Scalar>& conv() { return conv_; }

 private:
  ChannelAttention<Scalar> attention_;
  Conv2d<Scalar> conv_;
};

/// Parameter-domain violation (for example a non-positive normaliser).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// w = c * tanh(raw) / gamma, with c (1,H,W) and gamma (1,1,1).
template <typename Scalar>
Var<Scalar> normalize_affinity(const Var<Scalar>& raw, const Var<Scalar>& confidence, const Var<Scalar>& gamma) {
  if (gamma.shape().size() != 1) throw ShapeError("gamma must be a scalar");
  if (!(gamma.item() > Scalar(0))) throw DomainError("affinity normaliser gamma must be positive");
  const Var<Scalar> inv_gamma = make_node<Scalar>(
      Tensor<Scalar>::constant({1, 1, 1}, Scalar(1) / gamma.item()), {gamma.node()}, [](Node<Scalar>& n) {
        const Scalar g = n.parents[0]->value.values()(0, 0);
        n.parents[0]->grad_buffer()(0, 0) -= n.grad.values()(0, 0) / (g * g);
      });
  return tanh(raw) * confidence * inv_gamma;
}

/// Fixed neighbour pattern: the K nearest integer displacements around a
/// pixel, excluding itself (K = 8 gives the 3x3 ring).
std::vector<std::pair<int, int>> neighbor_ring(int neighbors);

/// Adds the ring displacements to residual offsets (2K x H x W).
template <typename Scalar>
Var<Scalar> ring_displacements(const Var<Scalar>& offsets) {
  const Shape s = offsets.shape();
  const auto ring = neighbor_ring(s.channels / 2);
  Tensor<Scalar> base({s.channels, 1, 1});
  for (std::size_t k = 0; k < ring.size(); ++k) {
    base(int(2 * k), 0, 0) = Scalar(ring[k].first);
    base(int(2 * k + 1), 0, 0) = Scalar(ring[k].second);
  }
  return offsets + Var<Scalar>::constant(std::move(base));
}

namespace detail {

/// Bilinear tap of one (neighbour, pixel) sample with border clamping.
struct SampleTap {
  int i00, i01, i10, i11;
  double fy, fx;
  bool clamped_y, clamped_x;
};

template <typename Scalar>
Scalar sample_tap(const Scalar* d, const SampleTap& t) {
  const Scalar fy = Scalar(t.fy), fx = Scalar(t.fx);
  return (1 - fy) * ((1 - fx) * d[t.i00] + fx * d[t.i01]) + fy * ((1 - fx) * d[t.i10] + fx * d[t.i11]);
}

}  // namespace detail

/// Iterative non-local propagation. For T iterations,
///   d(p) <- (1 - sum_k w_k(p)) d(p) + sum_k w_k(p) d(p + disp_k(p)),
/// sampling fractional positions bilinearly and clamping at the border.
/// `displacement` holds absolute (dy, dx) per neighbour.
template <typename Scalar>
Var<Scalar> propagate(const Var<Scalar>& seed, const Var<Scalar>& affinity, const Var<Scalar>& displacement,
                      int iterations) {
  const Shape s = seed.shape();
  const int k_count = affinity.shape().channels;
  if (s.channels != 1) throw ShapeError("propagate: seed must be single channel");
  if (affinity.shape() != Shape{k_count, s.height, s.width} ||
      displacement.shape() != Shape{2 * k_count, s.height, s.width})
    throw ShapeError("propagate: affinity/displacement shapes do not match seed " + to_string(s));
  if (iterations < 0) throw std::invalid_argument("propagate: negative iteration count");

  const int h = s.height;
  const int w = s.width;
  const int n = h * w;
  std::vector<detail::SampleTap> taps(std::size_t(k_count) * n);
  for (int k = 0; k < k_count; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double py = y + double(displacement.value()(2 * k, y, x));
        const double px = x + double(displacement.value()(2 * k + 1, y, x));
        const double cy = std::clamp(py, 0.0, double(h - 1));
        const double cx = std::clamp(px, 0.0, double(w - 1));
        const int y0 = std::min(int(std::floor(cy)), h - 1);
        const int x0 = std::min(int(std::floor(cx)), w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const int x1 = std::min(x0 + 1, w - 1);
        taps[std::size_t(k) * n + y * w + x] = {y0 * w + x0, y0 * w + x1, y1 * w + x0,       y1 * w + x1,
                                                cy - y0,     cx - x0,     cy != py || h == 1, cx != px || w == 1};
      }

  const auto& wv = affinity.value().values();
  const ArrayRM<Scalar> self_weight = Scalar(1) - wv.colwise().sum();

  std::vector<ArrayRM<Scalar>> history;
  history.reserve(std::size_t(iterations) + 1);
  history.push_back(seed.value().values());
  for (int it = 0; it < iterations; ++it) {
    const ArrayRM<Scalar>& cur = history.back();
    ArrayRM<Scalar> next = self_weight * cur;
    for (int k = 0; k < k_count; ++k)
      for (int p = 0; p < n; ++p) next(0, p) += wv(k, p) * detail::sample_tap(cur.data(), taps[std::size_t(k) * n + p]);
    history.push_back(std::move(next));
  }

  Tensor<Scalar> out(s, history.back());
  return make_node<Scalar>(
      std::move(out), {seed.node(), affinity.node(), displacement.node()},
      [taps = std::move(taps), history = std::move(history), self_weight, k_count, n](Node<Scalar>& node) {
        auto& seed_n = *node.parents[0];
        auto& aff_n = *node.parents[1];
        auto& disp_n = *node.parents[2];
        const auto& wv = aff_n.value.values();
        ArrayRM<Scalar> g = node.grad.values();
        ArrayRM<Scalar> g_aff = ArrayRM<Scalar>::Zero(k_count, n);
        ArrayRM<Scalar> g_disp = ArrayRM<Scalar>::Zero(2 * k_count, n);
        for (std::size_t t = history.size() - 1; t-- > 0;) {
          const Scalar* d = history[t].data();
          ArrayRM<Scalar> g_prev = self_weight * g;
          for (int k = 0; k < k_count; ++k)
            for (int p = 0; p < n; ++p) {
              const Scalar gp = g(0, p);
              if (gp == Scalar(0)) continue;
              const auto& tap = taps[std::size_t(k) * n + p];
              const Scalar wk = wv(k, p);
              g_aff(k, p) += gp * (detail::sample_tap(d, tap) - d[p]);
              const Scalar fy = Scalar(tap.fy), fx = Scalar(tap.fx);
              const Scalar gw = gp * wk;
              g_prev(0, tap.i00) += gw * (1 - fy) * (1 - fx);
              g_prev(0, tap.i01) += gw * (1 - fy) * fx;
              g_prev(0, tap.i10) += gw * fy * (1 - fx);
              g_prev(0, tap.i11) += gw * fy * fx;
              if (!tap.clamped_y) g_disp(2 * k, p) += gw * ((1 - fx) * (d[tap.i10] - d[tap.i00]) + fx * (d[tap.i11] - d[tap.i01]));
              if (!tap.clamped_x) g_disp(2 * k + 1, p) += gw * ((1 - fy) * (d[tap.i01] - d[tap.i00]) + fy * (d[tap.i11] - d[tap.i10]));
            }
          g = std::move(g_prev);
        }
        if (seed_n.requires_grad) seed_n.accumulate(g);
        if (aff_n.requires_grad) aff_n.accumulate(g_aff);
        if (disp_n.requires_grad) disp_n.accumulate(g_disp);
      });
}

// ---------------------------------------------------------------------------
// Full refinement module.

struct RdrConfig {
  int fused_channels = 128;
  int state_channels = 32;
  /// Skip channels per shallow pyramid level, finest first.
  std::vector<int> skip_channels{32, 64};
  /// Decoder widths per shallow level (finest first) plus the full-resolution stage.
  std::vector<int> decoder_channels{16, 32};
  int output_channels = 16;
  int mask_channels = 3;
  int neighbors = 8;
  double offset_radius = 3.0;
  double gamma_init = 8.0;
  int iterations = 18;
};

template <typename Scalar>
struct RdrOutput {
  Var<Scalar> refined;     // 1 x H x W log-depth in [0,1]
  Var<Scalar> coarse;      // 1 x H x W
  Var<Scalar> confidence;  // 1 x H x W
  Var<Scalar> raw_affinity;
  Var<Scalar> offsets;
  Var<Scalar> affinity;  // normalised
  Var<Scalar> temporal;  // recurrent output at the fusion level
  Var<Scalar> decoded;   // full-resolution decoder features
  Var<Scalar> state;
};

/// Recurrent decoder with coarse depth, affinity and confidence heads and
/// confidence-normalised spatial propagation.
template <typename Scalar>
class RdrModule {
 public:
  RdrModule() = default;
  RdrModule(ParameterStore<Scalar>& store, const std::string& name, const RdrConfig& cfg, Initializer& init)
      : cfg_(cfg) {
    if (cfg.skip_channels.size() != cfg.decoder_channels.size())
      throw ConfigError("decoder needs one width per skip level");
    if (cfg.neighbors < 1) throw ConfigError("neighbour count must be positive");
    if (cfg.gamma_init <= 0) throw ConfigError("gamma_init must be positive");
    gru_ = ConvGru<Scalar>(store, name + ".gru", cfg.fused_channels, cfg.state_channels, init);
    int c_in = cfg.state_channels;
    for (int l = int(cfg.skip_channels.size()) - 1; l >= 0; --l) {
      const int in = c_in + cfg.skip_channels[std::size_t(l)];
      decoder_.emplace_back(store, name + ".decoder.level" + std::to_string(l + 1), in,
                            cfg.decoder_channels[std::size_t(l)], 3, 1, he_std(in * 9), init);
      c_in = cfg.decoder_channels[std::size_t(l)];
    }
    output_ = Conv2d<Scalar>(store, name + ".decoder.output", c_in, cfg.output_channels, 3, 1, he_std(c_in * 9), init);
    coarse_ = CoarseDepthHead<Scalar>(store, name + ".coarse_head", cfg.output_channels, init);
    affinity_ = AffinityHead<Scalar>(store, name + ".affinity_head", cfg.output_channels, cfg.neighbors,
                                     cfg.offset_radius, init);
    confidence_ = ConfidenceHead<Scalar>(store, name + ".confidence_head", cfg.output_channels, cfg.mask_channels, init);
    log_gamma_ = store.add(name + ".log_gamma", Tensor<Scalar>::constant({1, 1, 1}, Scalar(std::log(cfg.gamma_init))));
  }

  Var<Scalar> zero_state(int fused_h, int fused_w) const { return gru_.zero_state(fused_h, fused_w); }

  /// `skips` holds the concatenated branch features of every shallow
  /// pyramid level, finest first.
  RdrOutput<Scalar> operator()(const Var<Scalar>& fused, const Var<Scalar>& mask_stack, const Var<Scalar>& state,
                               const std::vector<Var<Scalar>>& skips, int out_h, int out_w) const {
    if (skips.size() != cfg_.skip_channels.size())
      throw ShapeError("expected " + std::to_string(cfg_.skip_channels.size()) + " skip levels");
    RdrOutput<Scalar> out;
    auto rec = gru_(fused, state);
    out.temporal = rec.features;
    out.state = rec.state;

    Var<Scalar> x = rec.features;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const Var<Scalar>& skip = skips[skips.size() - 1 - i];
      x = resize_bilinear(x, skip.shape().height, skip.shape().width);
      x = elu(decoder_[i](concat_channels<Scalar>({x, skip})));
    }
    x = elu(output_(resize_bilinear(x, out_h, out_w)));
    out.decoded = x;

    out.coarse = coarse_(x, out_h, out_w);
    const AffinityPrediction<Scalar> aff = affinity_(x);
    out.raw_affinity = aff.raw;
    out.offsets = aff.offsets;
    out.confidence = confidence_(x, mask_stack);
    out.affinity = normalize_affinity(aff.raw, out.confidence, gamma());
    out.refined = propagate(out.coarse, out.affinity, ring_displacements(aff.offsets), cfg_.iterations);
    return out;
  }

  Var<Scalar> gamma() const { return exp(log_gamma_); }

  const RdrConfig& config() const { return cfg_; }
  ConvGru<Scalar>& gru() { return gru_; }
  CoarseDepthHead<Scalar>& coarse_head() { return coarse_; }
  AffinityHead<Scalar>& affinity_head() { return affinity_; }
  ConfidenceHead<Scalar>& confidence_head() { return confidence_; }
  std::vector<Conv2d<Scalar>>& decoder() { return decoder_; }
  Conv2d<Scalar>& output_conv() { return output_; }

 private:
  RdrConfig cfg_;
  ConvGru<Scalar> gru_;
  std::vector<Conv2d<Scalar>> decoder_;
  Conv2d<Scalar> output_;
  CoarseDepthHead<Scalar> coarse_;
  AffinityHead<Scalar> affinity_;
  ConfidenceHead<Scalar> confidence_;
  Var<Scalar> log_gamma_;
};

}  // namespace fusedepth
