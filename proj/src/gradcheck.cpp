#include "fusedepth/gradcheck.hpp"

#include "fusedepth/aif_fusion.hpp"
#include "fusedepth/mask_init.hpp"
#include "fusedepth/model.hpp"
#include "fusedepth/objective_metrics.hpp"
#include "fusedepth/rdr_refine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace fusedepth {

namespace {

using S = CheckScalar;
using V = Var<S>;
using T = Tensor<S>;

T randn(Shape s, std::mt19937_64& rng, double stddev = 1.0, double mean = 0.0) {
  std::normal_distribution<double> n(mean, stddev);
  T t(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

T uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  T t(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

V input(Shape s, std::mt19937_64& rng, double stddev = 1.0) { return V::parameter(randn(s, rng, stddev)); }

std::vector<GradTarget> with_parameters(const ParameterStore<S>& store, std::vector<GradTarget> inputs) {
  for (const auto& e : store.entries()) inputs.push_back({e.name, e.var});
  return inputs;
}

/// Bumps every parameter so checks do not sit on special values (zero
/// biases, box-initialised filters).
void jitter(ParameterStore<S>& store, std::mt19937_64& rng, double stddev = 0.05) {
  for (auto& e : store.entries()) e.var.mutable_value().values() += randn(e.var.shape(), rng, stddev).values();
}

GradCheckCase make_case(std::string name, std::function<GradCheckReport(const GradCheckOptions&)> fn) {
  return {std::move(name), std::move(fn)};
}

}  // namespace

V projection_loss(const V& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(out * V::constant(randn(out.shape(), rng)));
}

GradCheckReport check_gradients(const std::string& name, const std::function<V()>& loss,
                                const std::vector<GradTarget>& targets, const GradCheckOptions& opt) {
  GradCheckReport report;
  report.name = name;
  for (const auto& t : targets) t.var.node()->grad = T();
  const V root = loss();
  backward(root);
  std::vector<T> analytic;
  for (const auto& t : targets) {
    T g = t.var.grad();
    g.values() *= S(1.0 + opt.corrupt);
    analytic.push_back(std::move(g));
  }

  std::mt19937_64 rng(opt.seed);
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    V var = targets[ti].var;
    const int n = var.value().size();
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opt.samples) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(std::size_t(opt.samples));
    }
    for (int i : idx) {
      S& slot = var.mutable_value().data()[i];
      const S orig = slot;
      slot = orig + S(opt.step);
      const S up = loss().item();
      slot = orig - S(opt.step);
      const S down = loss().item();
      slot = orig;
      const double numeric = double((up - down) / (2 * S(opt.step)));
      const double a = double(analytic[ti].data()[i]);
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      ++report.entries;
      if (err >= report.max_error) {
        report.max_error = err;
        std::ostringstream os;
        os << targets[ti].name << '[' << i << "] analytic " << a << " numeric " << numeric;
        report.worst = os.str();
      }
    }
  }
  report.passed = report.max_error <= opt.tolerance;
  return report;
}

std::vector<GradCheckCase> registered_gradient_checks() {
  std::vector<GradCheckCase> cases;

  cases.push_back(make_case("conv3x3", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(1);
    ParameterStore<S> store;
    Initializer init(2);
    Conv2d<S> conv(store, "conv", 3, 4, 3, 1, 0.3, init);
    jitter(store, rng);
    V x = input({3, 8, 8}, rng);
    return check_gradients("conv3x3", [&] { return projection_loss(conv(x), 9); }, with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("conv3x3_stride2", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(3);
    ParameterStore<S> store;
    Initializer init(4);
    Conv2d<S> conv(store, "conv", 3, 4, 3, 2, 0.3, init);
    jitter(store, rng);
    V x = input({3, 9, 7}, rng);
    return check_gradients("conv3x3_stride2", [&] { return projection_loss(conv(x), 9); },
                           with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("conv1x1", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(5);
    ParameterStore<S> store;
    Initializer init(6);
    Conv2d<S> conv(store, "conv", 5, 2, 1, 1, 0.3, init);
    jitter(store, rng);
    V x = input({5, 6, 6}, rng);
    return check_gradients("conv1x1", [&] { return projection_loss(conv(x), 9); }, with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("elementwise_ops", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(7);
    V a = input({3, 6, 6}, rng);
    V b = input({1, 6, 6}, rng);
    V c = input({3, 1, 1}, rng);
    auto f = [&] {
      V y = sigmoid(a) * b + tanh(a - c) + elu(a * c) + exp(scale(b, S(0.3))) + scale(square(a), S(0.1)) + rsub_scalar(S(2), a);
      return projection_loss(y, 9) + sum(abs(a));
    };
    return check_gradients("elementwise_ops", f, {{"a", a}, {"b", b}, {"c", c}}, o);
  }));

  cases.push_back(make_case("resample_ops", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(8);
    V a = input({2, 8, 6}, rng);
    auto f = [&] {
      V up = resize_bilinear(a, 13, 11);
      V down = avg_pool2(a);
      V edges = sobel(a, Axis::x) + sobel(a, Axis::y);
      V cat = concat_channels<S>({slice_channels(a, 1, 1), edges, a * global_avg_pool(a)});
      return projection_loss(up, 1) + projection_loss(down, 2) + projection_loss(cat, 3);
    };
    return check_gradients("resample_ops", f, {{"a", a}}, o);
  }));

  cases.push_back(make_case("masked_mean", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(9);
    V a = input({1, 8, 8}, rng);
    T valid = uniform({1, 8, 8}, rng, 0, 1);
    valid.values() = (valid.values() > 0.3).cast<S>();
    return check_gradients("masked_mean", [&] { return masked_mean(square(a), valid); }, {{"a", a}}, o);
  }));

  cases.push_back(make_case("channel_attention", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(10);
    ParameterStore<S> store;
    Initializer init(11);
    ChannelAttention<S> att(store, "att", 8, init);
    jitter(store, rng, 0.2);
    V x = input({8, 6, 6}, rng);
    return check_gradients("channel_attention", [&] { return projection_loss(att(x), 9); },
                           with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("event_mask_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(12);
    ParameterStore<S> store;
    Initializer init(13);
    MaskHead<S> head(store, "head", 3, MaskSource::event, init);
    jitter(store, rng, 0.2);
    V density = input({3, 16, 16}, rng);
    return check_gradients("event_mask_head", [&] { return projection_loss(head(density).data, 9); },
                           with_parameters(store, {{"density", density}}), o);
  }));

  cases.push_back(make_case("frame_mask_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(14);
    ParameterStore<S> store;
    Initializer init(15);
    MaskHead<S> head(store, "head", 1, MaskSource::frame, init);
    jitter(store, rng, 0.2);
    V edges = input({1, 16, 16}, rng);
    return check_gradients("frame_mask_head", [&] { return projection_loss(head(edges).data, 9); },
                           with_parameters(store, {{"edges", edges}}), o);
  }));

  cases.push_back(make_case("mask_downsampler", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(16);
    ParameterStore<S> store;
    Initializer init(17);
    MaskDownsampler<S> down(store, "down", 3, init);
    jitter(store, rng);
    V m = input({1, 16, 16}, rng);
    return check_gradients("mask_downsampler", [&] { return projection_loss(down(m), 9); },
                           with_parameters(store, {{"mask", m}}), o);
  }));

  cases.push_back(make_case("pyramid_encoder", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(18);
    ParameterStore<S> store;
    Initializer init(19);
    PyramidEncoder<S> enc(store, "enc", 5, {4, 6, 8}, Modality::event, init);
    jitter(store, rng);
    V x = input({5, 16, 16}, rng);
    auto f = [&] {
      const auto p = enc.encode(x);
      return projection_loss(p.levels[0], 1) + projection_loss(p.levels[1], 2) + projection_loss(p.levels[2], 3);
    };
    return check_gradients("pyramid_encoder", f, with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("attention_fuse", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(20);
    ParameterStore<S> store;
    Initializer init(21);
    AttentionFuse<S> fuse(store, "fuse", 8, 8, init);
    jitter(store, rng, 0.1);
    V x = input({8, 4, 4}, rng);
    return check_gradients("attention_fuse", [&] { return projection_loss(fuse(x), 9); },
                           with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("fused_mask_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(22);
    ParameterStore<S> store;
    Initializer init(23);
    FusedMaskHead<S> head(store, "head", 8, init);
    jitter(store, rng, 0.2);
    V x = input({8, 4, 4}, rng);
    return check_gradients("fused_mask_head", [&] { return projection_loss(head(x), 9); },
                           with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("cl_chain", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(24);
    ParameterStore<S> store;
    Initializer init(25);
    AifModule<S> aif(store, "aif", 4, 3, init);
    jitter(store, rng, 0.1);
    V fe = input({4, 4, 4}, rng), fi = input({4, 4, 4}, rng);
    V me = input({1, 4, 4}, rng, 0.3), mi = input({1, 4, 4}, rng, 0.3);
    auto f = [&] {
      const auto out = aif.run({fe, fi, me, mi});
      return projection_loss(out.fused, 1) + projection_loss(out.mask_stack, 2);
    };
    return check_gradients("cl_chain", f,
                           with_parameters(store, {{"event_features", fe},
                                                   {"frame_features", fi},
                                                   {"event_mask", me},
                                                   {"frame_mask", mi}}),
                           o);
  }));

  cases.push_back(make_case("conv_gru", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(26);
    ParameterStore<S> store;
    Initializer init(27);
    ConvGru<S> gru(store, "gru", 6, 4, init);
    jitter(store, rng);
    V x1 = input({6, 4, 4}, rng), x2 = input({6, 4, 4}, rng), h0 = input({4, 4, 4}, rng, 0.5);
    auto f = [&] {
      const auto s1 = gru(x1, h0);
      const auto s2 = gru(x2, s1.state);
      return projection_loss(s1.features, 1) + projection_loss(s2.features, 2);
    };
    return check_gradients("conv_gru", f, with_parameters(store, {{"x1", x1}, {"x2", x2}, {"h0", h0}}), o);
  }));

  cases.push_back(make_case("coarse_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(28);
    ParameterStore<S> store;
    Initializer init(29);
    CoarseDepthHead<S> head(store, "coarse", 5, init);
    jitter(store, rng, 0.2);
    V x = input({5, 8, 8}, rng);
    return check_gradients("coarse_head", [&] { return projection_loss(head(x, 16, 16), 9); },
                           with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("affinity_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(30);
    ParameterStore<S> store;
    Initializer init(31);
    AffinityHead<S> head(store, "affinity", 5, 8, 3.0, init);
    jitter(store, rng, 0.2);
    V x = input({5, 8, 8}, rng);
    auto f = [&] {
      const auto a = head(x);
      return projection_loss(a.raw, 1) + projection_loss(a.offsets, 2);
    };
    return check_gradients("affinity_head", f, with_parameters(store, {{"x", x}}), o);
  }));

  cases.push_back(make_case("confidence_head", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(32);
    ParameterStore<S> store;
    Initializer init(33);
    ConfidenceHead<S> head(store, "confidence", 5, 3, init);
    jitter(store, rng, 0.2);
    V x = input({5, 8, 8}, rng), masks = input({3, 2, 2}, rng);
    return check_gradients("confidence_head", [&] { return projection_loss(head(x, masks), 9); },
                           with_parameters(store, {{"x", x}, {"mask_stack", masks}}), o);
  }));

  cases.push_back(make_case("normalize_affinity", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(34);
    V raw = input({8, 5, 5}, rng);
    V conf = V::parameter(uniform({1, 5, 5}, rng, 0.1, 0.9));
    V log_gamma = V::parameter(T::constant({1, 1, 1}, std::log(S(8))));
    return check_gradients("normalize_affinity",
                           [&] { return projection_loss(normalize_affinity(raw, conf, exp(log_gamma)), 9); },
                           {{"raw", raw}, {"confidence", conf}, {"log_gamma", log_gamma}}, o);
  }));

  cases.push_back(make_case("propagate", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(36);
    V seed = V::parameter(uniform({1, 8, 8}, rng, 0, 1));
    V w = V::parameter(uniform({8, 8, 8}, rng, -1.0 / 8, 1.0 / 8));
    V offsets = V::parameter(uniform({16, 8, 8}, rng, -2.5, 2.5));
    auto f = [&] { return projection_loss(propagate(seed, w, ring_displacements(offsets), 6), 9); };
    return check_gradients("propagate", f, {{"seed", seed}, {"affinity", w}, {"offsets", offsets}}, o);
  }));

  cases.push_back(make_case("rdr_forward", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(38);
    ParameterStore<S> store;
    Initializer init(39);
    RdrConfig cfg;
    cfg.fused_channels = 6;
    cfg.state_channels = 4;
    cfg.skip_channels = {4, 6};
    cfg.decoder_channels = {3, 4};
    cfg.output_channels = 5;
    RdrModule<S> rdr(store, "rdr", cfg, init);
    jitter(store, rng);
    V fused = input({6, 2, 2}, rng), masks = V::parameter(uniform({3, 2, 2}, rng, 0, 1));
    V s1 = input({4, 8, 8}, rng), s2 = input({6, 4, 4}, rng), h0 = input({4, 2, 2}, rng, 0.5);
    auto f = [&] {
      const auto out = rdr(fused, masks, h0, {s1, s2}, 16, 16);
      return projection_loss(out.refined, 1) + projection_loss(out.state, 2);
    };
    return check_gradients("rdr_forward", f,
                           with_parameters(store, {{"fused", fused},
                                                   {"mask_stack", masks},
                                                   {"skip1", s1},
                                                   {"skip2", s2},
                                                   {"state", h0}}),
                           o);
  }));

  cases.push_back(make_case("total_loss", [](const GradCheckOptions& o) {
    std::mt19937_64 rng(40);
    std::vector<V> preds;
    std::vector<LossTarget<S>> targets;
    std::vector<GradTarget> wrt;
    for (int k = 0; k < 2; ++k) {
      preds.push_back(V::parameter(uniform({1, 16, 16}, rng, 0, 1)));
      T valid = uniform({1, 16, 16}, rng, 0, 1);
      valid.values() = (valid.values() > 0.2).cast<S>();
      targets.push_back({uniform({1, 16, 16}, rng, 0, 1), valid});
      wrt.push_back({"prediction" + std::to_string(k), preds.back()});
    }
    return check_gradients("total_loss", [&] { return total_loss(preds, targets).total; }, wrt, o);
  }));

  cases.push_back(make_case("depth_net_sequence", [](GradCheckOptions o) {
    std::mt19937_64 rng(42);
    NetworkConfig cfg;
    cfg.encoder_channels = {4, 6, 8};
    cfg.decoder_channels = {3, 4};
    cfg.state_channels = 4;
    cfg.output_channels = 5;
    cfg.iterations = 6;
    DepthNet<S> net(cfg, 43);
    jitter(net.parameters(), rng);
    std::vector<StepInput<S>> steps(2);
    for (auto& s : steps) {
      s.voxels = randn({5, 16, 16}, rng);
      s.frame = randn({1, 16, 16}, rng);
      s.density = uniform({3, 16, 16}, rng, 0, 2);
      s.edges = uniform({1, 16, 16}, rng, 0, 2);
    }
    std::vector<LossTarget<S>> targets;
    for (int k = 0; k < 2; ++k) targets.push_back({uniform({1, 16, 16}, rng, 0, 1), T::constant({1, 16, 16}, 1.0)});
    o.samples = std::min(o.samples, 3);
    return check_gradients("depth_net_sequence", [&] { return total_loss(net.run(steps), targets).total; },
                           with_parameters(net.parameters(), {}), o);
  }));

  return cases;
}

std::vector<GradCheckReport> affinity_bound_suite(std::uint64_t seed, int draws) {
  std::mt19937_64 rng(seed);
  constexpr int K = 8;
  const V gamma = V::constant(T::constant({1, 1, 1}, double(K)));

  GradCheckReport bound;
  bound.name = "affinity_bound";
  for (int d = 0; d < draws; ++d) {
    std::uniform_real_distribution<double> scale_dist(0.1, 100.0);
    const V raw = V::constant(randn({K, 4, 4}, rng, scale_dist(rng)));
    const V conf = V::constant(uniform({1, 4, 4}, rng, 0, 1));
    const T w = normalize_affinity(raw, conf, gamma).value();
    const auto abs_sum = w.values().abs().colwise().sum();
    for (int p = 0; p < w.height() * w.width(); ++p) {
      const double c = double(conf.value().data()[p]);
      const double excess = std::max(double(abs_sum(0, p)) - c, c - 1.0);
      bound.max_error = std::max(bound.max_error, std::max(excess, 0.0));
      ++bound.entries;
    }
  }
  bound.passed = bound.max_error <= 1e-12;
  bound.note = "max(sum|w| - c, c - 1) over " + std::to_string(draws) + " draws";

  GradCheckReport saturation;
  saturation.name = "affinity_saturation";
  const T w = normalize_affinity(V::constant(T::constant({K, 2, 2}, 1e6)), V::constant(T::constant({1, 2, 2}, 1.0)),
                                 gamma)
                  .value();
  const auto s = w.values().colwise().sum();
  saturation.max_error = double((s - S(1)).abs().maxCoeff());
  saturation.entries = int(s.size());
  saturation.passed = saturation.max_error <= 1e-6;
  saturation.note = "|sum w - 1| with raw = 1e6, c = 1";
  return {bound, saturation};
}

}  // namespace fusedepth
