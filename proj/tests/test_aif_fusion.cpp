#include "fusedepth/aif_fusion.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fusedepth;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

ClBlockState<double> random_state(std::mt19937_64& rng, int c, int h, int w) {
  return {Var<double>::constant(random_tensor({c, h, w}, rng)), Var<double>::constant(random_tensor({c, h, w}, rng)),
          Var<double>::constant(random_tensor({1, h, w}, rng, 0, 1)),
          Var<double>::constant(random_tensor({1, h, w}, rng, 0, 1))};
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && (a.values() == b.values()).all();
}

void zero_all(ParameterStore<double>& store) {
  for (auto& e : store.entries()) e.var.mutable_value().set_zero();
}

}  // namespace

TEST(Emphasize, ZeroMaskIsIdentityUnitMaskDoubles) {
  std::mt19937_64 rng(1);
  const auto f = Var<double>::constant(random_tensor({4, 3, 3}, rng));
  const auto zero = Var<double>::constant(Tensor<double>::zeros({1, 3, 3}));
  const auto one = Var<double>::constant(Tensor<double>::constant({1, 3, 3}, 1.0));
  EXPECT_TRUE(bit_equal(emphasize(f, zero).value(), f.value()));
  EXPECT_TRUE((emphasize(f, one).value().values() == 2.0 * f.value().values()).all());
  EXPECT_THROW(emphasize(f, Var<double>::constant(Tensor<double>::zeros({1, 2, 3}))), ShapeError);
}

TEST(ClBlock, ZeroParametersHandTrace) {
  ParameterStore<double> store;
  Initializer init(2);
  ClBlock<double> block(store, "b", 4, false, init);
  zero_all(store);
  const auto zf = Var<double>::constant(Tensor<double>::zeros({4, 5, 5}));
  const auto zm = Var<double>::constant(Tensor<double>::zeros({1, 5, 5}));
  const auto out = block({zf, zf, zm, zm});
  EXPECT_EQ(out.fused.value().values().abs().maxCoeff(), 0.0);
  EXPECT_EQ(out.state.event_features.value().values().abs().maxCoeff(), 0.0);
  EXPECT_TRUE((out.fused_mask.value().values() == 0.5).all());
  EXPECT_TRUE((out.state.event_mask.value().values() == 0.5).all());
  EXPECT_TRUE((out.state.frame_mask.value().values() == 0.5).all());
}

TEST(ClBlock, ResidualAndFeedbackIdentities) {
  std::mt19937_64 rng(3);
  ParameterStore<double> store;
  Initializer init(3);
  ClBlock<double> block(store, "b", 4, false, init);
  for (int trial = 0; trial < 5; ++trial) {
    const auto in = random_state(rng, 4, 6, 6);
    const auto out = block(in);
    const auto& m = out.fused_mask.value().values();
    EXPECT_TRUE((out.state.event_mask.value().values() == in.event_mask.value().values() + m).all());
    EXPECT_TRUE((out.state.frame_mask.value().values() == in.frame_mask.value().values() + m).all());
    const auto& f = out.fused.value().values();
    EXPECT_TRUE((out.state.event_features.value().values() == in.event_features.value().values() + f.topRows(4)).all());
    EXPECT_TRUE((out.state.frame_features.value().values() == in.frame_features.value().values() + f.bottomRows(4)).all());
    EXPECT_GT(m.minCoeff(), 0.0);
    EXPECT_LT(m.maxCoeff(), 1.0);
  }
}

TEST(ClBlock, LastBlockSumsAndHasNoFeedback) {
  std::mt19937_64 rng(4);
  ParameterStore<double> store;
  Initializer init(4);
  ClBlock<double> block(store, "b", 4, true, init);
  EXPECT_EQ(block.fuse().conv().in_channels(), 4);
  const auto in = random_state(rng, 4, 6, 6);
  const auto out = block(in);
  EXPECT_EQ(out.fused.shape(), (Shape{8, 6, 6}));
  EXPECT_TRUE(bit_equal(out.state.event_mask.value(), in.event_mask.value()));
  EXPECT_TRUE(bit_equal(out.state.frame_features.value(), in.frame_features.value()));
  const auto direct = block.fuse()(emphasize(in.event_features, in.event_mask) + emphasize(in.frame_features, in.frame_mask));
  EXPECT_TRUE(bit_equal(out.fused.value(), direct.value()));
}

TEST(ClBlock, RejectsMismatchedState) {
  std::mt19937_64 rng(5);
  ParameterStore<double> store;
  Initializer init(5);
  ClBlock<double> block(store, "b", 4, false, init);
  auto in = random_state(rng, 4, 6, 6);
  in.frame_features = Var<double>::constant(Tensor<double>::zeros({4, 6, 5}));
  EXPECT_THROW(block(in), ShapeError);
  in = random_state(rng, 3, 6, 6);
  EXPECT_THROW(block(in), ShapeError);
}

TEST(Aif, MaskStackMatchesInstrumentedBlocks) {
  std::mt19937_64 rng(6);
  ParameterStore<double> store;
  Initializer init(6);
  AifModule<double> aif(store, "aif", 4, 2, init);
  const auto in = random_state(rng, 4, 5, 5);
  const auto out = aif.run(in);
  ASSERT_EQ(out.mask_stack.shape(), (Shape{2, 5, 5}));
  const auto first = aif.blocks()[0](in);
  const auto second = aif.blocks()[1](first.state);
  EXPECT_TRUE((out.mask_stack.value().values().row(0) == first.fused_mask.value().values().row(0)).all());
  EXPECT_TRUE((out.mask_stack.value().values().row(1) == second.fused_mask.value().values().row(0)).all());
  EXPECT_TRUE(bit_equal(out.fused.value(), second.fused.value()));
}

TEST(Aif, SingleBlockStacksOneMask) {
  std::mt19937_64 rng(7);
  ParameterStore<double> store;
  Initializer init(7);
  AifModule<double> aif(store, "aif", 4, 1, init);
  EXPECT_EQ(aif.run(random_state(rng, 4, 4, 4)).mask_stack.shape().channels, 1);
  ParameterStore<double> other;
  EXPECT_THROW(AifModule<double>(other, "aif", 4, 0, init), ConfigError);
}

TEST(Aif, ChannelSymmetricFuseSplitsEqually) {
  std::mt19937_64 rng(8);
  ParameterStore<double> store;
  Initializer init(8);
  ClBlock<double> block(store, "b", 4, false, init);
  auto& w = block.fuse().conv().weight().mutable_value().values();
  auto& b = block.fuse().conv().bias().mutable_value().values();
  w.bottomRows(4) = w.topRows(4).eval();
  b.bottomRows(4) = b.topRows(4).eval();
  const auto f = Var<double>::constant(random_tensor({4, 5, 5}, rng));
  const auto m = Var<double>::constant(random_tensor({1, 5, 5}, rng, 0, 1));
  const auto out = block({f, f, m, m});
  EXPECT_TRUE((out.fused.value().values().topRows(4) == out.fused.value().values().bottomRows(4)).all());
}

TEST(Aif, FusedMaskIncreasesWithBias) {
  std::mt19937_64 rng(9);
  ParameterStore<double> store;
  Initializer init(9);
  FusedMaskHead<double> head(store, "m", 8, init);
  const auto x = Var<double>::constant(random_tensor({8, 4, 4}, rng));
  const Tensor<double> low = head(x).value();
  head.conv().bias().mutable_value()(0, 0, 0) = 0.5;
  EXPECT_TRUE((head(x).value().values() > low.values()).all());
}

TEST(Aif, FusedOutputDependsOnInitialEventMask) {
  std::mt19937_64 rng(10);
  ParameterStore<double> store;
  Initializer init(10);
  AifModule<double> aif(store, "aif", 4, 3, init);
  auto in = random_state(rng, 4, 6, 6);
  in.event_mask = Var<double>::parameter(in.event_mask.value());
  const auto out = aif.run(in);
  const Tensor<double> r = random_tensor(out.fused.shape(), rng);
  backward(sum(out.fused * Var<double>::constant(r)));
  const Tensor<double> g = in.event_mask.grad();
  EXPECT_GT(g.values().abs().maxCoeff(), 0.0);

  // Spot check one entry against a central difference.
  const double h = 1e-6;
  auto loss_at = [&](double delta) {
    ClBlockState<double> s = in;
    Tensor<double> m = in.event_mask.value();
    m(0, 2, 3) += delta;
    s.event_mask = Var<double>::constant(m);
    return (aif.run(s).fused.value().values() * r.values()).sum();
  };
  const double numeric = (loss_at(h) - loss_at(-h)) / (2 * h);
  EXPECT_NEAR(g(0, 2, 3), numeric, 1e-6 * std::max(1.0, std::abs(numeric)));
}
