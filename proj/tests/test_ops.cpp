#include "fusedepth/layers.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace fusedepth;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Tensor<double> t(s);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int k, int stride,
                          int pad) {
  const int oh = (x.height() + 2 * pad - k) / stride + 1;
  const int ow = (x.width() + 2 * pad - k) / stride + 1;
  Tensor<double> out({w.channels(), oh, ow});
  for (int o = 0; o < w.channels(); ++o)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b(o, 0, 0);
        for (int c = 0; c < x.channels(); ++c)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
              if (iy < 0 || ix < 0 || iy >= x.height() || ix >= x.width()) continue;
              acc += w(o, c, ky * k + kx) * x(c, iy, ix);
            }
        out(o, y, xx) = acc;
      }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  return (a.values() - b.values()).abs().maxCoeff();
}

}  // namespace

TEST(Conv, MatchesDirectLoopsAcrossGeometries) {
  std::mt19937_64 rng(1);
  struct Case { int k, stride, h, w; };
  for (const Case c : {Case{3, 1, 7, 9}, Case{3, 2, 8, 8}, Case{3, 2, 9, 7}, Case{1, 1, 5, 6}, Case{5, 1, 6, 6}}) {
    const Tensor<double> x = random_tensor({3, c.h, c.w}, rng);
    const Tensor<double> w = random_tensor({4, 3, c.k * c.k}, rng);
    const Tensor<double> b = random_tensor({4, 1, 1}, rng);
    const ConvGeometry g{c.k, c.stride, c.k / 2};
    const Var<double> y = conv2d(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b), g);
    EXPECT_LT(max_abs_diff(y.value(), naive_conv(x, w, b, c.k, c.stride, c.k / 2)), 1e-12);
  }
}

TEST(Conv, BackwardIsTheAdjointOfForward) {
  // <conv(x), r> is linear in x, so its input gradient must satisfy
  // <grad, dx> = <conv(x + dx) - conv(x), r>.
  std::mt19937_64 rng(2);
  const Tensor<double> w = random_tensor({2, 3, 9}, rng);
  const Tensor<double> b = Tensor<double>::zeros({2, 1, 1});
  const Tensor<double> x = random_tensor({3, 8, 8}, rng);
  const Tensor<double> dx = random_tensor({3, 8, 8}, rng);
  const ConvGeometry g{3, 2, 1};
  Var<double> xv = Var<double>::parameter(x);
  const Var<double> y = conv2d(xv, Var<double>::constant(w), Var<double>::constant(b), g);
  const Tensor<double> r = random_tensor(y.shape(), rng);
  backward(sum(y * Var<double>::constant(r)));
  const double lhs = (xv.grad().values() * dx.values()).sum();
  const double rhs = (naive_conv(dx, w, b, 3, 2, 1).values() * r.values()).sum();
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv, RejectsMismatchedWeights) {
  const auto x = Var<double>::constant(Tensor<double>::zeros({2, 4, 4}));
  const auto w = Var<double>::constant(Tensor<double>::zeros({1, 3, 9}));
  const auto b = Var<double>::constant(Tensor<double>::zeros({1, 1, 1}));
  EXPECT_THROW(conv2d(x, w, b, ConvGeometry{}), ShapeError);
}

TEST(Broadcast, PlaneAndChannelOperands) {
  Tensor<double> a = Tensor<double>::constant({2, 2, 2}, 3.0);
  Tensor<double> plane({1, 2, 2});
  plane.values() << 1, 2, 3, 4;
  Tensor<double> chan({2, 1, 1});
  chan.values() << 10, 20;
  const auto p = Var<double>::constant(a) * Var<double>::constant(plane);
  EXPECT_EQ(p.value()(1, 1, 1), 12.0);
  const auto q = Var<double>::constant(a) + Var<double>::constant(chan);
  EXPECT_EQ(q.value()(1, 0, 0), 23.0);
}

TEST(Broadcast, GradientReducesOverBroadcastAxes) {
  auto a = Var<double>::parameter(Tensor<double>::constant({3, 2, 2}, 2.0));
  auto m = Var<double>::parameter(Tensor<double>::constant({1, 2, 2}, 5.0));
  backward(sum(a * m));
  EXPECT_TRUE((m.grad().values() == 6.0).all());
  EXPECT_TRUE((a.grad().values() == 5.0).all());
}

TEST(Resize, BilinearUpsampleOfTwoPixels) {
  Tensor<double> t({1, 1, 2});
  t.values() << 0, 1;
  const auto r = resize_bilinear(Var<double>::constant(t), 1, 4);
  // Half-pixel centres: sources -0.25, 0.25, 0.75, 1.25 clamp to [0, 1].
  EXPECT_NEAR(r.value()(0, 0, 0), 0.0, 1e-15);
  EXPECT_NEAR(r.value()(0, 0, 1), 0.25, 1e-15);
  EXPECT_NEAR(r.value()(0, 0, 2), 0.75, 1e-15);
  EXPECT_NEAR(r.value()(0, 0, 3), 1.0, 1e-15);
}

TEST(Resize, ConstantStaysConstant) {
  const auto r = resize_bilinear(Var<double>::constant(Tensor<double>::constant({2, 3, 5}, 0.7)), 8, 4);
  EXPECT_LT((r.value().values() - 0.7).abs().maxCoeff(), 1e-15);
}

TEST(Pool, AveragesBlocks) {
  Tensor<double> t({1, 2, 4});
  t.values() << 1, 2, 3, 4, 5, 6, 7, 8;
  const auto p = avg_pool2(Var<double>::constant(t));
  EXPECT_EQ(p.shape(), (Shape{1, 1, 2}));
  EXPECT_DOUBLE_EQ(p.value()(0, 0, 0), 3.5);
  EXPECT_DOUBLE_EQ(p.value()(0, 0, 1), 5.5);
}

TEST(Channels, ConcatThenSliceRoundTrips) {
  std::mt19937_64 rng(3);
  const auto a = Var<double>::constant(random_tensor({2, 3, 3}, rng));
  const auto b = Var<double>::constant(random_tensor({3, 3, 3}, rng));
  const auto c = concat_channels<double>({a, b});
  EXPECT_EQ(c.shape().channels, 5);
  EXPECT_EQ(max_abs_diff(slice_channels(c, 2, 3).value(), b.value()), 0.0);
  EXPECT_THROW(concat_channels<double>({a, Var<double>::constant(Tensor<double>::zeros({1, 2, 3}))}), ShapeError);
}

TEST(MaskedMean, IgnoresInvalidAndHandlesEmpty) {
  Tensor<double> v({1, 1, 3});
  v.values() << 1, 3, 100;
  Tensor<double> valid({1, 1, 3});
  valid.values() << 1, 1, 0;
  EXPECT_DOUBLE_EQ(masked_mean(Var<double>::constant(v), valid).item(), 2.0);
  EXPECT_DOUBLE_EQ(masked_mean(Var<double>::constant(v), Tensor<double>::zeros({1, 1, 3})).item(), 0.0);
}

TEST(Activations, EluAndSigmoidValues) {
  Tensor<double> t({1, 1, 2});
  t.values() << -1, 2;
  const auto x = Var<double>::constant(t);
  EXPECT_NEAR(elu(x).value()(0, 0, 0), std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_EQ(elu(x).value()(0, 0, 1), 2.0);
  EXPECT_NEAR(sigmoid(x).value()(0, 0, 1), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Graph, SharedSubexpressionAccumulates) {
  auto a = Var<double>::parameter(Tensor<double>::constant({1, 1, 1}, 3.0));
  const auto b = a * a;
  backward(b + b);
  EXPECT_DOUBLE_EQ(a.grad()(0, 0, 0), 12.0);
}

TEST(Parameters, DuplicateNamesRejected) {
  ParameterStore<float> store;
  store.add("x", Tensor<float>::zeros({1, 1, 1}));
  EXPECT_THROW(store.add("x", Tensor<float>::zeros({1, 1, 1})), std::invalid_argument);
  EXPECT_THROW(store.find("y"), std::out_of_range);
}
