#include "fusedepth/objective_metrics.hpp"

#include "oracles.hpp"

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

Var<double> cst(Tensor<double> t) { return Var<double>::constant(std::move(t)); }

struct Pair {
  DepthRaster pred, gt;
  std::vector<double> p, g;
};

// Random metric rasters with about 20% invalid ground truth.
Pair random_pair(std::mt19937_64& rng, int h = 12, int w = 10) {
  std::uniform_real_distribution<double> depth(2.0, 80.0), noise(0.6, 1.5), u(0, 1);
  ArrayRM<double> g(h, w), p(h, w);
  for (int i = 0; i < g.size(); ++i) {
    g.data()[i] = u(rng) < 0.2 ? 0.0 : depth(rng);
    p.data()[i] = depth(rng) * 0.5 + (g.data()[i] > 0 ? g.data()[i] * noise(rng) * 0.5 : 1.0);
  }
  Pair out{DepthRaster::meters(p), DepthRaster::meters(g), {}, {}};
  for (int i = 0; i < g.size(); ++i)
    if (g.data()[i] > 0) {
      out.p.push_back(p.data()[i]);
      out.g.push_back(g.data()[i]);
    }
  return out;
}

}  // namespace

TEST(LogDepth, EndpointsAndFloor) {
  EXPECT_DOUBLE_EQ(log_normalize_value(80.0, 3.7, 80.0), 1.0);
  EXPECT_NEAR(log_normalize_value(80.0 * std::exp(-3.7), 3.7, 80.0), 0.0, 1e-15);
  EXPECT_NEAR(depth_floor(3.7, 80.0), 1.97788, 1e-5);
}

TEST(LogDepth, RoundTripOverRange) {
  for (auto [alpha, d_max] : {std::pair{3.7, 80.0}, std::pair{5.7, 1000.0}})
    for (double d = depth_floor(alpha, d_max); d <= d_max; d *= 1.01)
      EXPECT_NEAR(log_denormalize_value(log_normalize_value(d, alpha, d_max), alpha, d_max), d, 1e-9 * d);
}

TEST(LogDepth, StrictlyIncreasing) {
  double prev = -1e9;
  for (double d = 0.5; d < 200; d *= 1.05) {
    const double v = log_normalize_value(d, 3.7, 80);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(LogDepth, RasterClampsAndFlags) {
  ArrayRM<double> d(1, 4);
  d << 1.0, 10.0, 80.0, 200.0;
  const DepthRaster r = log_normalize(DepthRaster::meters(d), 3.7, 80);
  EXPECT_EQ(r.space, DepthSpace::log01);
  EXPECT_EQ(r.data(0, 0), 0.0);
  EXPECT_TRUE(r.clamped(0, 0));
  EXPECT_FALSE(r.clamped(0, 1));
  EXPECT_EQ(r.data(0, 3), 1.0);
  EXPECT_TRUE(r.clamped(0, 3));
  const DepthRaster back = log_denormalize(r);
  EXPECT_NEAR(back.data(0, 1), 10.0, 1e-12);
}

TEST(LogDepth, NonPositiveValidPixelIsAnError) {
  DepthRaster r = DepthRaster::meters(ArrayRM<double>::Constant(2, 2, 5.0));
  r.data(1, 1) = -1.0;
  EXPECT_THROW(log_normalize(r, 3.7, 80), DepthDataError);
  EXPECT_FALSE(DepthRaster::meters(ArrayRM<double>::Constant(1, 1, -1.0)).valid(0, 0));
}

TEST(Mse, Examples) {
  const Tensor<double> all = Tensor<double>::constant({1, 4, 4}, 1.0);
  EXPECT_EQ(mse_loss(cst(Tensor<double>::zeros({1, 4, 4})), all).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(cst(Tensor<double>::constant({1, 4, 4}, 0.5)), all).item(), 0.25);
}

TEST(Mse, MatchesBruteForceOverValidPixels) {
  std::mt19937_64 rng(1);
  const Tensor<double> r = random_tensor({1, 8, 8}, rng);
  Tensor<double> valid = Tensor<double>::zeros({1, 8, 8});
  double sum = 0;
  int n = 0;
  for (int i = 0; i < 64; i += 2) {
    valid.data()[i] = 1;
    sum += r.data()[i] * r.data()[i];
    ++n;
  }
  EXPECT_NEAR(mse_loss(cst(r), valid).item(), sum / n, 1e-14);
}

TEST(Mse, EmptyMaskCountsAndReturnsZero) {
  LossDiagnostics diag;
  EXPECT_EQ(mse_loss(cst(Tensor<double>::constant({1, 2, 2}, 3.0)), Tensor<double>::zeros({1, 2, 2}), &diag).item(), 0.0);
  EXPECT_EQ(diag.empty_masks, 1);
}

TEST(GradLoss, ConstantResidualIsZero) {
  EXPECT_NEAR(grad_matching_loss(cst(Tensor<double>::constant({1, 16, 16}, 0.3)),
                                 Tensor<double>::constant({1, 16, 16}, 1.0))
                  .item(),
              0.0, 1e-14);
}

TEST(GradLoss, HorizontalRampSingleScale) {
  // R = 0.1 x on 8x8: interior columns give |Gx| = 8 * 0.1, the two border
  // columns (replicate padding) give 4 * 0.1, so the mean is 0.7; Gy = 0.
  Tensor<double> r({1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) r(0, y, x) = 0.1 * x;
  EXPECT_NEAR(grad_matching_loss(cst(r), Tensor<double>::constant({1, 8, 8}, 1.0), 1).item(), 0.7, 1e-12);
}

TEST(GradLoss, PositivelyHomogeneous) {
  std::mt19937_64 rng(2);
  const Tensor<double> r = random_tensor({1, 16, 16}, rng);
  Tensor<double> r2 = r;
  r2.values() *= 2.0;
  Tensor<double> valid = random_tensor({1, 16, 16}, rng, 0, 1);
  valid.values() = (valid.values() > 0.1).cast<double>();
  const double a = grad_matching_loss(cst(r), valid).item();
  EXPECT_GT(a, 0.0);
  EXPECT_NEAR(grad_matching_loss(cst(r2), valid).item(), 2 * a, 1e-12);
}

TEST(GradLoss, ValidityPoolingRequiresAllFour) {
  Tensor<double> v = Tensor<double>::constant({1, 4, 4}, 1.0);
  v(0, 0, 1) = 0;
  const Tensor<double> p = pool_validity(v);
  EXPECT_EQ(p(0, 0, 0), 0.0);
  EXPECT_EQ(p(0, 1, 1), 1.0);
}

TEST(TotalLoss, DecomposesIntoPerStepTerms) {
  std::mt19937_64 rng(3);
  std::vector<Var<double>> preds;
  std::vector<LossTarget<double>> targets;
  double expected = 0;
  for (int k = 0; k < 8; ++k) {
    preds.push_back(cst(random_tensor({1, 16, 16}, rng, 0, 1)));
    Tensor<double> valid = random_tensor({1, 16, 16}, rng, 0, 1);
    valid.values() = (valid.values() > 0.2).cast<double>();
    targets.push_back({random_tensor({1, 16, 16}, rng, 0, 1), valid});
    const auto res = preds.back() - cst(targets.back().depth);
    expected += mse_loss(res, valid).item() + 0.25 * grad_matching_loss(res, valid).item();
  }
  const auto loss = total_loss(preds, targets);
  EXPECT_NEAR(loss.total.item(), expected, 1e-12);
  EXPECT_NEAR(loss.mse + 0.25 * loss.grad, expected, 1e-12);
}

TEST(TotalLoss, PerfectPredictionIsZero) {
  std::mt19937_64 rng(4);
  const Tensor<double> d = random_tensor({1, 8, 8}, rng, 0, 1);
  const auto loss = total_loss<double>({cst(d)}, {{d, Tensor<double>::constant({1, 8, 8}, 1.0)}});
  EXPECT_EQ(loss.total.item(), 0.0);
  EXPECT_THROW(total_loss<double>({}, {}), ShapeError);
}

TEST(Metrics, IdenticalRasters) {
  std::mt19937_64 rng(5);
  const Pair p = random_pair(rng);
  const MetricRecord m = depth_metrics(p.gt, p.gt);
  EXPECT_EQ(m.abs_rel, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.delta1, 1.0);
  EXPECT_EQ(m.delta3, 1.0);
  for (const auto& [c, v] : m.avg_abs_error) EXPECT_EQ(v, 0.0);
}

TEST(Metrics, TenPercentOverestimate) {
  std::mt19937_64 rng(6);
  const Pair p = random_pair(rng);
  DepthRaster pred = p.gt;
  pred.data *= 1.1;
  const MetricRecord m = depth_metrics(pred, p.gt);
  EXPECT_NEAR(m.abs_rel, 0.1, 1e-12);
  EXPECT_EQ(m.delta1, 1.0);
  EXPECT_NEAR(m.si_log, 0.0, 1e-12);
}

TEST(Metrics, MatchOracleOnRandomRasters) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Pair p = random_pair(rng);
    const MetricRecord m = depth_metrics(p.pred, p.gt);
    const oracle::Metrics o = oracle::depth_metrics(p.p, p.g, {10, 20, 30});
    EXPECT_EQ(m.pixels, p.g.size());
    EXPECT_LE(oracle::rel_diff(m.abs_rel, o.abs_rel), 1e-9);
    EXPECT_LE(oracle::rel_diff(m.sq_rel, o.sq_rel), 1e-9);
    EXPECT_LE(oracle::rel_diff(m.rmse, o.rmse), 1e-9);
    EXPECT_LE(oracle::rel_diff(m.rmse_log, o.rmse_log), 1e-9);
    EXPECT_LE(oracle::rel_diff(m.si_log, o.si_log), 1e-9);
    EXPECT_EQ(m.delta1, o.delta1);
    EXPECT_EQ(m.delta2, o.delta2);
    EXPECT_EQ(m.delta3, o.delta3);
    for (int c : {10, 20, 30}) EXPECT_LE(oracle::rel_diff(m.avg_abs_error.at(c), o.avg_abs_error.at(c)), 1e-9);
  }
}

TEST(Metrics, SilogScaleInvariant) {
  std::mt19937_64 rng(8);
  const Pair p = random_pair(rng);
  const double base = depth_metrics(p.pred, p.gt).si_log;
  for (double c : {0.5, 2.0, 10.0}) {
    DepthRaster scaled = p.pred;
    scaled.data *= c;
    EXPECT_NEAR(depth_metrics(scaled, p.gt).si_log, base, 1e-9);
  }
}

TEST(Metrics, CutoffsNestByGroundTruth) {
  ArrayRM<double> g(1, 4), pr(1, 4);
  g << 5, 15, 25, 35;
  pr << 6, 17, 28, 39;
  const MetricRecord m = depth_metrics(DepthRaster::meters(pr), DepthRaster::meters(g));
  EXPECT_DOUBLE_EQ(m.avg_abs_error.at(10), 1.0);
  EXPECT_DOUBLE_EQ(m.avg_abs_error.at(20), 1.5);
  EXPECT_DOUBLE_EQ(m.avg_abs_error.at(30), 2.0);
  const MetricRecord by_pred =
      depth_metrics(DepthRaster::meters(pr), DepthRaster::meters(g), {10, 20, 30}, CutoffBasis::prediction);
  EXPECT_DOUBLE_EQ(by_pred.avg_abs_error.at(20), 1.5);
  EXPECT_DOUBLE_EQ(by_pred.avg_abs_error.at(30), 2.0);
}

TEST(Metrics, AccumulatorPoolsPixelsAndHonoursMinDepth) {
  std::mt19937_64 rng(9);
  const Pair a = random_pair(rng), b = random_pair(rng);
  MetricAccumulator acc;
  acc.add(a.pred, a.gt);
  acc.add(b.pred, b.gt);
  std::vector<double> p = a.p, g = a.g;
  p.insert(p.end(), b.p.begin(), b.p.end());
  g.insert(g.end(), b.g.begin(), b.g.end());
  EXPECT_LE(oracle::rel_diff(acc.finish().abs_rel, oracle::depth_metrics(p, g, {}).abs_rel), 1e-12);

  MetricAccumulator floor;
  floor.add(a.pred, a.gt, 40.0);
  std::vector<double> pf, gf;
  for (std::size_t i = 0; i < a.g.size(); ++i)
    if (a.g[i] >= 40.0) {
      pf.push_back(a.p[i]);
      gf.push_back(a.g[i]);
    }
  EXPECT_EQ(floor.finish().pixels, gf.size());
  EXPECT_LE(oracle::rel_diff(floor.finish().rmse, oracle::depth_metrics(pf, gf, {}).rmse), 1e-12);
}

TEST(Metrics, JsonHasNineKeys) {
  const auto j = metrics_to_json(MetricRecord{{{10, 1.0}, {20, 2.0}, {30, 3.0}}});
  EXPECT_EQ(j.size(), 9u);
  for (const char* k : {"avg_abs_error", "abs_rel", "sq_rel", "rmse", "rmse_log", "si_log", "delta_1", "delta_2", "delta_3"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["avg_abs_error"]["20"], 2.0);
}
