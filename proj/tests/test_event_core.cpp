#include "fusedepth/event_core.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace fusedepth;

namespace {

EventStream random_stream(std::mt19937_64& rng, int n, std::int64_t span, int h, int w) {
  std::uniform_int_distribution<std::int64_t> t(0, span - 1);
  std::uniform_int_distribution<int> x(0, w - 1), y(0, h - 1), p(0, 1);
  EventStream s(static_cast<std::size_t>(n));
  for (auto& e : s) e = {t(rng), x(rng), y(rng), p(rng) ? 1 : -1};
  std::sort(s.begin(), s.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

// Independent scatter: each event's polarity spread over the two nearest
// bin centres by distance.
Tensor<double> oracle_grid(const EventWindow& win, int bins, int h, int w) {
  Tensor<double> g = Tensor<double>::zeros({bins, h, w});
  for (const Event& e : win.events) {
    const double u = (bins - 1) * double(e.t - win.t_start) / double(win.t_end - win.t_start);
    for (int b = 0; b < bins; ++b) {
      const double k = std::max(0.0, 1.0 - std::abs(u - b));
      g(b, e.y, e.x) += e.p * k;
    }
  }
  return g;
}

}  // namespace

TEST(Windows, PartitionIncludesPartialTail) {
  const EventStream s{{0, 0, 0, 1}, {10, 0, 0, 1}, {25, 0, 0, 1}};
  const auto w = accumulate_windows(s, 20);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].events.size(), 2u);
  EXPECT_EQ(w[1].events.size(), 1u);
  EXPECT_FALSE(w[0].partial);
  EXPECT_TRUE(w[1].partial);
  EXPECT_EQ(w[1].t_start, 20);
}

TEST(Windows, EmptyStream) {
  EXPECT_TRUE(accumulate_windows(EventStream{}, 100).empty());
}

TEST(Windows, RandomStreamCoversEveryEventOnce) {
  std::mt19937_64 rng(3);
  const EventStream s = random_stream(rng, 1000, 10000, 8, 8);
  const auto w = accumulate_windows(s, 1000, 0, 10);
  ASSERT_EQ(w.size(), 10u);
  std::size_t total = 0;
  for (const auto& win : w) {
    total += win.events.size();
    for (const Event& e : win.events) {
      EXPECT_GE(e.t, win.t_start);
      EXPECT_LT(e.t, win.t_end);
    }
  }
  EXPECT_EQ(total, s.size());
}

TEST(Windows, ExplicitOriginDropsOutsideEvents) {
  const EventStream s{{5, 0, 0, 1}, {15, 0, 0, 1}, {40, 0, 0, 1}};
  const auto w = accumulate_windows(s, 10, 10, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0].events.size(), 1u);
  EXPECT_TRUE(w[1].events.empty());
}

TEST(Voxel, SingleEventAtStartLandsInFirstBin) {
  EventWindow win{{{0, 1, 1, 1}}, 0, 100};
  const VoxelGrid g = build_voxel_grid(win, 5, 3, 3);
  EXPECT_DOUBLE_EQ(g.data(0, 1, 1), 1.0);
  EXPECT_DOUBLE_EQ(g.data.values().abs().sum(), 1.0);
}

TEST(Voxel, MidwayEventSplitsEvenly) {
  // Halfway between bin centres 1 and 2 of a 5-bin, 100 us window.
  EventWindow win{{{375, 0, 0, -1}}, 0, 1000};
  const VoxelGrid g = build_voxel_grid(win, 5, 1, 1);
  EXPECT_NEAR(g.data(1, 0, 0), -0.5, 1e-12);
  EXPECT_NEAR(g.data(2, 0, 0), -0.5, 1e-12);
  EXPECT_EQ(g.data(0, 0, 0), 0.0);
}

TEST(Voxel, NormalizationOfTwoCells) {
  Tensor<double> d = Tensor<double>::zeros({1, 1, 3});
  d(0, 0, 0) = 2;
  d(0, 0, 2) = 4;
  const VoxelGrid g = normalize_voxel_grid({d, false});
  EXPECT_NEAR(g.data(0, 0, 0), -1.0, 1e-12);
  EXPECT_EQ(g.data(0, 0, 1), 0.0);
  EXPECT_NEAR(g.data(0, 0, 2), 1.0, 1e-12);
  EXPECT_TRUE(g.normalized);
}

TEST(Voxel, NormalizationLeavesEmptyGrid) {
  const VoxelGrid g = normalize_voxel_grid({Tensor<double>::zeros({5, 4, 4}), false});
  EXPECT_EQ(g.data.values().abs().sum(), 0.0);
}

TEST(Voxel, ConservesPolarityAndMatchesOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const EventStream s = random_stream(rng, 300, 5000, 6, 7);
    EventWindow win{s, 0, 5000};
    const VoxelGrid g = build_voxel_grid(win, 5, 6, 7);
    double polarity = 0;
    for (const Event& e : s) polarity += e.p;
    EXPECT_NEAR(g.data.values().sum(), polarity, 1e-9);
    EXPECT_LE((g.data.values() - oracle_grid(win, 5, 6, 7).values()).abs().maxCoeff(), 1e-12);
  }
}

TEST(Voxel, NormalizedNonzeroCellsAreStandardized) {
  std::mt19937_64 rng(5);
  const EventStream s = random_stream(rng, 400, 1000, 8, 8);
  const VoxelGrid g = normalize_voxel_grid(build_voxel_grid({s, 0, 1000}, 5, 8, 8));
  const auto& v = g.data.values();
  const auto nz = v != 0.0;
  const double n = double(nz.count());
  const double mean = nz.select(v, 0.0).sum() / n;
  const double var = nz.select(v.square(), 0.0).sum() / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 1e-9);
  EXPECT_NEAR(var, 1.0, 1e-9);
}

TEST(Voxel, SingleBinCollectsEverything) {
  EventWindow win{{{0, 0, 0, 1}, {50, 0, 0, 1}, {99, 0, 0, -1}}, 0, 100};
  EXPECT_DOUBLE_EQ(build_voxel_grid(win, 1, 1, 1).data(0, 0, 0), 1.0);
}

TEST(Voxel, RejectsOutOfSensorEvents) {
  EventWindow win{{{0, 5, 0, 1}}, 0, 100};
  EXPECT_THROW(build_voxel_grid(win, 5, 4, 4), EventError);
  EXPECT_THROW(build_voxel_grid({{}, 10, 10}, 5, 4, 4), EventError);
}

TEST(Voxel, TemporalSplitWeightsSumToOne) {
  for (std::int64_t t = 0; t < 1000; t += 37) {
    const TemporalSplit s = temporal_split(t, 0, 1000, 5);
    EXPECT_NEAR(s.lower_weight + s.upper_weight, 1.0, 1e-15);
    EXPECT_GE(s.lower_bin, 0);
    EXPECT_LE(s.upper_bin, 4);
  }
}

TEST(EventCsv, RoundTripsAndReportsLine) {
  const auto dir = std::filesystem::temp_directory_path() / "fusedepth_event_csv";
  std::filesystem::create_directories(dir);
  const EventStream s{{1, 2, 3, 1}, {4, 5, 6, -1}};
  save_events_csv(dir / "ev.csv", s);
  EXPECT_EQ(load_events_csv(dir / "ev.csv"), s);

  std::ofstream(dir / "bad.csv") << "1,2,3,1\n0,1,1,1\n";
  try {
    load_events_csv(dir / "bad.csv");
    FAIL();
  } catch (const EventError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  std::ofstream(dir / "pol.csv") << "1,2,3,0\n";
  EXPECT_THROW(load_events_csv(dir / "pol.csv"), EventError);
  std::filesystem::remove_all(dir);
}
