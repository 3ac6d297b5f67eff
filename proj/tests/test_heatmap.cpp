#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "flowpose/heatmap.hpp"

using namespace flowpose;

namespace {

Pose single(double x, double y, bool visible = true) {
  Pose p(1);
  p[0] = {x, y, 1.0, visible};
  return p;
}

}  // namespace

TEST(Target, PeakAndNeighbourValues) {
  const double sigma = 1.5;
  const double peak = 1.0 / (2.0 * std::numbers::pi * sigma * sigma);
  const Tensor t = synthesize_target(single(10.0, 12.0), sigma, 32, 32, 1.0);
  EXPECT_NEAR(t.at(0, 0, 12, 10), peak, 1e-15);
  EXPECT_NEAR(t.at(0, 0, 12, 10), 0.070736, 1e-6);
  EXPECT_NEAR(t.at(0, 0, 12, 11), peak * std::exp(-1.0 / 4.5), 1e-15);
  EXPECT_NEAR(t.at(0, 0, 13, 10), 0.056637, 1e-5);
}

TEST(Target, UsesScaledCoordinates) {
  const Tensor t = synthesize_target(single(40.0, 20.0), 1.5, 16, 16, 4.0);
  std::size_t best = 0;
  for (std::size_t i = 1; i < 256; ++i)
    if (t[i] > t[best]) best = i;
  EXPECT_EQ(best % 16, 10u);
  EXPECT_EQ(best / 16, 5u);
}

TEST(Target, AbsentJointsGiveZeroChannels) {
  Pose p(3);
  p[0] = {-5.0, 3.0, 1.0, true};
  p[1] = {3.0, 3.0, 1.0, false};
  p[2] = {3.0, 3.0, 1.0, true};
  const Tensor t = synthesize_target(p, 1.5, 8, 8, 1.0);
  const Tensor m = target_mask(p, 8, 8, 1.0);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(t.plane(0, 0)[i], 0.0);
    EXPECT_EQ(t.plane(0, 1)[i], 0.0);
    EXPECT_EQ(m.plane(0, 0)[i], 0.0);
    EXPECT_EQ(m.plane(0, 2)[i], 1.0);
  }
  EXPECT_GT(t.at(0, 2, 3, 3), 0.0);
}

TEST(Target, RejectsNonPositiveSigma) {
  EXPECT_THROW(synthesize_target(single(1, 1), 0.0, 4, 4, 1.0), std::invalid_argument);
}

TEST(Decode, RoundTripOverRandomPoses) {
  std::mt19937_64 rng(3);
  const double scale = 4.0;
  std::uniform_real_distribution<double> u(0.0, 63.9);
  for (int trial = 0; trial < 1000; ++trial) {
    Pose p(7);
    for (Joint& j : p.joints) j = {u(rng), u(rng), 1.0, true};
    const Pose d = decode_argmax(synthesize_target(p, 1.5, 16, 16, scale), scale);
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_LE(std::abs(d[c].x - p[c].x), scale);
      EXPECT_LE(std::abs(d[c].y - p[c].y), scale);
    }
  }
}

TEST(Decode, TieBreakIsRowMajorFirst) {
  const Pose flat = decode_argmax(Tensor({1, 1, 8, 8}, 0.5), 1.0);
  EXPECT_EQ(flat[0].x, 0.0);
  EXPECT_EQ(flat[0].y, 0.0);
  EXPECT_EQ(flat[0].confidence, 0.5);

  Tensor two({1, 1, 32, 32});
  two.at(0, 0, 5, 5) = 1.0;
  two.at(0, 0, 20, 20) = 1.0;
  const Pose d = decode_argmax(two, 1.0);
  EXPECT_EQ(d[0].x, 5.0);
  EXPECT_EQ(d[0].y, 5.0);
}

TEST(Decode, SelectsBatchItem) {
  Tensor maps({2, 1, 4, 4});
  maps.at(1, 0, 2, 3) = 1.0;
  EXPECT_EQ(decode_argmax(maps, 1.0, 1)[0].x, 3.0);
  EXPECT_THROW(decode_argmax(maps, 1.0, 2), std::out_of_range);
}

TEST(CoordinateMapping, ScaleFour) {
  const Pose h = coords_to_heatmap_space(single(100.0, 60.0), 4.0);
  EXPECT_EQ(h[0].x, 25.0);
  EXPECT_EQ(h[0].y, 15.0);
}

TEST(CoordinateMapping, RoundTripWithinHalfCell) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 255.0);
  for (int i = 0; i < 200; ++i) {
    const Pose p = single(u(rng), u(rng));
    const Pose back = heatmap_to_coords(coords_to_heatmap_space(p, 4.0), 4.0);
    EXPECT_LE(std::abs(back[0].x - p[0].x), 2.0);
    EXPECT_LE(std::abs(back[0].y - p[0].y), 2.0);
  }
}

TEST(CoordinateMapping, ScaleOneIsIdentity) {
  const Pose p = single(7.25, 3.5);
  EXPECT_EQ(coords_to_heatmap_space(p, 1.0)[0].x, 7.25);
  EXPECT_EQ(heatmap_to_coords(p, 1.0)[0].y, 3.5);
  EXPECT_THROW(coords_to_heatmap_space(p, 0.0), std::invalid_argument);
}

TEST(JointSet, MirrorAndMatching) {
  const JointSet j = JointSet::upper_body();
  EXPECT_EQ(j.size(), 7u);
  EXPECT_EQ(j.mirror(j.index("left_wrist")), j.index("right_wrist"));
  EXPECT_EQ(j.mirror(j.index("head")), j.index("head"));
  EXPECT_EQ(j.matching("wrist").size(), 2u);
  EXPECT_THROW(j.index("knee"), std::out_of_range);
}

TEST(LocalMaxima, CountsSeparatedPeaks) {
  Tensor m({1, 1, 10, 10});
  m.at(0, 0, 2, 2) = 1.0;
  m.at(0, 0, 7, 7) = 0.8;
  m.at(0, 0, 7, 2) = 0.1;
  EXPECT_EQ(count_local_maxima(m, 0, 0, 0.5), 2u);
  EXPECT_EQ(count_local_maxima(m, 0, 0, 0.05), 3u);
}
