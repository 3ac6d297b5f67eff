#include <gtest/gtest.h>

#include <sstream>

#include "test_util.hpp"

using namespace flowpose;
using testutil::random_tensor;

TEST(PoolParametric, CenterWeightsSelectCenter) {
  std::mt19937_64 rng(1);
  const Tensor w = random_tensor({5, 3, 4, 4}, rng);
  EXPECT_EQ(pool_parametric(w, PoolingWeights::center(2, 3)), batch_item(w, 2));
}

TEST(PoolParametric, UniformWeightsAverage) {
  std::mt19937_64 rng(2);
  const Tensor w = random_tensor({3, 2, 4, 4}, rng);
  const Tensor p = pool_parametric(w, PoolingWeights::uniform(1, 2));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 16; ++i)
      EXPECT_NEAR(p.plane(0, c)[i], (w.plane(0, c)[i] + w.plane(1, c)[i] + w.plane(2, c)[i]) / 3.0, 1e-15);
}

TEST(PoolParametric, RejectsDimensionMismatch) {
  EXPECT_THROW(pool_parametric(Tensor({3, 2, 4, 4}), PoolingWeights::uniform(2, 2)), std::invalid_argument);
  EXPECT_THROW(pool_parametric(Tensor({3, 2, 4, 4}), PoolingWeights::uniform(1, 3)), std::invalid_argument);
}

TEST(PoolParametric, GradientCheck) {
  std::mt19937_64 rng(3);
  const Tensor target = random_tensor({1, 3, 5, 5}, rng);
  EXPECT_LT(testutil::max_rel_grad_error(
                [&](Tape& t, const std::vector<Var>& v) { return l2_loss(t, pool_parametric(t, v[0], v[1]), target); },
                {random_tensor({5, 3, 5, 5}, rng), random_tensor({1, 1, 5, 3}, rng)}, 1e-3),
            1e-8);
}

TEST(PoolParametric, ArgmaxInvariantToPositiveScaling) {
  std::mt19937_64 rng(4);
  const Tensor w = random_tensor({3, 4, 8, 8}, rng);
  PoolingWeights a(1, 4), b(1, 4);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 4; ++c) {
      a(t, c) = std::uniform_real_distribution<double>(-1, 1)(rng);
      b(t, c) = 2.5 * a(t, c);
    }
  const Pose pa = decode_argmax(pool_parametric(w, a), 4.0), pb = decode_argmax(pool_parametric(w, b), 4.0);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(pa[c].x, pb[c].x);
    EXPECT_EQ(pa[c].y, pb[c].y);
  }
}

TEST(PoolSumMax, SingleStackIdentity) {
  std::mt19937_64 rng(5);
  const Tensor w = random_tensor({1, 2, 3, 3}, rng);
  EXPECT_EQ(pool_sum(w), w);
  EXPECT_EQ(pool_max(w), w);
}

TEST(PoolSumMax, MaxOfZeroAndPeak) {
  Tensor w({2, 1, 4, 4});
  w.at(1, 0, 2, 1) = 0.7;
  EXPECT_EQ(pool_max(w), batch_item(w, 1));
}

TEST(PoolSumMax, SumOfCopies) {
  std::mt19937_64 rng(6);
  const Tensor h = random_tensor({1, 2, 3, 3}, rng);
  Tensor w({4, 2, 3, 3});
  for (std::size_t t = 0; t < 4; ++t) std::copy_n(h.ptr(), h.size(), w.ptr() + t * h.size());
  const Tensor s = pool_sum(w);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(s[i], 4.0 * h[i]);
}

TEST(LearnPooling, SingleFrameMatchesLeastSquares) {
  std::mt19937_64 rng(7);
  std::vector<PoolingSample> samples;
  double hh = 0.0, ht = 0.0;
  for (int i = 0; i < 6; ++i) {
    PoolingSample s{random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0), random_tensor({1, 1, 6, 6}, rng, 0.0, 1.0)};
    for (std::size_t e = 0; e < 36; ++e) {
      hh += s.warped[e] * s.warped[e];
      ht += s.warped[e] * s.target[e];
    }
    samples.push_back(std::move(s));
  }
  const PoolingTrainResult r = learn_pooling_weights(samples, PoolingWeights::uniform(0, 1));
  EXPECT_NEAR(r.weights(0, 0), ht / hh, 1e-3);
}

TEST(LearnPooling, RecoversPlantedProfile) {
  std::mt19937_64 rng(8);
  const std::size_t n = 2, k = 2;
  // Planted: 0.6 centre, 0.3 split over the two neighbours, 0.1 over the rest.
  const std::vector<double> planted = {0.05, 0.15, 0.6, 0.15, 0.05};
  std::vector<PoolingSample> samples;
  for (int i = 0; i < 20; ++i) {
    PoolingSample s{random_tensor({2 * n + 1, k, 8, 8}, rng, 0.0, 1.0), Tensor({1, k, 8, 8})};
    for (std::size_t t = 0; t < 2 * n + 1; ++t)
      for (std::size_t c = 0; c < k; ++c)
        for (std::size_t e = 0; e < 64; ++e) s.target.plane(0, c)[e] += planted[t] * s.warped.plane(t, c)[e];
    samples.push_back(std::move(s));
  }
  const PoolingTrainResult r = learn_pooling_weights(samples, PoolingWeights::uniform(n, k));
  for (std::size_t t = 0; t < 2 * n + 1; ++t)
    for (std::size_t c = 0; c < k; ++c) EXPECT_NEAR(r.weights(t, c), planted[t], 0.05);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(LearnPooling, RejectsInconsistentStacks) {
  std::vector<PoolingSample> samples{{Tensor({3, 1, 4, 4}), Tensor({1, 1, 4, 4})},
                                     {Tensor({5, 1, 4, 4}), Tensor({1, 1, 4, 4})}};
  EXPECT_THROW(learn_pooling_weights(samples, PoolingWeights::uniform(1, 1)), std::invalid_argument);
}

TEST(WarpedStack, OutOfRangeOffsetsAreZeroAndCentreIsExact) {
  std::mt19937_64 rng(9);
  std::vector<Tensor> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(random_tensor({1, 2, 4, 4}, rng));
  const FlowProvider zero = [](std::size_t, long) { return FlowField(4, 4); };
  const Tensor s = build_warped_stack(maps, 0, 2, zero);
  EXPECT_EQ(s.shape(), (Shape{5, 2, 4, 4}));
  EXPECT_EQ(batch_item(s, 0), Tensor({1, 2, 4, 4}));
  EXPECT_EQ(batch_item(s, 1), Tensor({1, 2, 4, 4}));
  EXPECT_EQ(batch_item(s, 2), maps[0]);
  EXPECT_EQ(batch_item(s, 4), maps[2]);
}

TEST(PoolingCsv, RoundTrip) {
  std::mt19937_64 rng(10);
  PoolingWeights w(2, 7);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 7; ++c) w(t, c) = std::normal_distribution<double>(0, 1)(rng);
  std::stringstream ss;
  write_pooling_csv(ss, w, JointSet::upper_body());
  EXPECT_EQ(read_pooling_csv(ss), w);
  std::istringstream even("offset,a\n0,1\n1,2\n");
  EXPECT_THROW(read_pooling_csv(even), FormatError);
  EXPECT_THROW(pooling_type_from_string("mean"), ConfigError);
}
