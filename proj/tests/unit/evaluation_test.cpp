#include <gtest/gtest.h>

#include <cmath>

#include "../support/tiny_data.hpp"
#include "dualobs/eval/evaluate.hpp"

namespace dualobs::eval {
namespace {

double smooth(int traj, int frame, int flat, int res) {
  const double x = static_cast<double>(flat % res) / res, y = static_cast<double>(flat / res) / res;
  return std::sin(2 * M_PI * x + 0.3 * traj) * std::cos(2 * M_PI * y) * (1.0 - 0.02 * frame);
}

TEST(Regions, CountsFollowTheMask) {
  auto ds = testing::synthetic_dataset(64, 2, 1, 0.25, 1, 1, [](int, int, int) { return 0.0; });
  auto r = evaluate("zero", ds, "test", 2, [&](const pde::SparseTrajectory& t, int frames) {
    return FieldEstimate(t.dense.begin(), t.dense.begin() + frames);
  });
  EXPECT_EQ(r.counts["in_x"], 2 * 1024);
  EXPECT_EQ(r.counts["ext_x"], 2 * 3072);
  EXPECT_EQ(r.counts["all"], 2 * 4096);
  EXPECT_EQ(r.counts["ext_t"], 0);
  EXPECT_TRUE(r.regions["ext_t"].is_null());
  EXPECT_EQ(r.regions["all"], 0.0);
}

TEST(Regions, PartitionCoversEveryPointOnce) {
  auto ds = testing::synthetic_dataset(16, 6, 3, 0.3, 1, 2, [](int, int, int) { return 0.0; });
  auto r = evaluate("zero", ds, "val", 6, [&](const pde::SparseTrajectory& t, int frames) {
    return FieldEstimate(t.dense.begin(), t.dense.begin() + frames);
  });
  const long total = 2L * 6 * 256;
  EXPECT_EQ(r.counts["in_x_in_t"].get<long>() + r.counts["in_x_ext_t"].get<long>() +
                r.counts["ext_x_in_t"].get<long>() + r.counts["ext_x_ext_t"].get<long>(),
            total);
  EXPECT_EQ(r.counts["in_t"].get<long>(), 2L * 2 * 256);  // frames 0 and 3
  EXPECT_EQ(r.counts["in_x"].get<long>() + r.counts["ext_x"].get<long>(), total);
}

TEST(Regions, AggregationMatchesBruteForceOnToyGrid) {
  std::vector<bool> in_x(16);
  for (int k : {0, 5, 10, 15}) in_x[static_cast<std::size_t>(k)] = true;
  RegionAccumulator acc(in_x, 2, 3);
  Rng rng(1);
  double brute[2][2] = {};
  long n[2][2] = {};
  for (int f = 0; f < 3; ++f)
    for (int k = 0; k < 16; ++k) {
      const double p = rng.uniform(), t = rng.uniform();
      acc.add(f, k, p, t);
      const int ex = in_x[static_cast<std::size_t>(k)] ? 0 : 1, et = f % 2 ? 1 : 0;
      brute[ex][et] += (p - t) * (p - t);
      ++n[ex][et];
    }
  for (int x = 0; x < 2; ++x)
    for (int t = 0; t < 2; ++t) EXPECT_NEAR(*acc.mse(x, t), brute[x][t] / n[x][t], 1e-15);
  EXPECT_NEAR(*acc.mse(-1, -1),
              (brute[0][0] + brute[0][1] + brute[1][0] + brute[1][1]) / 48.0, 1e-15);
}

TEST(Evaluate, GroundTruthStubScoresZeroAndMissingDenseNamesSplit) {
  auto ds = testing::synthetic_dataset(16, 4, 2, 0.25, 1, 1,
                                       [](int tr, int f, int k) { return smooth(tr, f, k, 16); });
  auto truth = [](const pde::SparseTrajectory& t, int frames) {
    return FieldEstimate(t.dense.begin(), t.dense.begin() + frames);
  };
  auto r = evaluate("truth", ds, "test", 4, truth);
  for (const auto& key : region_keys()) EXPECT_EQ(r.regions[key], 0.0) << key;
  try {
    evaluate("truth", ds, "train", 4, truth);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("'train'"), std::string::npos);
  }
}

TEST(TimeOracle, ExactAtObservedPointsAndConstants) {
  auto ds = testing::synthetic_dataset(32, 4, 2, 0.25, 1, 1,
                                       [](int tr, int f, int k) { return smooth(tr, f, k, 32); });
  auto r = evaluate("time_oracle", ds, "test", 4,
                    [&](const pde::SparseTrajectory& t, int frames) { return time_oracle(ds, t, frames); });
  EXPECT_EQ(r.regions["in_x"], 0.0);
  EXPECT_GT(r.regions["ext_x"].get<double>(), 0.0);
  EXPECT_LT(r.regions["ext_x"].get<double>(), 1.0);  // x 1e-3: a smooth field is resolved well

  auto flat = testing::synthetic_dataset(16, 3, 1, 0.3, 1, 1, [](int, int, int) { return 2.5; });
  for (const auto& field : time_oracle(flat, flat.test[0], 3))
    for (float v : field.storage()) EXPECT_NEAR(v, 2.5f, 1e-6f);
}

TEST(SpatialOracle, ExactOnSampledFramesAndLinearInTime) {
  auto ds = testing::synthetic_dataset(8, 12, 3, 0.25, 1, 1,
                                       [](int, int f, int k) { return (k % 7) + 3.0 * f; });
  const auto est = spatial_oracle(ds, ds.test[0], 12);
  for (int f = 0; f < 12; ++f)
    for (int k = 0; k < 64; ++k)
      EXPECT_NEAR(est[static_cast<std::size_t>(f)].storage()[static_cast<std::size_t>(k)], (k % 7) + 3.0 * f, 1e-10);
  auto dense = testing::synthetic_dataset(8, 4, 1, 0.25, 1, 1, [](int, int, int) { return 0.0; });
  EXPECT_THROW(spatial_oracle(dense, dense.test[0], 4), NotApplicable);
}

TEST(SpatialOracle, LagrangeWeightsReproduceCubics) {
  const std::array<double, 4> nodes{0, 2, 4, 6};
  const auto w = lagrange_weights(nodes, 3.0);
  double sum = 0, cubic = 0;
  for (int j = 0; j < 4; ++j) {
    sum += w[j];
    cubic += w[j] * (nodes[j] * nodes[j] * nodes[j] - nodes[j]);
  }
  EXPECT_NEAR(sum, 1.0, 1e-14);
  EXPECT_NEAR(cubic, 27.0 - 3.0, 1e-12);
  EXPECT_THROW(lagrange_weights({0, 1, 1, 2}, 0.5), std::invalid_argument);
}

TEST(NearestNeighbor, ExactAtObservedNodesOnSampledFrames) {
  auto ds = testing::synthetic_dataset(16, 6, 2, 0.25, 1, 1,
                                       [](int tr, int f, int k) { return smooth(tr, f, k, 16); });
  const auto est = nearest_neighbor(ds, ds.test[0], 6);
  for (int f = 0; f < 6; f += 2)
    for (int k : ds.mask.indices)
      EXPECT_EQ(est[static_cast<std::size_t>(f)].storage()[static_cast<std::size_t>(k)],
                ds.test[0].dense[static_cast<std::size_t>(f)].storage()[static_cast<std::size_t>(k)]);
  // Odd frames copy the earlier sampled frame.
  EXPECT_EQ(est[3].storage()[static_cast<std::size_t>(ds.mask.indices[0])],
            ds.test[0].dense[2].storage()[static_cast<std::size_t>(ds.mask.indices[0])]);
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.gru_layers = 1;
  return c;
}

TEST(EvaluateModel, OneRolloutPerTrajectoryAndExtrapolationHorizon) {
  auto ds = testing::synthetic_dataset(8, 4, 2, 0.25, 1, 3,
                                       [](int tr, int f, int k) { return smooth(tr, f, k, 8); }, 8);
  model::Surrogate<float> m(tiny_model(), 1);
  auto r = evaluate_model(m, ds, "test", 1, 4);
  EXPECT_EQ(r.rollout_calls, 3);
  EXPECT_EQ(r.per_frame.size(), 4u);
  auto ext = evaluate_model(m, ds, "test", 1, 8);
  EXPECT_EQ(ext.rollout_calls, 3);
  EXPECT_EQ(ext.horizon_frames, 8);
  // The first T frames of the extrapolation run only differ through extra anchors.
  EXPECT_TRUE(std::isfinite(ext.regions["all"].get<double>()));
  for (const auto& key : {"in_x_in_t", "in_x_ext_t", "ext_x_in_t", "ext_x_ext_t"})
    EXPECT_TRUE(r.to_json()["regions"].contains(key));
}

TEST(RuntimeProfile, ReportsOrderedStatsAndConstantRollout) {
  auto ds = testing::synthetic_dataset(8, 4, 2, 0.5, 1, 1,
                                       [](int tr, int f, int k) { return smooth(tr, f, k, 8); });
  model::Surrogate<float> m(tiny_model(), 2);
  auto p = runtime_profile(m, ds, 1, {16, 64}, {0.1, 0.5, 1.0}, {1, 4}, 3);
  for (const auto& s : p.by_queries) {
    EXPECT_LE(s.min, s.mean);
    EXPECT_LE(s.mean, s.max);
  }
  ASSERT_EQ(p.rollout_steps_by_time_points.size(), 2u);
  EXPECT_EQ(p.rollout_steps_by_time_points[0], p.rollout_steps_by_time_points[1]);
  EXPECT_EQ(p.marginal_cost.size(), 3u);
  EXPECT_TRUE(p.to_json().contains("marginal_spread"));
}

}  // namespace
}  // namespace dualobs::eval
