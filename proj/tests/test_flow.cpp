#include <gtest/gtest.h>

#include "taca/flow.hpp"

using namespace taca;

TEST(MakeSchedule, ThirtyStepsShiftThree) {
  const FlowSchedule s = make_schedule(30, 3.0);
  ASSERT_EQ(s.timesteps.size(), 30u);
  // Direct evaluation of the shift formula.
  EXPECT_DOUBLE_EQ(s.timesteps[0], 1000.0);
  EXPECT_NEAR(s.timesteps[1], 988.636363636364, 1e-9);
  EXPECT_NEAR(s.timesteps[2], 976.744186046512, 1e-9);
  EXPECT_NEAR(s.timesteps[3], 964.285714285714, 1e-9);
  TacaConfig cfg;
  cfg.t_thresh = 970;
  EXPECT_EQ(s.active_steps(cfg), 3);
}

TEST(MakeSchedule, ShiftOneIsLinear) {
  const FlowSchedule s = make_schedule(8, 1.0);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(s.timesteps[i], 1000.0 * (1.0 - i / 8.0), 1e-12);
}

TEST(MakeSchedule, SingleStep) {
  const FlowSchedule s = make_schedule(1, 3.0);
  ASSERT_EQ(s.timesteps.size(), 1u);
  EXPECT_EQ(s.timesteps[0], 1000.0);
  EXPECT_EQ(s.next_sigma(0), 0.0);
}

TEST(MakeSchedule, StrictlyDecreasingAndActivePrefix) {
  for (int steps : {1, 2, 10, 30, 50}) {
    for (double shift : {0.5, 1.0, 3.0, 6.0}) {
      const FlowSchedule s = make_schedule(steps, shift);
      for (std::size_t i = 1; i < s.timesteps.size(); ++i) EXPECT_LT(s.timesteps[i], s.timesteps[i - 1]);
      TacaConfig cfg;
      const int active = s.active_steps(cfg);
      for (int i = 0; i < steps; ++i) EXPECT_EQ(s.timesteps[i] >= cfg.t_thresh, i < active);
    }
  }
}

TEST(MakeSchedule, InvalidParameters) {
  EXPECT_THROW(make_schedule(0, 3.0), DomainError);
  EXPECT_THROW(make_schedule(10, 0.0), DomainError);
}

TEST(FlowInterpolate, Endpoints) {
  Rng rng(1);
  const MatrixD x0 = randn(4, 3, rng), noise = randn(4, 3, rng);
  EXPECT_EQ(flow_interpolate(x0, noise, 0.0).x_t, x0);
  EXPECT_EQ(flow_interpolate(x0, noise, 1000.0).x_t, noise);
  EXPECT_EQ(flow_interpolate(x0, noise, 500.0).v_target, noise - x0);
}

TEST(FlowInterpolate, ReconstructsCleanSample) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const MatrixD x0 = randn(5, 2, rng), noise = randn(5, 2, rng);
    const double t = rng.uniform(0.0, 1000.0);
    const FlowSample fs = flow_interpolate(x0, noise, t);
    EXPECT_LE((fs.x_t - (t / 1000.0) * fs.v_target - x0).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(FlowInterpolate, Errors) {
  EXPECT_THROW(flow_interpolate(MatrixD::Zero(2, 2), MatrixD::Zero(2, 3), 10.0), ShapeError);
  EXPECT_THROW(flow_interpolate(MatrixD::Zero(2, 2), MatrixD::Zero(2, 2), 1001.0), DomainError);
}

TEST(TimestepEmbedding, ShapeAndRange) {
  const auto e = timestep_embedding(970.0, 16);
  EXPECT_EQ(e.size(), 16);
  EXPECT_LE(e.cwiseAbs().maxCoeff(), 1.0);
  EXPECT_DOUBLE_EQ(timestep_embedding(0.0, 4)(0), 1.0);
  EXPECT_THROW(timestep_embedding(1.0, 3), DomainError);
}
