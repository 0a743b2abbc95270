#pragma once

#include <vector>

#include "taca/attention.hpp"
#include "taca/tensor_math.hpp"

namespace taca {

inline constexpr double kMaxTimestep = 1000.0;

/// Decreasing timesteps with the usual flow-matching shift:
/// s_i = 1 - i / steps, t_i = 1000 * shift * s_i / (1 + (shift - 1) * s_i).
struct FlowSchedule {
  int steps = 0;
  double shift = 1.0;
  std::vector<double> timesteps;

  double sigma(int i) const { return timesteps.at(static_cast<std::size_t>(i)) / kMaxTimestep; }
  /// sigma of the state after step i; 0 after the last step.
  double next_sigma(int i) const { return i + 1 < steps ? sigma(i + 1) : 0.0; }
  /// Number of steps whose timestep is at or above t_thresh.
  int active_steps(const TacaConfig& cfg) const;
};

FlowSchedule make_schedule(int steps, double shift);

struct FlowSample {
  MatrixD x_t;
  MatrixD v_target;
};

/// Straight-line path with sigma = t / 1000: x_t = (1 - sigma) x0 + sigma noise,
/// velocity = noise - x0.
FlowSample flow_interpolate(const MatrixD& x0, const MatrixD& noise, double t);

/// Sinusoidal embedding [cos(t f_0..), sin(t f_0..)] with geometric frequencies.
RowVector<double> timestep_embedding(double t, Index dim);

}  // namespace taca
