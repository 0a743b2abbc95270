#include "taca/flow.hpp"

#include <cmath>
#include <string>

namespace taca {

int FlowSchedule::active_steps(const TacaConfig& cfg) const {
  int n = 0;
  for (double t : timesteps) n += t >= cfg.t_thresh ? 1 : 0;
  return n;
}

FlowSchedule make_schedule(int steps, double shift) {
  if (steps < 1) throw DomainError("make_schedule: steps must be >= 1");
  if (!(shift > 0.0) || !std::isfinite(shift)) throw DomainError("make_schedule: shift must be > 0");
  FlowSchedule s;
  s.steps = steps;
  s.shift = shift;
  s.timesteps.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double lin = 1.0 - static_cast<double>(i) / steps;
    s.timesteps.push_back(kMaxTimestep * shift * lin / (1.0 + (shift - 1.0) * lin));
  }
  return s;
}

FlowSample flow_interpolate(const MatrixD& x0, const MatrixD& noise, double t) {
  require_same_shape(x0, noise, "flow_interpolate");
  if (!(t >= 0.0 && t <= kMaxTimestep)) {
    throw DomainError("flow_interpolate: timestep " + std::to_string(t) + " outside [0, 1000]");
  }
  const double sigma = t / kMaxTimestep;
  FlowSample out;
  if (sigma == 0.0) {
    out.x_t = x0;
  } else if (sigma == 1.0) {
    out.x_t = noise;
  } else {
    out.x_t = (1.0 - sigma) * x0 + sigma * noise;
  }
  out.v_target = noise - x0;
  return out;
}

RowVector<double> timestep_embedding(double t, Index dim) {
  if (dim < 2 || dim % 2 != 0) throw DomainError("timestep_embedding: dim must be even and >= 2");
  const Index half = dim / 2;
  RowVector<double> e(dim);
  for (Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    e(i) = std::cos(t * freq);
    e(half + i) = std::sin(t * freq);
  }
  return e;
}

}  // namespace taca
