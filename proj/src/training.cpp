#include "taca/training.hpp"

#include <cmath>
#include <sstream>

#include "taca/flow.hpp"

namespace taca {
namespace {

template <typename Model>
auto params_of_kind(Model& m, bool adapters) {
  std::vector<decltype(&m.vis_pos)> out;
  visit_params(m, [&](const std::string&, auto& p, ParamKind kind) {
    if (adapters ? kind == ParamKind::lora : kind == ParamKind::base) out.push_back(&p);
  });
  return out;
}

}  // namespace

AdamW::AdamW(const ToyModel& model, AdamWConfig cfg)
    : cfg_(cfg), m_(zeros_like(model)), v_(zeros_like(model)) {
  if (!(cfg.lr > 0.0)) throw DomainError("AdamW: learning rate must be > 0");
}

void AdamW::step(ToyModel& model, const ToyModel& grad) {
  const bool adapters = model.has_adapters();
  auto params = params_of_kind(model, adapters);
  auto grads = params_of_kind(grad, adapters);
  auto ms = params_of_kind(m_, adapters);
  auto vs = params_of_kind(v_, adapters);
  if (grads.size() != params.size() || ms.size() != params.size()) {
    throw ShapeError("AdamW: optimizer state does not match the model structure");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    MatrixD& p = *params[i];
    const MatrixD& g = *grads[i];
    *ms[i] = cfg_.beta1 * *ms[i] + (1.0 - cfg_.beta1) * g;
    *vs[i] = cfg_.beta2 * *vs[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p *= 1.0 - cfg_.lr * cfg_.weight_decay;
    p.array() -= cfg_.lr * (ms[i]->array() / bc1) / ((vs[i]->array() / bc2).sqrt() + cfg_.eps);
  }
}

PhaseConfig pretrain_phase() { return PhaseConfig{}; }

PhaseConfig finetune_phase(const TacaConfig& cfg) {
  PhaseConfig p;
  p.name = "finetune";
  p.t_min = cfg.t_thresh;
  p.t_max = kMaxTimestep;
  p.taca = true;
  return p;
}

double batch_loss(const ToyModel& model, const std::vector<const SyntheticBatch*>& batch,
                  const std::vector<double>& timesteps, const std::vector<MatrixD>& noise,
                  const std::vector<bool>& drop_prompt, const TacaConfig& taca, bool use_taca,
                  ToyModel* grad, bool base_grads) {
  if (batch.empty()) throw DomainError("batch_loss: empty batch");
  const auto null = null_prompt(model.config.data);
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FlowSample fs = flow_interpolate(batch[i]->x0, noise[i], timesteps[i]);
    ForwardOptions opts;
    opts.gamma = use_taca ? gamma_schedule(timesteps[i], taca) : 1.0;
    opts.tau = taca.tau;
    const std::vector<int>& prompt = drop_prompt[i] ? null : batch[i]->prompt;
    total += weight * velocity_loss(model, fs.x_t, prompt, timesteps[i], fs.v_target, opts, grad,
                                    weight, base_grads);
  }
  return total;
}

StepRecord train_step(ToyModel& model, const std::vector<const SyntheticBatch*>& batch,
                      const TacaConfig& taca, const PhaseConfig& phase, TrainState& state) {
  const auto& data = model.config.data;
  std::vector<double> ts;
  std::vector<MatrixD> noise;
  std::vector<bool> drop;
  StepRecord rec;
  rec.phase = phase.name;
  rec.step = state.step;
  rec.gamma = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double t = state.rng.uniform(phase.t_min, phase.t_max);
    ts.push_back(t);
    noise.push_back(randn(data.n_vis, data.patch_dim, state.rng));
    drop.push_back(state.rng.uniform() < phase.p_uncond);
    rec.t += t / static_cast<double>(batch.size());
    rec.gamma += (phase.taca ? gamma_schedule(t, taca) : 1.0) / static_cast<double>(batch.size());
  }

  const bool adapters = model.has_adapters();
  ToyModel grad = zeros_like(model);
  rec.loss = batch_loss(model, batch, ts, noise, drop, taca, phase.taca, &grad, !adapters);
  if (!std::isfinite(rec.loss)) {
    std::ostringstream msg;
    msg << "training diverged: phase " << phase.name << " step " << state.step << " t "
        << rec.t << " loss " << rec.loss;
    throw NumericError(msg.str());
  }
  state.optimizer.step(model, grad);
  ++state.step;
  return rec;
}

std::vector<StepRecord> train_phase(ToyModel& model, const std::vector<SyntheticBatch>& dataset,
                                    const TacaConfig& taca, const PhaseConfig& phase, int steps,
                                    TrainState& state,
                                    const std::function<void(const StepRecord&)>& on_step) {
  if (steps < 1) throw DomainError("train_phase: steps must be >= 1");
  if (phase.batch_size < 1) throw DomainError("train_phase: batch size must be >= 1");
  if (dataset.empty()) throw DomainError("train_phase: empty dataset");
  std::vector<StepRecord> log;
  log.reserve(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    std::vector<const SyntheticBatch*> batch;
    for (int b = 0; b < phase.batch_size; ++b) {
      batch.push_back(&dataset[state.rng.below(dataset.size())]);
    }
    log.push_back(train_step(model, batch, taca, phase, state));
    if (on_step) on_step(log.back());
  }
  return log;
}

double window_mean(const std::vector<StepRecord>& log, int window, bool from_end) {
  if (log.empty() || window < 1) throw DomainError("window_mean: empty log or window");
  const auto w = std::min<std::size_t>(static_cast<std::size_t>(window), log.size());
  const std::size_t start = from_end ? log.size() - w : 0;
  double sum = 0.0;
  for (std::size_t i = start; i < start + w; ++i) sum += log[i].loss;
  return sum / static_cast<double>(w);
}

}  // namespace taca
