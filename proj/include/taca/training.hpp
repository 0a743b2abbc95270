#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "taca/attention.hpp"
#include "taca/model.hpp"
#include "taca/synthetic.hpp"

namespace taca {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW over the trainable subset of a ToyModel: adapter factors when the
/// model carries adapters, otherwise every non-frozen parameter.
class AdamW {
 public:
  AdamW(const ToyModel& model, AdamWConfig cfg);

  void step(ToyModel& model, const ToyModel& grad);
  long steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  ToyModel m_, v_;
  long t_ = 0;
};

/// Timestep range and conditioning used by one training phase.
struct PhaseConfig {
  std::string name = "pretrain";
  double t_min = 0.0;
  double t_max = 1000.0;
  bool taca = false;            ///< apply gamma(t) inside attention
  double p_uncond = 0.1;        ///< probability of replacing the prompt by the null prompt
  int batch_size = 4;
};

PhaseConfig pretrain_phase();
/// t ~ U[t_thresh, 1000) with TACA active.
PhaseConfig finetune_phase(const TacaConfig& cfg);

struct StepRecord {
  std::string phase;
  long step = 0;
  double t = 0.0;      ///< mean timestep of the batch
  double loss = 0.0;
  double gamma = 1.0;  ///< mean gamma applied over the batch
};

struct TrainState {
  AdamW optimizer;
  Rng rng;
  long step = 0;
};

/// One optimizer step on `batch`. Throws NumericError with the step index,
/// timestep and loss when the loss is not finite.
StepRecord train_step(ToyModel& model, const std::vector<const SyntheticBatch*>& batch,
                      const TacaConfig& taca, const PhaseConfig& phase, TrainState& state);

/// Runs `steps` optimizer steps drawing batches from `dataset`.
std::vector<StepRecord> train_phase(ToyModel& model, const std::vector<SyntheticBatch>& dataset,
                                    const TacaConfig& taca, const PhaseConfig& phase, int steps,
                                    TrainState& state,
                                    const std::function<void(const StepRecord&)>& on_step = {});

/// Mean loss over the first or last `window` records.
double window_mean(const std::vector<StepRecord>& log, int window, bool from_end);

/// Batch-mean loss and gradient with explicit timesteps and noise; the
/// deterministic core of train_step.
double batch_loss(const ToyModel& model, const std::vector<const SyntheticBatch*>& batch,
                  const std::vector<double>& timesteps, const std::vector<MatrixD>& noise,
                  const std::vector<bool>& drop_prompt, const TacaConfig& taca, bool use_taca,
                  ToyModel* grad, bool base_grads);

}  // namespace taca
