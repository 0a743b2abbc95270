#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "taca/flow.hpp"
#include "taca/model.hpp"

namespace taca {

struct SamplerConfig {
  int steps = 30;
  double shift = 3.0;
  double cfg_scale = 3.5;  ///< 1 disables guidance
  TacaConfig taca;
  bool taca_enabled = true;  ///< false gives the baseline sampler
  std::uint64_t seed = kDefaultSeed;

  void validate() const;
};

struct SampleStepLog {
  int step = 0;
  double t = 0.0;
  double sigma = 0.0;
  double gamma = 1.0;
  bool gamma_active = false;
};

struct SampleResult {
  MatrixD tokens;
  std::vector<SampleStepLog> log;
};

/// Euler integration of the learned velocity from sigma = 1 down to 0,
/// starting from seeded noise, with classifier-free guidance against the
/// null prompt and gamma(t) inside every attention layer.
SampleResult sample(const ToyModel& model, std::span<const int> prompt, const SamplerConfig& cfg);

/// Anything that maps (prompt pair, gamma0, noise seed) to visual tokens.
using Generator = std::function<MatrixD(const SyntheticBatch&, double gamma0, std::uint64_t seed)>;

Generator model_generator(const ToyModel& model, const SamplerConfig& base);

struct ProbeRow {
  double gamma0 = 1.0;
  double mean_score = 0.0;
  double std_error = 0.0;
  int samples = 0;
  std::vector<double> scores;
};

/// Mean and standard error of the mean of `scores`.
ProbeRow summarize_scores(double gamma0, std::vector<double> scores);

/// Deterministic probe prompts: pair i shows concept i mod concepts.
std::vector<SyntheticBatch> probe_prompts(int count, const DataConfig& data, std::uint64_t seed);

/// Mean contrastive alignment of generated outputs for each gamma0. Sample i
/// uses noise seed fork(i) of `seed` for every gamma0, so rows are paired.
std::vector<ProbeRow> alignment_probe(const Generator& gen,
                                      const std::vector<SyntheticBatch>& prompts,
                                      const std::vector<double>& gamma0_values,
                                      const DataConfig& data, std::uint64_t seed);

std::vector<ProbeRow> alignment_probe(const ToyModel& model,
                                      const std::vector<SyntheticBatch>& prompts,
                                      const std::vector<double>& gamma0_values,
                                      const SamplerConfig& base);

/// Two-sided permutation p-value of the mean alignment score: concept labels
/// are shuffled across outputs to build the chance distribution.
double permutation_p_value(const std::vector<MatrixD>& outputs, const std::vector<int>& concepts,
                           const DataConfig& data, int permutations, Rng& rng);

}  // namespace taca
