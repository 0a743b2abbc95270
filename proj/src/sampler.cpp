#include "taca/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace taca {

void SamplerConfig::validate() const {
  if (steps < 1) throw DomainError("sampler: steps must be >= 1");
  if (!(shift > 0.0)) throw DomainError("sampler: shift must be > 0");
  if (!(cfg_scale >= 1.0)) throw DomainError("sampler: cfg_scale must be >= 1");
  taca.validate();
}

SampleResult sample(const ToyModel& model, std::span<const int> prompt, const SamplerConfig& cfg) {
  cfg.validate();
  const FlowSchedule schedule = make_schedule(cfg.steps, cfg.shift);
  const auto& data = model.config.data;
  const auto null = null_prompt(data);

  Rng rng(cfg.seed);
  SampleResult res;
  res.tokens = randn(data.n_vis, data.patch_dim, rng);
  for (int i = 0; i < schedule.steps; ++i) {
    const double t = schedule.timesteps[static_cast<std::size_t>(i)];
    ForwardOptions opts;
    opts.gamma = cfg.taca_enabled ? gamma_schedule(t, cfg.taca) : 1.0;
    opts.tau = cfg.taca.tau;
    opts.strategy = cfg.taca.strategy;

    MatrixD v = predict_velocity(model, res.tokens, prompt, t, opts);
    if (cfg.cfg_scale != 1.0) {
      const MatrixD v_uncond = predict_velocity(model, res.tokens, null, t, opts);
      v = v_uncond + cfg.cfg_scale * (v - v_uncond);
    }
    res.tokens += (schedule.next_sigma(i) - schedule.sigma(i)) * v;
    if (!all_finite(res.tokens)) {
      throw NumericError("sampler: non-finite state after step " + std::to_string(i));
    }
    res.log.push_back({i, t, schedule.sigma(i), opts.gamma, cfg.taca_enabled && t >= cfg.taca.t_thresh});
  }
  return res;
}

Generator model_generator(const ToyModel& model, const SamplerConfig& base) {
  return [&model, base](const SyntheticBatch& pair, double gamma0, std::uint64_t seed) {
    SamplerConfig cfg = base;
    cfg.taca.gamma0 = gamma0;
    cfg.seed = seed;
    return sample(model, pair.prompt, cfg).tokens;
  };
}

ProbeRow summarize_scores(double gamma0, std::vector<double> scores) {
  ProbeRow row;
  row.gamma0 = gamma0;
  row.scores = std::move(scores);
  row.samples = static_cast<int>(row.scores.size());
  if (row.scores.empty()) return row;
  const double n = static_cast<double>(row.scores.size());
  row.mean_score = std::accumulate(row.scores.begin(), row.scores.end(), 0.0) / n;
  double ss = 0.0;
  for (double s : row.scores) ss += (s - row.mean_score) * (s - row.mean_score);
  row.std_error = row.samples > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return row;
}

std::vector<SyntheticBatch> probe_prompts(int count, const DataConfig& data, std::uint64_t seed) {
  if (count < 1) throw DomainError("probe_prompts: count must be >= 1");
  data.validate();
  // Separate stream from the per-sample noise seeds, which use fork(i) of `seed`.
  const Rng base = Rng(seed).fork(0x9e37);
  std::vector<SyntheticBatch> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = base.fork(static_cast<std::uint64_t>(i));
    out.push_back(synth_pair(i % data.concepts, data, rng));
  }
  return out;
}

std::vector<ProbeRow> alignment_probe(const Generator& gen,
                                      const std::vector<SyntheticBatch>& prompts,
                                      const std::vector<double>& gamma0_values,
                                      const DataConfig& data, std::uint64_t seed) {
  if (prompts.empty()) throw DomainError("alignment_probe: no prompts");
  const Rng seeds(seed);
  std::vector<ProbeRow> rows;
  for (double g : gamma0_values) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const MatrixD out = gen(prompts[i], g, seeds.fork(i).seed());
      scores.push_back(alignment_score(out, prompts[i].concept_id, data));
    }
    ProbeRow row = summarize_scores(g, std::move(scores));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ProbeRow> alignment_probe(const ToyModel& model,
                                      const std::vector<SyntheticBatch>& prompts,
                                      const std::vector<double>& gamma0_values,
                                      const SamplerConfig& base) {
  return alignment_probe(model_generator(model, base), prompts, gamma0_values, model.config.data,
                         base.seed);
}

double permutation_p_value(const std::vector<MatrixD>& outputs, const std::vector<int>& concepts,
                           const DataConfig& data, int permutations, Rng& rng) {
  if (outputs.size() != concepts.size() || outputs.empty()) {
    throw ShapeError("permutation_p_value: outputs and concepts must be non-empty and aligned");
  }
  if (permutations < 1) throw DomainError("permutation_p_value: permutations must be >= 1");
  // score(i, k) table so each permutation is a cheap lookup.
  const std::size_t n = outputs.size();
  MatrixD table(static_cast<Index>(n), data.concepts);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < data.concepts; ++k) {
      table(static_cast<Index>(i), k) = alignment_score(outputs[i], k, data);
    }
  }
  auto mean_score = [&](const std::vector<int>& labels) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += table(static_cast<Index>(i), labels[i]);
    return s / static_cast<double>(n);
  };
  const double observed = std::abs(mean_score(concepts));
  std::vector<int> labels = concepts;
  int extreme = 0;
  for (int p = 0; p < permutations; ++p) {
    for (std::size_t i = n - 1; i > 0; --i) std::swap(labels[i], labels[rng.below(i + 1)]);
    if (std::abs(mean_score(labels)) >= observed) ++extreme;
  }
  return (1.0 + extreme) / (1.0 + permutations);
}

}  // namespace taca
