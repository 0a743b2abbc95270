#include <gtest/gtest.h>

#include "taca/sampler.hpp"
#include "test_helpers.hpp"

using namespace taca;
using namespace taca::testing;

namespace {

ToyModel random_model(std::uint64_t seed, const ModelConfig& cfg = ModelConfig{}) {
  Rng rng(seed);
  return init_model(cfg, rng);
}

std::vector<int> prompt_for(int concept_id, const DataConfig& d) {
  std::vector<int> p(static_cast<std::size_t>(d.n_txt), d.concepts);
  p[1] = concept_id;
  return p;
}

}  // namespace

TEST(Sample, SingleStepUnguidedIsOneEulerStep) {
  const ToyModel m = random_model(1);
  const auto& d = m.config.data;
  SamplerConfig cfg;
  cfg.steps = 1;
  cfg.cfg_scale = 1.0;
  const auto prompt = prompt_for(3, d);
  const SampleResult r = sample(m, prompt, cfg);
  Rng rng(cfg.seed);
  const MatrixD noise = randn(d.n_vis, d.patch_dim, rng);
  ForwardOptions opts;
  opts.gamma = 1.2;
  const MatrixD expected = noise - predict_velocity(m, noise, prompt, 1000.0, opts);
  EXPECT_LE((r.tokens - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sample, GuidanceCombinesConditionalAndNullPrompt) {
  const ToyModel m = random_model(2);
  const auto& d = m.config.data;
  SamplerConfig cfg;
  cfg.steps = 1;
  cfg.cfg_scale = 3.5;
  cfg.taca_enabled = false;
  const auto prompt = prompt_for(5, d);
  Rng rng(cfg.seed);
  const MatrixD noise = randn(d.n_vis, d.patch_dim, rng);
  const MatrixD vc = predict_velocity(m, noise, prompt, 1000.0, {});
  const MatrixD vu = predict_velocity(m, noise, null_prompt(d), 1000.0, {});
  const MatrixD expected = noise - (vu + 3.5 * (vc - vu));
  EXPECT_LE((sample(m, prompt, cfg).tokens - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sample, GammaOneIsBitwiseBaseline) {
  const ToyModel m = random_model(3);
  const auto prompt = prompt_for(1, m.config.data);
  SamplerConfig with, without;
  with.taca.gamma0 = 1.0;
  without.taca_enabled = false;
  EXPECT_EQ(sample(m, prompt, with).tokens, sample(m, prompt, without).tokens);
}

TEST(Sample, GammaActiveOnExactlyFirstThreeSteps) {
  const ToyModel m = random_model(4, tiny_config());
  const auto prompt = prompt_for(0, m.config.data);
  const SampleResult r = sample(m, prompt, SamplerConfig{});
  ASSERT_EQ(r.log.size(), 30u);
  for (const auto& s : r.log) {
    const bool active = s.step <= 2;
    EXPECT_EQ(s.gamma_active, active) << s.step;
    EXPECT_DOUBLE_EQ(s.gamma, active ? 1.2 : 1.0);
  }
}

TEST(Sample, DeterministicPerSeed) {
  const ToyModel m = random_model(5, tiny_config());
  const auto prompt = prompt_for(1, m.config.data);
  SamplerConfig a, b;
  b.seed = 7;
  EXPECT_EQ(sample(m, prompt, a).tokens, sample(m, prompt, a).tokens);
  EXPECT_NE(sample(m, prompt, a).tokens, sample(m, prompt, b).tokens);
}

TEST(Sample, StrategiesAgree) {
  const ToyModel m = random_model(6, tiny_config());
  const auto prompt = prompt_for(1, m.config.data);
  SamplerConfig ref, sel;
  sel.taca.strategy = KernelStrategy::selective;
  EXPECT_LE((sample(m, prompt, ref).tokens - sample(m, prompt, sel).tokens).cwiseAbs().maxCoeff(),
            1e-10);
}

TEST(Sample, InvalidConfig) {
  const ToyModel m = random_model(7, tiny_config());
  const auto prompt = prompt_for(1, m.config.data);
  SamplerConfig cfg;
  cfg.steps = 0;
  EXPECT_THROW(sample(m, prompt, cfg), DomainError);
  cfg = SamplerConfig{};
  cfg.cfg_scale = 0.5;
  EXPECT_THROW(sample(m, prompt, cfg), DomainError);
}

TEST(AlignmentProbe, OracleGeneratorIsPerfectlyAligned) {
  const DataConfig d;
  Rng rng(8);
  const auto prompts = synth_dataset(24, d, rng);
  const Generator oracle = [&](const SyntheticBatch& p, double, std::uint64_t) {
    return concept_template(p.concept_id, d);
  };
  const Generator wrong = [&](const SyntheticBatch& p, double, std::uint64_t) {
    return concept_template((p.concept_id + 1) % d.concepts, d);
  };
  const auto good = alignment_probe(oracle, prompts, {1.0, 1.2}, d, 42);
  const auto bad = alignment_probe(wrong, prompts, {1.0}, d, 42);
  ASSERT_EQ(good.size(), 2u);
  EXPECT_GT(good[0].mean_score, 0.5);
  EXPECT_EQ(good[0].mean_score, good[1].mean_score);
  EXPECT_LT(bad[0].mean_score, good[0].mean_score);

  std::vector<MatrixD> outs;
  std::vector<int> labels;
  for (const auto& p : prompts) {
    outs.push_back(oracle(p, 1.0, 0));
    labels.push_back(p.concept_id);
  }
  Rng perm(9);
  EXPECT_LT(permutation_p_value(outs, labels, d, 999, perm), 0.01);
}

TEST(AlignmentProbe, UntrainedModelIsIndistinguishableFromChance) {
  const ToyModel m = random_model(10);
  Rng rng(11);
  const auto prompts = synth_dataset(24, m.config.data, rng);
  SamplerConfig cfg;
  cfg.steps = 10;
  const auto gen = model_generator(m, cfg);
  std::vector<MatrixD> outs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    outs.push_back(gen(prompts[i], 1.2, Rng(12).fork(i).seed()));
    labels.push_back(prompts[i].concept_id);
  }
  Rng perm(13);
  EXPECT_GT(permutation_p_value(outs, labels, m.config.data, 999, perm), 0.01);
}

TEST(AlignmentProbe, PairedSeedsAcrossGammaValues) {
  const DataConfig d;
  Rng rng(14);
  const auto prompts = synth_dataset(5, d, rng);
  std::vector<std::uint64_t> seen;
  const Generator spy = [&](const SyntheticBatch& p, double, std::uint64_t seed) {
    seen.push_back(seed);
    return concept_template(p.concept_id, d);
  };
  alignment_probe(spy, prompts, {1.0, 1.2}, d, 42);
  ASSERT_EQ(seen.size(), 10u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(seen[i], seen[i + 5]);
  EXPECT_THROW(alignment_probe(spy, {}, {1.0}, d, 42), DomainError);
}
