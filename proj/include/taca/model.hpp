#pragma once

// Desk-scale MM-DiT: text and visual streams with separate weights that meet
// in one joint attention per block, followed by per-stream feed-forward
// layers. The network predicts the flow velocity of the visual tokens.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "taca/attention.hpp"
#include "taca/lora.hpp"
#include "taca/synthetic.hpp"

namespace taca {

struct ModelConfig {
  Index blocks = 2;
  Index d_model = 64;
  Index heads = 4;
  Index head_dim = 16;
  Index ffn_hidden = 128;
  Index time_dim = 32;
  DataConfig data;

  TokenLayout layout() const { return {data.n_txt, data.n_vis, heads, head_dim}; }
  void validate() const;
};

struct Linear {
  MatrixD weight;  ///< in x out
  MatrixD bias;    ///< 1 x out, or empty for bias-free projections
  std::optional<LoraAdapter> lora;

  MatrixD effective_weight() const;
  MatrixD forward(const MatrixD& x) const;
};

struct StreamWeights {
  Linear q, k, v, out, ff_in, ff_out;
};

struct Block {
  StreamWeights txt, vis;
};

struct ToyModel {
  ModelConfig config;
  MatrixD codebook;  ///< frozen text embeddings
  Linear txt_in, vis_in, time_in, vis_out;
  MatrixD vis_pos;   ///< learned additive position embedding, n_vis x d_model
  std::vector<Block> blocks;

  bool has_adapters() const;
};

enum class ParamKind { base, lora, frozen };

/// Calls fn(name, matrix, kind) for every parameter in a fixed order. Works on
/// const and mutable models and on gradient containers of the same shape.
template <typename Model, typename Fn>
void visit_params(Model& m, Fn&& fn) {
  auto linear = [&](const std::string& name, auto& l) {
    fn(name + ".weight", l.weight, ParamKind::base);
    if (l.bias.size() > 0) fn(name + ".bias", l.bias, ParamKind::base);
    if (l.lora) {
      fn(name + ".lora_a", l.lora->a, ParamKind::lora);
      fn(name + ".lora_b", l.lora->b, ParamKind::lora);
    }
  };
  fn(std::string("codebook"), m.codebook, ParamKind::frozen);
  linear("txt_in", m.txt_in);
  linear("vis_in", m.vis_in);
  linear("time_in", m.time_in);
  fn(std::string("vis_pos"), m.vis_pos, ParamKind::base);
  auto stream = [&](const std::string& p, auto& s) {
    linear(p + "q", s.q);
    linear(p + "k", s.k);
    linear(p + "v", s.v);
    linear(p + "out", s.out);
    linear(p + "ff_in", s.ff_in);
    linear(p + "ff_out", s.ff_out);
  };
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    const std::string prefix = "blocks." + std::to_string(b) + ".";
    stream(prefix + "txt.", m.blocks[b].txt);
    stream(prefix + "vis.", m.blocks[b].vis);
  }
  linear("vis_out", m.vis_out);
}

ToyModel init_model(const ModelConfig& cfg, Rng& rng);
/// Same structure with every parameter set to zero.
ToyModel zeros_like(const ToyModel& model);
/// Sum of all parameters, used to detect changes to frozen weights.
double base_checksum(const ToyModel& model);

struct LoraSpec {
  Index rank = 16;
  double alpha = 16.0;
  /// Subset of {q,k,v}_{txt,vis}; all six attention projections by default.
  std::vector<std::string> targets = {"q_txt", "k_txt", "v_txt", "q_vis", "k_vis", "v_vis"};
};

void attach_lora(ToyModel& model, const LoraSpec& spec, Rng& rng);
/// Folds every adapter into its base weight and removes it.
void merge_adapters(ToyModel& model);

struct ForwardOptions {
  double gamma = 1.0;
  double tau = 1.0;
  KernelStrategy strategy = KernelStrategy::reference;
};

struct BlockCache {
  MatrixD c_in, x_in;
  VectorD c_rms, x_rms;
  MatrixD cn, xn;
  Qkv<double> qkv;
  std::vector<MatrixD> probs;
  MatrixD attn;
  MatrixD c_mid, x_mid;
  VectorD c_rms2, x_rms2;
  MatrixD cn2, xn2;
  MatrixD c_hidden, x_hidden;  ///< ff_in outputs before SiLU
  MatrixD c_act, x_act;
};

/// Activations kept by a forward pass for backpropagation and inspection.
struct ForwardCache {
  std::vector<int> prompt;
  MatrixD text_embed;
  MatrixD x_t;
  RowVector<double> t_embed;
  std::vector<BlockCache> blocks;
  MatrixD x_final;
  VectorD out_rms;
  MatrixD out_norm;
  ForwardOptions options;
};

/// Velocity prediction (n_vis x patch_dim). With a cache the reference
/// kernel runs, since its probabilities are needed for backpropagation.
MatrixD predict_velocity(const ToyModel& model, const MatrixD& x_t, std::span<const int> prompt,
                         double t, const ForwardOptions& opts, ForwardCache* cache = nullptr);

/// Accumulates scale * dL/dparam into `grad` given dL/d(output). When
/// `base_grads` is false only adapter gradients are formed.
void backward(const ToyModel& model, const ForwardCache& cache, const MatrixD& d_output,
              ToyModel& grad, double scale, bool base_grads = true);

/// Mean squared velocity error of one example, plus its gradient if requested.
double velocity_loss(const ToyModel& model, const MatrixD& x_t, std::span<const int> prompt,
                     double t, const MatrixD& v_target, const ForwardOptions& opts,
                     ToyModel* grad = nullptr, double scale = 1.0, bool base_grads = true);

}  // namespace taca
