#include "taca/model.hpp"

#include <cmath>

#include "taca/flow.hpp"

namespace taca {
namespace {

constexpr double kRmsEps = 1e-6;

MatrixD rms_norm(const MatrixD& x, VectorD& rms) {
  rms = ((x.array().square().rowwise().sum() / static_cast<double>(x.cols())) + kRmsEps).sqrt();
  return rms.cwiseInverse().asDiagonal() * x;
}

// dx = (dy - y * <dy, y> / n) / rms, row by row.
MatrixD rms_norm_backward(const MatrixD& y, const VectorD& rms, const MatrixD& dy) {
  const VectorD dot = dy.cwiseProduct(y).rowwise().sum() / static_cast<double>(y.cols());
  MatrixD dx = dy - dot.asDiagonal() * y;
  return rms.cwiseInverse().asDiagonal() * dx;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

MatrixD silu(const MatrixD& z) {
  return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

MatrixD silu_backward(const MatrixD& z, const MatrixD& dy) {
  return dy.binaryExpr(z, [](double g, double v) {
    const double s = sigmoid(v);
    return g * s * (1.0 + v * (1.0 - s));
  });
}

Linear make_linear(Index in, Index out, bool bias, double gain, Rng& rng) {
  Linear l;
  l.weight = (gain / std::sqrt(static_cast<double>(in))) * randn(in, out, rng);
  if (bias) l.bias = MatrixD::Zero(1, out);
  return l;
}

MatrixD linear_backward(const Linear& l, const MatrixD& x, const MatrixD& dy, Linear& g,
                        double scale, bool base_grads) {
  const MatrixD dw = x.transpose() * dy;
  if (base_grads) {
    g.weight += scale * dw;
    if (l.bias.size() > 0) g.bias += scale * dy.colwise().sum();
  }
  if (l.lora) {
    const LoraGrads lg = lora_grads_from_weight_grad(*l.lora, dw);
    g.lora->a += scale * lg.grad_a;
    g.lora->b += scale * lg.grad_b;
  }
  return dy * l.effective_weight().transpose();
}

StreamWeights make_stream(const ModelConfig& cfg, Rng& rng) {
  const Index w = cfg.heads * cfg.head_dim;
  StreamWeights s;
  s.q = make_linear(cfg.d_model, w, false, 1.0, rng);
  s.k = make_linear(cfg.d_model, w, false, 1.0, rng);
  s.v = make_linear(cfg.d_model, w, false, 1.0, rng);
  s.out = make_linear(w, cfg.d_model, true, 0.5, rng);
  s.ff_in = make_linear(cfg.d_model, cfg.ffn_hidden, true, 1.0, rng);
  s.ff_out = make_linear(cfg.ffn_hidden, cfg.d_model, true, 0.5, rng);
  return s;
}

Linear* lora_target(Block& block, const std::string& target) {
  const auto sep = target.find('_');
  if (sep == std::string::npos) return nullptr;
  const std::string proj = target.substr(0, sep);
  const std::string stream = target.substr(sep + 1);
  StreamWeights* s = stream == "txt" ? &block.txt : stream == "vis" ? &block.vis : nullptr;
  if (!s) return nullptr;
  if (proj == "q") return &s->q;
  if (proj == "k") return &s->k;
  if (proj == "v") return &s->v;
  if (proj == "out") return &s->out;
  return nullptr;
}

MatrixD gather_rows(const MatrixD& table, std::span<const int> idx) {
  MatrixD out(static_cast<Index>(idx.size()), table.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= table.rows()) {
      throw DomainError("prompt token " + std::to_string(idx[i]) + " outside the codebook");
    }
    out.row(static_cast<Index>(i)) = table.row(idx[i]);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  data.validate();
  if (blocks < 1 || d_model < 1 || heads < 1 || head_dim < 1 || ffn_hidden < 1) {
    throw DomainError("ModelConfig: sizes must be >= 1");
  }
  if (time_dim < 2 || time_dim % 2 != 0) throw DomainError("ModelConfig: time_dim must be even");
}

MatrixD Linear::effective_weight() const { return lora ? apply_lora(weight, *lora) : weight; }

MatrixD Linear::forward(const MatrixD& x) const {
  if (x.cols() != weight.rows()) {
    throw ShapeError("Linear: input " + shape_str(x) + " vs weight " + shape_str(weight));
  }
  MatrixD y = x * effective_weight();
  if (bias.size() > 0) y.rowwise() += bias.row(0);
  return y;
}

bool ToyModel::has_adapters() const {
  bool any = false;
  visit_params(*this, [&](const std::string&, const MatrixD&, ParamKind kind) {
    any = any || kind == ParamKind::lora;
  });
  return any;
}

ToyModel init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ToyModel m;
  m.config = cfg;
  m.codebook = make_codebook(cfg.data);
  m.txt_in = make_linear(cfg.data.text_dim, cfg.d_model, true, 1.0, rng);
  m.vis_in = make_linear(cfg.data.patch_dim, cfg.d_model, true, 1.0, rng);
  m.time_in = make_linear(cfg.time_dim, cfg.d_model, true, 1.0, rng);
  m.vis_pos = 0.5 * randn(cfg.data.n_vis, cfg.d_model, rng);
  for (Index b = 0; b < cfg.blocks; ++b) m.blocks.push_back({make_stream(cfg, rng), make_stream(cfg, rng)});
  m.vis_out = make_linear(cfg.d_model, cfg.data.patch_dim, true, 0.5, rng);
  return m;
}

ToyModel zeros_like(const ToyModel& model) {
  ToyModel z = model;
  visit_params(z, [](const std::string&, MatrixD& p, ParamKind) { p.setZero(); });
  return z;
}

double base_checksum(const ToyModel& model) {
  double sum = 0.0;
  double weighted = 0.0;
  Index pos = 0;
  visit_params(model, [&](const std::string&, const MatrixD& p, ParamKind kind) {
    if (kind == ParamKind::lora) return;
    for (Index i = 0; i < p.size(); ++i, ++pos) {
      sum += p.data()[i];
      weighted += p.data()[i] * static_cast<double>(pos % 9973 + 1);
    }
  });
  return sum + 1e-3 * weighted;
}

void attach_lora(ToyModel& model, const LoraSpec& spec, Rng& rng) {
  if (spec.targets.empty()) throw DomainError("attach_lora: no target projections");
  for (auto& block : model.blocks) {
    for (const auto& target : spec.targets) {
      Linear* l = lora_target(block, target);
      if (!l) throw DomainError("attach_lora: unknown target '" + target + "'");
      l->lora = init_lora(l->weight.rows(), l->weight.cols(), spec.rank, spec.alpha, rng);
    }
  }
}

void merge_adapters(ToyModel& model) {
  auto fold = [](Linear& l) {
    if (l.lora) {
      l.weight = merge(*l.lora, l.weight);
      l.lora.reset();
    }
  };
  for (auto& block : model.blocks) {
    for (StreamWeights* s : {&block.txt, &block.vis}) {
      for (Linear* l : {&s->q, &s->k, &s->v, &s->out, &s->ff_in, &s->ff_out}) fold(*l);
    }
  }
}

MatrixD predict_velocity(const ToyModel& model, const MatrixD& x_t, std::span<const int> prompt,
                         double t, const ForwardOptions& opts, ForwardCache* cache) {
  const ModelConfig& cfg = model.config;
  const TokenLayout layout = cfg.layout();
  if (static_cast<Index>(prompt.size()) != cfg.data.n_txt) {
    throw ShapeError("prompt has " + std::to_string(prompt.size()) + " tokens, model expects " +
                     std::to_string(cfg.data.n_txt));
  }
  if (x_t.rows() != cfg.data.n_vis || x_t.cols() != cfg.data.patch_dim) {
    throw ShapeError("visual tokens " + shape_str(x_t) + ", model expects " +
                     shape_str(cfg.data.n_vis, cfg.data.patch_dim));
  }

  const MatrixD text_embed = gather_rows(model.codebook, prompt);
  const RowVector<double> t_embed = timestep_embedding(t, cfg.time_dim);
  const RowVector<double> cond = model.time_in.forward(t_embed).row(0);

  MatrixD c = model.txt_in.forward(text_embed);
  c.rowwise() += cond;
  MatrixD x = model.vis_in.forward(x_t) + model.vis_pos;
  x.rowwise() += cond;

  if (cache) {
    cache->prompt.assign(prompt.begin(), prompt.end());
    cache->text_embed = text_embed;
    cache->x_t = x_t;
    cache->t_embed = t_embed;
    cache->blocks.assign(model.blocks.size(), BlockCache{});
    cache->options = opts;
  }

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const Block& blk = model.blocks[b];
    BlockCache local;
    BlockCache& bc = cache ? cache->blocks[b] : local;
    bc.c_in = c;
    bc.x_in = x;
    bc.cn = rms_norm(c, bc.c_rms);
    bc.xn = rms_norm(x, bc.x_rms);

    ProjectionWeights<double> w{blk.txt.q.effective_weight(), blk.txt.k.effective_weight(),
                                blk.txt.v.effective_weight(), blk.vis.q.effective_weight(),
                                blk.vis.k.effective_weight(), blk.vis.v.effective_weight()};
    bc.qkv = project_qkv(bc.cn, bc.xn, w, layout);
    if (cache || opts.strategy == KernelStrategy::reference) {
      bc.attn = attention_reference(bc.qkv.q, bc.qkv.k, bc.qkv.v, opts.gamma, opts.tau, layout,
                                    cache ? &bc.probs : nullptr);
    } else {
      bc.attn = attention_selective(bc.qkv.q, bc.qkv.k, bc.qkv.v, opts.gamma, opts.tau, layout);
    }

    bc.c_mid = c + blk.txt.out.forward(bc.attn.topRows(layout.n_txt));
    bc.x_mid = x + blk.vis.out.forward(bc.attn.bottomRows(layout.n_vis));
    bc.cn2 = rms_norm(bc.c_mid, bc.c_rms2);
    bc.xn2 = rms_norm(bc.x_mid, bc.x_rms2);
    bc.c_hidden = blk.txt.ff_in.forward(bc.cn2);
    bc.x_hidden = blk.vis.ff_in.forward(bc.xn2);
    bc.c_act = silu(bc.c_hidden);
    bc.x_act = silu(bc.x_hidden);
    c = bc.c_mid + blk.txt.ff_out.forward(bc.c_act);
    x = bc.x_mid + blk.vis.ff_out.forward(bc.x_act);
  }

  VectorD out_rms;
  MatrixD out_norm = rms_norm(x, out_rms);
  MatrixD velocity = model.vis_out.forward(out_norm);
  if (cache) {
    cache->x_final = x;
    cache->out_rms = out_rms;
    cache->out_norm = std::move(out_norm);
  }
  return velocity;
}

void backward(const ToyModel& model, const ForwardCache& cache, const MatrixD& d_output,
              ToyModel& grad, double scale, bool base_grads) {
  const TokenLayout layout = model.config.layout();
  if (cache.blocks.size() != model.blocks.size()) throw ShapeError("backward: cache/model mismatch");

  MatrixD dx = rms_norm_backward(
      cache.out_norm, cache.out_rms,
      linear_backward(model.vis_out, cache.out_norm, d_output, grad.vis_out, scale, base_grads));
  MatrixD dc = MatrixD::Zero(layout.n_txt, model.config.d_model);

  for (std::size_t bi = model.blocks.size(); bi-- > 0;) {
    const Block& blk = model.blocks[bi];
    Block& gblk = grad.blocks[bi];
    const BlockCache& bc = cache.blocks[bi];

    // Feed-forward residual branch.
    MatrixD dc_mid = dc;
    MatrixD dx_mid = dx;
    {
      const MatrixD d_c_act = linear_backward(blk.txt.ff_out, bc.c_act, dc, gblk.txt.ff_out, scale, base_grads);
      const MatrixD d_x_act = linear_backward(blk.vis.ff_out, bc.x_act, dx, gblk.vis.ff_out, scale, base_grads);
      const MatrixD d_cn2 = linear_backward(blk.txt.ff_in, bc.cn2, silu_backward(bc.c_hidden, d_c_act),
                                            gblk.txt.ff_in, scale, base_grads);
      const MatrixD d_xn2 = linear_backward(blk.vis.ff_in, bc.xn2, silu_backward(bc.x_hidden, d_x_act),
                                            gblk.vis.ff_in, scale, base_grads);
      dc_mid += rms_norm_backward(bc.cn2, bc.c_rms2, d_cn2);
      dx_mid += rms_norm_backward(bc.xn2, bc.x_rms2, d_xn2);
    }

    // Attention residual branch.
    MatrixD d_attn(layout.seq_len(), layout.width());
    d_attn.topRows(layout.n_txt) = linear_backward(blk.txt.out, bc.attn.topRows(layout.n_txt), dc_mid,
                                                   gblk.txt.out, scale, base_grads);
    d_attn.bottomRows(layout.n_vis) = linear_backward(
        blk.vis.out, bc.attn.bottomRows(layout.n_vis), dx_mid, gblk.vis.out, scale, base_grads);
    const Qkv<double> dqkv =
        attention_reference_backward(bc.qkv.q, bc.qkv.k, bc.qkv.v, bc.probs, d_attn,
                                     cache.options.gamma, cache.options.tau, layout);

    MatrixD d_cn = MatrixD::Zero(layout.n_txt, model.config.d_model);
    MatrixD d_xn = MatrixD::Zero(layout.n_vis, model.config.d_model);
    auto proj = [&](const Linear& wc, Linear& gc, const Linear& wx, Linear& gx, const MatrixD& d) {
      d_cn += linear_backward(wc, bc.cn, d.topRows(layout.n_txt), gc, scale, base_grads);
      d_xn += linear_backward(wx, bc.xn, d.bottomRows(layout.n_vis), gx, scale, base_grads);
    };
    proj(blk.txt.q, gblk.txt.q, blk.vis.q, gblk.vis.q, dqkv.q);
    proj(blk.txt.k, gblk.txt.k, blk.vis.k, gblk.vis.k, dqkv.k);
    proj(blk.txt.v, gblk.txt.v, blk.vis.v, gblk.vis.v, dqkv.v);

    dc = dc_mid + rms_norm_backward(bc.cn, bc.c_rms, d_cn);
    dx = dx_mid + rms_norm_backward(bc.xn, bc.x_rms, d_xn);
  }

  // Inputs: both streams received the same timestep conditioning row.
  if (base_grads) grad.vis_pos += scale * dx;
  const MatrixD d_cond = dc.colwise().sum() + dx.colwise().sum();
  linear_backward(model.time_in, cache.t_embed, d_cond, grad.time_in, scale, base_grads);
  linear_backward(model.txt_in, cache.text_embed, dc, grad.txt_in, scale, base_grads);
  linear_backward(model.vis_in, cache.x_t, dx, grad.vis_in, scale, base_grads);
}

double velocity_loss(const ToyModel& model, const MatrixD& x_t, std::span<const int> prompt,
                     double t, const MatrixD& v_target, const ForwardOptions& opts,
                     ToyModel* grad, double scale, bool base_grads) {
  ForwardCache cache;
  const MatrixD pred = predict_velocity(model, x_t, prompt, t, opts, grad ? &cache : nullptr);
  require_same_shape(pred, v_target, "velocity_loss");
  const MatrixD diff = pred - v_target;
  const double n = static_cast<double>(diff.size());
  const double loss = diff.squaredNorm() / n;
  if (grad) backward(model, cache, (2.0 / n) * diff, *grad, scale, base_grads);
  return loss;
}

}  // namespace taca
