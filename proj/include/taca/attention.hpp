#pragma once

// Joint text+visual attention with temperature-adjusted cross-modal logits.
//
// Token sequences are text-first: rows [0, n_txt) are text tokens and rows
// [n_txt, n_txt + n_vis) are visual tokens. Q, K and V are packed as
// (n_txt + n_vis) x (heads * head_dim) matrices; head h occupies columns
// [h * head_dim, (h + 1) * head_dim).

#include <cmath>
#include <string>
#include <thread>
#include <vector>

#include "taca/tensor_math.hpp"

namespace taca {

struct TokenLayout {
  Index n_txt = 8;
  Index n_vis = 64;
  Index heads = 4;
  Index head_dim = 16;

  Index seq_len() const { return n_txt + n_vis; }
  Index width() const { return heads * head_dim; }

  void validate() const {
    if (n_txt < 1 || n_vis < 1 || heads < 1 || head_dim < 1) {
      throw DomainError("TokenLayout: all sizes must be >= 1 (n_txt=" + std::to_string(n_txt) +
                        ", n_vis=" + std::to_string(n_vis) + ", heads=" +
                        std::to_string(heads) + ", head_dim=" + std::to_string(head_dim) + ")");
    }
  }

  bool operator==(const TokenLayout&) const = default;
};

enum class KernelStrategy { reference, selective };

inline std::string to_string(KernelStrategy s) {
  return s == KernelStrategy::reference ? "reference" : "selective";
}

inline KernelStrategy parse_strategy(const std::string& name) {
  if (name == "reference") return KernelStrategy::reference;
  if (name == "selective") return KernelStrategy::selective;
  throw DomainError("unknown kernel strategy '" + name + "'");
}

struct TacaConfig {
  double gamma0 = 1.2;
  double t_thresh = 970.0;
  double tau = 1.0;
  KernelStrategy strategy = KernelStrategy::reference;

  void validate() const {
    if (!(gamma0 > 0.0) || !std::isfinite(gamma0)) throw DomainError("gamma0 must be > 0");
    if (!(t_thresh > 0.0 && t_thresh < 1000.0)) throw DomainError("t_thresh must lie in (0, 1000)");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("tau must be > 0");
  }
};

/// Piecewise-constant temperature: gamma0 for t >= t_thresh, 1 below.
inline double gamma_schedule(double t, const TacaConfig& cfg) {
  if (!(t >= 0.0 && t <= 1000.0)) {
    throw DomainError("gamma_schedule: timestep " + std::to_string(t) + " outside [0, 1000]");
  }
  return t >= cfg.t_thresh ? cfg.gamma0 : 1.0;
}

enum class HeadExecution { sequential, parallel };

/// Modality-specific projections, each (d_model x heads * head_dim).
template <typename Scalar>
struct ProjectionWeights {
  Matrix<Scalar> wq_c, wk_c, wv_c;
  Matrix<Scalar> wq_x, wk_x, wv_x;
};

template <typename Scalar>
struct Qkv {
  Matrix<Scalar> q, k, v;
};

/// Four-block split of one head's QK^T / sqrt(D), indexed (query, key).
template <typename Scalar>
struct BlockLogits {
  Matrix<Scalar> tt, tv, vt, vv;

  Index n_txt() const { return tt.rows(); }
  Index n_vis() const { return vv.rows(); }

  Matrix<Scalar> assemble() const {
    Matrix<Scalar> full(n_txt() + n_vis(), n_txt() + n_vis());
    full << tt, tv, vt, vv;
    return full;
  }
};

namespace detail {

template <typename Scalar>
void check_qk(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const TokenLayout& layout) {
  layout.validate();
  if (q.rows() != layout.seq_len() || q.cols() != layout.width()) {
    throw ShapeError("Q is " + shape_str(q) + ", layout expects " +
                     shape_str(layout.seq_len(), layout.width()));
  }
  require_same_shape(q, k, "Q/K");
}

template <typename Scalar>
void check_qkv(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
               const TokenLayout& layout) {
  check_qk(q, k, layout);
  require_same_shape(q, v, "Q/V");
}

template <typename Fn>
void for_each_head(Index heads, HeadExecution exec, Fn&& fn) {
  if (exec == HeadExecution::sequential || heads == 1) {
    for (Index h = 0; h < heads; ++h) fn(h);
    return;
  }
  // Heads write disjoint column blocks, so the result does not depend on scheduling.
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) workers.emplace_back([&fn, h] { fn(h); });
  for (auto& w : workers) w.join();
}

template <typename Scalar>
Scalar logit_scale(const TokenLayout& layout, double tau) {
  return static_cast<Scalar>(1.0 / (std::sqrt(static_cast<double>(layout.head_dim)) * tau));
}

}  // namespace detail

template <typename Scalar>
Qkv<Scalar> project_qkv(const Matrix<Scalar>& text, const Matrix<Scalar>& visual,
                        const ProjectionWeights<Scalar>& w, const TokenLayout& layout) {
  layout.validate();
  if (text.rows() != layout.n_txt || visual.rows() != layout.n_vis) {
    throw ShapeError("project_qkv: token counts " + std::to_string(text.rows()) + "/" +
                     std::to_string(visual.rows()) + " do not match layout " +
                     std::to_string(layout.n_txt) + "/" + std::to_string(layout.n_vis));
  }
  auto stack = [&](const Matrix<Scalar>& wc, const Matrix<Scalar>& wx) {
    if (wc.cols() != layout.width() || wx.cols() != layout.width()) {
      throw ShapeError("project_qkv: projection width must be heads*head_dim = " +
                       std::to_string(layout.width()));
    }
    Matrix<Scalar> out(layout.seq_len(), layout.width());
    out.topRows(layout.n_txt) = matmul(text, wc);
    out.bottomRows(layout.n_vis) = matmul(visual, wx);
    return out;
  };
  return {stack(w.wq_c, w.wq_x), stack(w.wk_c, w.wk_x), stack(w.wv_c, w.wv_x)};
}

template <typename Scalar>
BlockLogits<Scalar> block_logits(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                 const TokenLayout& layout, Index head) {
  detail::check_qk(q, k, layout);
  if (head < 0 || head >= layout.heads) throw ShapeError("block_logits: head out of range");
  const Index d = layout.head_dim;
  const Index nt = layout.n_txt;
  const Index nv = layout.n_vis;
  const Scalar scale = detail::logit_scale<Scalar>(layout, 1.0);
  const auto qt = q.block(0, head * d, nt, d);
  const auto qv = q.block(nt, head * d, nv, d);
  const auto kt = k.block(0, head * d, nt, d);
  const auto kv = k.block(nt, head * d, nv, d);
  BlockLogits<Scalar> out;
  out.tt = scale * (qt * kt.transpose());
  out.tv = scale * (qt * kv.transpose());
  out.vt = scale * (qv * kt.transpose());
  out.vv = scale * (qv * kv.transpose());
  return out;
}

/// Multiplies the visual-query/text-key block by gamma; other blocks pass through.
template <typename Scalar>
BlockLogits<Scalar> taca_scale(BlockLogits<Scalar> logits, Scalar gamma) {
  logits.vt *= gamma;
  return logits;
}

/// Full logit matrix of one head after TACA scaling and division by tau.
template <typename Scalar>
Matrix<Scalar> taca_logits(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                           const TokenLayout& layout, Index head, double gamma, double tau) {
  const Index d = layout.head_dim;
  Matrix<Scalar> s(layout.seq_len(), layout.seq_len());
  s.noalias() = q.middleCols(head * d, d) * k.middleCols(head * d, d).transpose();
  s *= detail::logit_scale<Scalar>(layout, tau);
  s.bottomLeftCorner(layout.n_vis, layout.n_txt) *= static_cast<Scalar>(gamma);
  return s;
}

template <typename Scalar>
Matrix<Scalar> attention_probs(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                               const TokenLayout& layout, Index head, double gamma,
                               double tau) {
  detail::check_qk(q, k, layout);
  Matrix<Scalar> p = taca_logits(q, k, layout, head, gamma, tau);
  softmax_rows_inplace(p);
  return p;
}

/// Plain softmax(QK^T / (sqrt(D) tau)) V per head.
template <typename Scalar>
Matrix<Scalar> attention_baseline(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                  const Matrix<Scalar>& v, double tau, const TokenLayout& layout,
                                  HeadExecution exec = HeadExecution::sequential) {
  detail::check_qkv(q, k, v, layout);
  const Index d = layout.head_dim;
  const Scalar scale = detail::logit_scale<Scalar>(layout, tau);
  Matrix<Scalar> out(layout.seq_len(), layout.width());
  detail::for_each_head(layout.heads, exec, [&](Index h) {
    Matrix<Scalar> s(layout.seq_len(), layout.seq_len());
    s.noalias() = q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose();
    s *= scale;
    softmax_rows_inplace(s);
    out.middleCols(h * d, d).noalias() = s * v.middleCols(h * d, d);
  });
  return out;
}

/// Score-modification kernel: builds the full logit matrix, scales the vt
/// block by gamma, then applies one softmax per query row. When `probs` is
/// non-null it receives the per-head probability matrices.
template <typename Scalar>
Matrix<Scalar> attention_reference(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                   const Matrix<Scalar>& v, double gamma, double tau,
                                   const TokenLayout& layout,
                                   std::vector<Matrix<Scalar>>* probs = nullptr,
                                   HeadExecution exec = HeadExecution::sequential) {
  detail::check_qkv(q, k, v, layout);
  if (!(tau > 0.0)) throw DomainError("attention: tau must be > 0");
  const Index d = layout.head_dim;
  Matrix<Scalar> out(layout.seq_len(), layout.width());
  if (probs) probs->assign(static_cast<std::size_t>(layout.heads), Matrix<Scalar>());
  detail::for_each_head(layout.heads, exec, [&](Index h) {
    Matrix<Scalar> p = taca_logits(q, k, layout, h, gamma, tau);
    softmax_rows_inplace(p);
    out.middleCols(h * d, d).noalias() = p * v.middleCols(h * d, d);
    if (probs) (*probs)[static_cast<std::size_t>(h)] = std::move(p);
  });
  return out;
}

/// Two-pass recomposition: attend once with text keys scaled by gamma and
/// once unscaled, then take text-query rows from the unscaled pass. Both
/// passes always run.
template <typename Scalar>
Matrix<Scalar> attention_selective(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                   const Matrix<Scalar>& v, double gamma, double tau,
                                   const TokenLayout& layout,
                                   HeadExecution exec = HeadExecution::sequential) {
  detail::check_qkv(q, k, v, layout);
  if (!(tau > 0.0)) throw DomainError("attention: tau must be > 0");
  Matrix<Scalar> key_scaled = k;
  key_scaled.topRows(layout.n_txt) *= static_cast<Scalar>(gamma);
  Matrix<Scalar> out = attention_baseline(q, key_scaled, v, tau, layout, exec);
  const Matrix<Scalar> orig = attention_baseline(q, k, v, tau, layout, exec);
  out.topRows(layout.n_txt) = orig.topRows(layout.n_txt);
  return out;
}

template <typename Scalar>
Matrix<Scalar> attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                         const Matrix<Scalar>& v, double gamma, const TacaConfig& cfg,
                         const TokenLayout& layout,
                         HeadExecution exec = HeadExecution::sequential) {
  if (cfg.strategy == KernelStrategy::selective) {
    return attention_selective(q, k, v, gamma, cfg.tau, layout, exec);
  }
  return attention_reference<Scalar>(q, k, v, gamma, cfg.tau, layout, nullptr, exec);
}

/// Vector-Jacobian product of attention_reference given its saved probabilities.
template <typename Scalar>
Qkv<Scalar> attention_reference_backward(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                         const Matrix<Scalar>& v,
                                         const std::vector<Matrix<Scalar>>& probs,
                                         const Matrix<Scalar>& d_out, double gamma, double tau,
                                         const TokenLayout& layout) {
  detail::check_qkv(q, k, v, layout);
  require_same_shape(q, d_out, "attention backward dO");
  if (probs.size() != static_cast<std::size_t>(layout.heads)) {
    throw ShapeError("attention backward: expected one probability matrix per head");
  }
  const Index d = layout.head_dim;
  const Scalar scale = detail::logit_scale<Scalar>(layout, tau);
  Qkv<Scalar> grad{Matrix<Scalar>(q.rows(), q.cols()), Matrix<Scalar>(k.rows(), k.cols()),
                   Matrix<Scalar>(v.rows(), v.cols())};
  for (Index h = 0; h < layout.heads; ++h) {
    const Matrix<Scalar>& p = probs[static_cast<std::size_t>(h)];
    const auto d_out_h = d_out.middleCols(h * d, d);
    grad.v.middleCols(h * d, d).noalias() = p.transpose() * d_out_h;
    Matrix<Scalar> dp = d_out_h * v.middleCols(h * d, d).transpose();
    const Vector<Scalar> row_dot = p.cwiseProduct(dp).rowwise().sum();
    Matrix<Scalar> ds = p.cwiseProduct(dp.colwise() - row_dot);
    ds.bottomLeftCorner(layout.n_vis, layout.n_txt) *= static_cast<Scalar>(gamma);
    ds *= scale;
    grad.q.middleCols(h * d, d).noalias() = ds * k.middleCols(h * d, d);
    grad.k.middleCols(h * d, d).noalias() = ds.transpose() * q.middleCols(h * d, d);
  }
  return grad;
}

}  // namespace taca
