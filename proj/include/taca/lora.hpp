#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>

#include "taca/tensor_math.hpp"

namespace taca {

/// Low-rank update alpha * B * A for a frozen d x k weight. Alpha is applied
/// as a plain multiplier, without alpha / r rescaling.
struct LoraAdapter {
  MatrixD a;  ///< r x k
  MatrixD b;  ///< d x r
  double alpha = 1.0;

  Index rank() const { return a.rows(); }
  Index d() const { return b.rows(); }
  Index k() const { return a.cols(); }
  Index trainable_count() const { return a.size() + b.size(); }

  /// alpha * B * A
  MatrixD delta() const;
  void validate() const;
};

struct LoraGrads {
  MatrixD grad_a;
  MatrixD grad_b;
};

/// B = 0 and A ~ N(0, 0.02^2), so the initial update is exactly zero.
LoraAdapter init_lora(Index d, Index k, Index r, double alpha, Rng& rng);

/// W + alpha * B * A; `w` is not modified.
MatrixD apply_lora(const MatrixD& w, const LoraAdapter& adapter);

MatrixD merge(const LoraAdapter& adapter, const MatrixD& w);
MatrixD unmerge(const LoraAdapter& adapter, const MatrixD& merged);

/// Chain rule from dL/dW' to (dL/dA, dL/dB). No gradient for W is formed.
LoraGrads lora_grads_from_weight_grad(const LoraAdapter& adapter, const MatrixD& grad_w);

/// Gradients of `loss_fn` with respect to the adapter factors only.
/// `loss_fn(w_eff)` returns {loss, dL/dw_eff}; any inputs it needs are captured.
template <typename LossFn>
LoraGrads lora_grads(LossFn&& loss_fn, const MatrixD& w, const LoraAdapter& adapter) {
  const MatrixD w_eff = apply_lora(w, adapter);
  const std::pair<double, MatrixD> lg = loss_fn(static_cast<const MatrixD&>(w_eff));
  if (!std::isfinite(lg.first)) throw NumericError("lora_grads: non-finite loss");
  require_same_shape(lg.second, w, "lora_grads: dL/dW'");
  return lora_grads_from_weight_grad(adapter, lg.second);
}

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path);
LoraAdapter load_adapter(const std::filesystem::path& path);

}  // namespace taca
