#pragma once

// Diagnostics for cross-modal attention: how much probability mass visual
// queries place on text keys, and how TACA redistributes it.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "taca/attention.hpp"

namespace taca {

struct SuppressionReport {
  TokenLayout layout;
  double gamma = 1.0;
  MatrixD unified_mass;  ///< heads x n_vis, text mass under the joint softmax
  MatrixD typical_mass;  ///< heads x n_vis, text mass of a text-only softmax
  VectorD head_ratio;    ///< mean unified / mean typical, per head
  double mean_ratio = 0.0;
};

struct AttentionMapDiff {
  double gamma = 1.0;
  std::vector<MatrixD> baseline;  ///< per-head probabilities at gamma = 1
  std::vector<MatrixD> taca;      ///< per-head probabilities at gamma
  std::vector<MatrixD> vt_diff;   ///< per-head (taca - baseline) on the vt block
  VectorD mean_diff, max_diff;    ///< per head, over the vt block
  MatrixD bucket_mean, bucket_max;  ///< heads x buckets over visual queries
  double max_row_sum_error = 0.0;   ///< max |row sum| of the full difference
  double output_max_delta = 0.0;    ///< max |O_taca - O_baseline|
};

/// Per-visual-query text mass from one head's logits:
/// sum_j e^{g s_vt/tau} / (sum_j e^{g s_vt/tau} + sum_k e^{s_vv/tau}).
template <typename Scalar>
VectorD vis_txt_mass_from_logits(const BlockLogits<Scalar>& logits, double gamma, double tau) {
  const Index nv = logits.vt.rows();
  VectorD mass(nv);
  for (Index i = 0; i < nv; ++i) {
    const auto vt = logits.vt.row(i).template cast<double>().array() * (gamma / tau);
    const auto vv = logits.vv.row(i).template cast<double>().array() / tau;
    const double peak = std::max(vt.maxCoeff(), vv.maxCoeff());
    const double text = (vt - peak).exp().sum();
    const double visual = (vv - peak).exp().sum();
    mass(i) = text / (text + visual);
  }
  return mass;
}

/// Text mass when the softmax runs over text keys only; 1 up to rounding.
template <typename Scalar>
VectorD typical_mass_from_logits(const BlockLogits<Scalar>& logits, double tau) {
  Matrix<double> vt = logits.vt.template cast<double>() / tau;
  softmax_rows_inplace(vt);
  return vt.rowwise().sum();
}

/// heads x n_vis matrix of visual-query text mass with the vt block scaled by gamma.
template <typename Scalar>
MatrixD vis_txt_mass(const Matrix<Scalar>& q, const Matrix<Scalar>& k, double gamma, double tau,
                     const TokenLayout& layout) {
  MatrixD mass(layout.heads, layout.n_vis);
  for (Index h = 0; h < layout.heads; ++h) {
    mass.row(h) = vis_txt_mass_from_logits(block_logits(q, k, layout, h), gamma, tau).transpose();
  }
  return mass;
}

/// Builds a report from per-head logits (one BlockLogits per head).
template <typename Scalar>
SuppressionReport suppression_from_logits(const std::vector<BlockLogits<Scalar>>& heads,
                                          const TokenLayout& layout, double gamma = 1.0,
                                          double tau = 1.0) {
  if (heads.size() != static_cast<std::size_t>(layout.heads)) {
    throw ShapeError("suppression: expected one logit set per head");
  }
  SuppressionReport r;
  r.layout = layout;
  r.gamma = gamma;
  r.unified_mass.resize(layout.heads, layout.n_vis);
  r.typical_mass.resize(layout.heads, layout.n_vis);
  r.head_ratio.resize(layout.heads);
  for (Index h = 0; h < layout.heads; ++h) {
    const auto& lg = heads[static_cast<std::size_t>(h)];
    if (lg.vt.rows() != layout.n_vis || lg.vt.cols() != layout.n_txt) {
      throw ShapeError("suppression: vt block " + shape_str(lg.vt) + " does not match layout");
    }
    r.unified_mass.row(h) = vis_txt_mass_from_logits(lg, gamma, tau).transpose();
    r.typical_mass.row(h) = typical_mass_from_logits(lg, tau).transpose();
    r.head_ratio(h) = r.unified_mass.row(h).mean() / r.typical_mass.row(h).mean();
  }
  r.mean_ratio = r.head_ratio.mean();
  return r;
}

template <typename Scalar>
SuppressionReport suppression_ratio(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                    const TokenLayout& layout, double gamma = 1.0,
                                    double tau = 1.0) {
  std::vector<BlockLogits<Scalar>> heads;
  for (Index h = 0; h < layout.heads; ++h) heads.push_back(block_logits(q, k, layout, h));
  return suppression_from_logits(heads, layout, gamma, tau);
}

template <typename Scalar>
AttentionMapDiff attention_map_diff(const Matrix<Scalar>& q, const Matrix<Scalar>& k,
                                    const Matrix<Scalar>& v, double gamma, double tau,
                                    const TokenLayout& layout, Index buckets = 16) {
  std::vector<Matrix<Scalar>> base_p, taca_p;
  const Matrix<Scalar> base_out = attention_reference(q, k, v, 1.0, tau, layout, &base_p);
  const Matrix<Scalar> taca_out = attention_reference(q, k, v, gamma, tau, layout, &taca_p);

  AttentionMapDiff d;
  d.gamma = gamma;
  buckets = std::clamp<Index>(buckets, 1, layout.n_vis);
  d.mean_diff.resize(layout.heads);
  d.max_diff.resize(layout.heads);
  d.bucket_mean.resize(layout.heads, buckets);
  d.bucket_max.resize(layout.heads, buckets);
  for (Index h = 0; h < layout.heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    d.baseline.push_back(base_p[hs].template cast<double>());
    d.taca.push_back(taca_p[hs].template cast<double>());
    const MatrixD full = d.taca.back() - d.baseline.back();
    d.max_row_sum_error =
        std::max(d.max_row_sum_error, full.rowwise().sum().cwiseAbs().maxCoeff());
    d.vt_diff.push_back(full.bottomLeftCorner(layout.n_vis, layout.n_txt));
    const MatrixD& vt = d.vt_diff.back();
    d.mean_diff(h) = vt.mean();
    d.max_diff(h) = vt.maxCoeff();
    for (Index b = 0; b < buckets; ++b) {
      const Index lo = b * layout.n_vis / buckets;
      const Index hi = (b + 1) * layout.n_vis / buckets;
      const auto rows = vt.middleRows(lo, hi - lo);
      d.bucket_mean(h, b) = rows.mean();
      d.bucket_max(h, b) = rows.maxCoeff();
    }
  }
  d.output_max_delta = (taca_out - base_out).template cast<double>().cwiseAbs().maxCoeff();
  return d;
}

/// One line of suppression.csv. `head` is the head index or "all".
struct SuppressionRow {
  std::string head;
  double gamma = 1.0;
  Index n_txt = 0;
  Index n_vis = 0;
  double mean_mass = 0.0;
  double ratio = 0.0;
};

/// Per-head rows followed by an "all" row averaged over heads.
std::vector<SuppressionRow> suppression_rows(const SuppressionReport& report);

/// Writes suppression.csv (head,gamma,n_txt,n_vis,mean_mass,ratio).
void export_stats(const std::vector<SuppressionRow>& rows, const std::filesystem::path& path);
/// Writes attn_diff.csv (head,query_bucket,mean_diff,max_diff).
void export_stats(const AttentionMapDiff& diff, const std::filesystem::path& path);

std::vector<SuppressionRow> read_suppression_csv(const std::filesystem::path& path);

}  // namespace taca
