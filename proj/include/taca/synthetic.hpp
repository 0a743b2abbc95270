#pragma once

// Synthetic text/visual pairs. Each concept fixes a two-component Gaussian
// layout on the visual token grid; the prompt carries the concept token among
// uninformative filler tokens, so the layout is predictable from the text.

#include <array>
#include <cstdint>
#include <vector>

#include "taca/tensor_math.hpp"

namespace taca {

struct DataConfig {
  int concepts = 8;
  int fillers = 8;
  Index n_txt = 8;
  Index n_vis = 64;  ///< must be a perfect square (token grid)
  Index patch_dim = 4;
  Index text_dim = 32;
  double blob_width = 1.0;
  double noise_std = 0.05;
  double amplitude_jitter = 0.1;
  std::uint64_t world_seed = 0x7ACA;

  int vocab() const { return concepts + fillers + 1; }
  int null_token() const { return concepts + fillers; }
  Index grid_side() const;
  void validate() const;
};

struct ConceptParams {
  std::array<double, 2> center_row{};
  std::array<double, 2> center_col{};
  std::array<RowVector<double>, 2> color;
};

struct SyntheticBatch {
  std::vector<int> prompt;  ///< n_txt codebook indices
  int concept_id = 0;
  MatrixD x0;               ///< n_vis x patch_dim clean visual tokens
  std::uint64_t seed = 0;
};

ConceptParams concept_params(int concept_id, const DataConfig& cfg);
/// Noise-free mean layout of a concept (n_vis x patch_dim).
MatrixD concept_template(int concept_id, const DataConfig& cfg);
/// Frozen text embeddings, vocab x text_dim; the null token row is zero.
MatrixD make_codebook(const DataConfig& cfg);
std::vector<int> null_prompt(const DataConfig& cfg);

SyntheticBatch synth_pair(int concept_id, const DataConfig& cfg, Rng& rng);
std::vector<SyntheticBatch> synth_dataset(int n_pairs, const DataConfig& cfg, Rng& rng);

/// Pearson correlation of two equally sized matrices (0 if either is constant).
double correlation(const MatrixD& a, const MatrixD& b);

/// Contrastive alignment: correlation with the prompt concept's template minus
/// the mean correlation over all concept templates. Zero in expectation when
/// the output carries no information about the concept.
double alignment_score(const MatrixD& tokens, int concept_id, const DataConfig& cfg);

}  // namespace taca
