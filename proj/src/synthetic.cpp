#include "taca/synthetic.hpp"

#include <cmath>
#include <string>

namespace taca {

Index DataConfig::grid_side() const {
  const auto side = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(n_vis))));
  return side;
}

void DataConfig::validate() const {
  if (concepts < 2) throw DomainError("DataConfig: need at least 2 concepts");
  if (fillers < 0) throw DomainError("DataConfig: fillers must be >= 0");
  if (n_txt < 1 || patch_dim < 1 || text_dim < 1) throw DomainError("DataConfig: sizes must be >= 1");
  if (grid_side() * grid_side() != n_vis || n_vis < 4) {
    throw DomainError("DataConfig: n_vis must be a perfect square >= 4, got " +
                      std::to_string(n_vis));
  }
  if (!(blob_width > 0.0) || noise_std < 0.0 || amplitude_jitter < 0.0 || amplitude_jitter >= 1.0) {
    throw DomainError("DataConfig: invalid noise/width parameters");
  }
}

ConceptParams concept_params(int concept_id, const DataConfig& cfg) {
  if (concept_id < 0 || concept_id >= cfg.concepts) {
    throw DomainError("concept index " + std::to_string(concept_id) + " out of range");
  }
  Rng rng = Rng(cfg.world_seed).fork(static_cast<std::uint64_t>(concept_id));
  const double hi = static_cast<double>(cfg.grid_side() - 1);
  ConceptParams p;
  for (int c = 0; c < 2; ++c) {
    p.center_row[c] = rng.uniform(0.5, hi - 0.5);
    p.center_col[c] = rng.uniform(0.5, hi - 0.5);
    RowVector<double> color = randn(1, cfg.patch_dim, rng);
    p.color[c] = 2.0 * color / color.norm();
  }
  return p;
}

MatrixD concept_template(int concept_id, const DataConfig& cfg) {
  const ConceptParams p = concept_params(concept_id, cfg);
  const Index side = cfg.grid_side();
  const double inv = 1.0 / (2.0 * cfg.blob_width * cfg.blob_width);
  MatrixD out = MatrixD::Zero(cfg.n_vis, cfg.patch_dim);
  for (Index i = 0; i < cfg.n_vis; ++i) {
    const double r = static_cast<double>(i / side);
    const double c = static_cast<double>(i % side);
    for (int k = 0; k < 2; ++k) {
      const double d2 = (r - p.center_row[k]) * (r - p.center_row[k]) +
                        (c - p.center_col[k]) * (c - p.center_col[k]);
      out.row(i) += std::exp(-d2 * inv) * p.color[k];
    }
  }
  return out;
}

MatrixD make_codebook(const DataConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.world_seed).fork(0xC0DEB00C);
  MatrixD book = randn(cfg.vocab(), cfg.text_dim, rng);
  book.row(cfg.null_token()).setZero();
  return book;
}

std::vector<int> null_prompt(const DataConfig& cfg) {
  return std::vector<int>(static_cast<std::size_t>(cfg.n_txt), cfg.null_token());
}

SyntheticBatch synth_pair(int concept_id, const DataConfig& cfg, Rng& rng) {
  SyntheticBatch b;
  b.concept_id = concept_id;
  b.seed = rng.seed();
  b.prompt.resize(static_cast<std::size_t>(cfg.n_txt));
  const auto slot = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(cfg.n_txt)));
  for (std::size_t i = 0; i < b.prompt.size(); ++i) {
    b.prompt[i] = i == slot || cfg.fillers == 0
                      ? concept_id
                      : cfg.concepts + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.fillers)));
  }
  const double amp = rng.uniform(1.0 - cfg.amplitude_jitter, 1.0 + cfg.amplitude_jitter);
  b.x0 = amp * concept_template(concept_id, cfg);
  if (cfg.noise_std > 0.0) b.x0 += cfg.noise_std * randn(cfg.n_vis, cfg.patch_dim, rng);
  return b;
}

std::vector<SyntheticBatch> synth_dataset(int n_pairs, const DataConfig& cfg, Rng& rng) {
  if (n_pairs < 1) throw DomainError("synth_dataset: n_pairs must be >= 1");
  cfg.validate();
  std::vector<SyntheticBatch> out;
  out.reserve(static_cast<std::size_t>(n_pairs));
  const Rng base(rng.next_u64());
  for (int i = 0; i < n_pairs; ++i) {
    Rng pair_rng = base.fork(static_cast<std::uint64_t>(i));
    const int concept_id = static_cast<int>(pair_rng.below(static_cast<std::uint64_t>(cfg.concepts)));
    out.push_back(synth_pair(concept_id, cfg, pair_rng));
  }
  return out;
}

double correlation(const MatrixD& a, const MatrixD& b) {
  require_same_shape(a, b, "correlation");
  const auto ac = a.array() - a.mean();
  const auto bc = b.array() - b.mean();
  const double denom = std::sqrt((ac * ac).sum() * (bc * bc).sum());
  if (denom == 0.0) return 0.0;
  return (ac * bc).sum() / denom;
}

double alignment_score(const MatrixD& tokens, int concept_id, const DataConfig& cfg) {
  double matched = 0.0;
  double all = 0.0;
  for (int k = 0; k < cfg.concepts; ++k) {
    const double c = correlation(tokens, concept_template(k, cfg));
    all += c;
    if (k == concept_id) matched = c;
  }
  return matched - all / cfg.concepts;
}

}  // namespace taca
