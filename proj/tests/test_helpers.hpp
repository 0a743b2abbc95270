#pragma once

#include "taca/model.hpp"

namespace taca::testing {

// Small enough for entry-by-entry finite differences.
inline ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.head_dim = 4;
  cfg.ffn_hidden = 8;
  cfg.time_dim = 4;
  cfg.data.concepts = 2;
  cfg.data.fillers = 2;
  cfg.data.n_txt = 2;
  cfg.data.n_vis = 4;
  cfg.data.patch_dim = 2;
  cfg.data.text_dim = 4;
  return cfg;
}

inline std::vector<MatrixD*> param_ptrs(ToyModel& m) {
  std::vector<MatrixD*> out;
  visit_params(m, [&](const std::string&, MatrixD& p, ParamKind) { out.push_back(&p); });
  return out;
}

inline std::vector<std::string> param_names(const ToyModel& m) {
  std::vector<std::string> out;
  visit_params(m, [&](const std::string& name, const MatrixD&, ParamKind) { out.push_back(name); });
  return out;
}

}  // namespace taca::testing
