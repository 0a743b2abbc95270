#include "taca/lora.hpp"

#include <fstream>

#include <json.hpp>

#include "taca/serialization.hpp"

namespace taca {

MatrixD LoraAdapter::delta() const {
  validate();
  return alpha * matmul(b, a);
}

void LoraAdapter::validate() const {
  if (b.cols() != a.rows()) {
    throw ShapeError("LoraAdapter: B is " + shape_str(b) + " but A is " + shape_str(a));
  }
  if (rank() < 1 || rank() > std::min(d(), k())) {
    throw DomainError("LoraAdapter: rank " + std::to_string(rank()) + " invalid for " +
                      shape_str(d(), k()));
  }
}

LoraAdapter init_lora(Index d, Index k, Index r, double alpha, Rng& rng) {
  if (d < 1 || k < 1) throw DomainError("init_lora: base dims must be positive");
  if (r < 1 || r > std::min(d, k)) {
    throw DomainError("init_lora: rank " + std::to_string(r) + " exceeds min(d, k) = " +
                      std::to_string(std::min(d, k)));
  }
  if (!(alpha > 0.0)) throw DomainError("init_lora: alpha must be > 0");
  LoraAdapter out;
  out.a = 0.02 * randn(r, k, rng);
  out.b = MatrixD::Zero(d, r);
  out.alpha = alpha;
  return out;
}

MatrixD apply_lora(const MatrixD& w, const LoraAdapter& adapter) {
  if (w.rows() != adapter.d() || w.cols() != adapter.k()) {
    throw ShapeError("apply_lora: weight " + shape_str(w) + " vs adapter " +
                     shape_str(adapter.d(), adapter.k()));
  }
  return w + adapter.delta();
}

MatrixD merge(const LoraAdapter& adapter, const MatrixD& w) { return apply_lora(w, adapter); }

MatrixD unmerge(const LoraAdapter& adapter, const MatrixD& merged) {
  if (merged.rows() != adapter.d() || merged.cols() != adapter.k()) {
    throw ShapeError("unmerge: weight " + shape_str(merged) + " vs adapter " +
                     shape_str(adapter.d(), adapter.k()));
  }
  return merged - adapter.delta();
}

LoraGrads lora_grads_from_weight_grad(const LoraAdapter& adapter, const MatrixD& grad_w) {
  adapter.validate();
  if (grad_w.rows() != adapter.d() || grad_w.cols() != adapter.k()) {
    throw ShapeError("lora grads: dW " + shape_str(grad_w) + " vs adapter " +
                     shape_str(adapter.d(), adapter.k()));
  }
  LoraGrads g;
  g.grad_a = adapter.alpha * (adapter.b.transpose() * grad_w);
  g.grad_b = adapter.alpha * (grad_w * adapter.a.transpose());
  return g;
}

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path) {
  adapter.validate();
  nlohmann::json j;
  j["format"] = "taca-lora";
  j["version"] = 1;
  j["d"] = adapter.d();
  j["k"] = adapter.k();
  j["r"] = adapter.rank();
  j["alpha"] = adapter.alpha;
  j["A"] = matrix_to_json(adapter.a);
  j["B"] = matrix_to_json(adapter.b);
  write_json(j, path);
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  if (j.value("format", "") != "taca-lora" || j.value("version", 0) != 1) {
    throw IoError("'" + path.string() + "' is not a version-1 LoRA adapter file");
  }
  LoraAdapter out;
  out.alpha = j.at("alpha").get<double>();
  out.a = matrix_from_json(j.at("A"));
  out.b = matrix_from_json(j.at("B"));
  if (out.d() != j.at("d").get<Index>() || out.k() != j.at("k").get<Index>() ||
      out.rank() != j.at("r").get<Index>()) {
    throw ShapeError("'" + path.string() + "': stored dims disagree with matrices");
  }
  out.validate();
  return out;
}

}  // namespace taca
