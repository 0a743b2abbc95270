#include "taca/checkpoint.hpp"

#include "taca/serialization.hpp"

namespace taca {
namespace {

constexpr const char* kFormat = "taca-checkpoint";
constexpr int kVersion = 1;

template <typename Model>
auto linears_with_adapters(Model& m) {
  std::vector<decltype(&m.vis_in)> out;
  for (auto& block : m.blocks) {
    for (auto* s : {&block.txt, &block.vis}) {
      for (auto* l : {&s->q, &s->k, &s->v, &s->out}) out.push_back(l);
    }
  }
  return out;
}

std::string linear_name(std::size_t index) {
  const std::size_t block = index / 8;
  const std::size_t within = index % 8;
  static const char* names[] = {"txt.q", "txt.k", "txt.v", "txt.out",
                                "vis.q", "vis.k", "vis.v", "vis.out"};
  return "blocks." + std::to_string(block) + "." + names[within];
}

}  // namespace

nlohmann::json to_json(const ModelConfig& cfg) {
  const DataConfig& d = cfg.data;
  return {{"blocks", cfg.blocks},
          {"d_model", cfg.d_model},
          {"heads", cfg.heads},
          {"head_dim", cfg.head_dim},
          {"ffn_hidden", cfg.ffn_hidden},
          {"time_dim", cfg.time_dim},
          {"data",
           {{"concepts", d.concepts},
            {"fillers", d.fillers},
            {"n_txt", d.n_txt},
            {"n_vis", d.n_vis},
            {"patch_dim", d.patch_dim},
            {"text_dim", d.text_dim},
            {"blob_width", d.blob_width},
            {"noise_std", d.noise_std},
            {"amplitude_jitter", d.amplitude_jitter},
            {"world_seed", d.world_seed}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.blocks = j.at("blocks").get<Index>();
  cfg.d_model = j.at("d_model").get<Index>();
  cfg.heads = j.at("heads").get<Index>();
  cfg.head_dim = j.at("head_dim").get<Index>();
  cfg.ffn_hidden = j.at("ffn_hidden").get<Index>();
  cfg.time_dim = j.at("time_dim").get<Index>();
  const auto& d = j.at("data");
  cfg.data.concepts = d.at("concepts").get<int>();
  cfg.data.fillers = d.at("fillers").get<int>();
  cfg.data.n_txt = d.at("n_txt").get<Index>();
  cfg.data.n_vis = d.at("n_vis").get<Index>();
  cfg.data.patch_dim = d.at("patch_dim").get<Index>();
  cfg.data.text_dim = d.at("text_dim").get<Index>();
  cfg.data.blob_width = d.at("blob_width").get<double>();
  cfg.data.noise_std = d.at("noise_std").get<double>();
  cfg.data.amplitude_jitter = d.at("amplitude_jitter").get<double>();
  cfg.data.world_seed = d.at("world_seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config"] = to_json(model.config);
  nlohmann::json adapters = nlohmann::json::object();
  auto linears = linears_with_adapters(model);
  for (std::size_t i = 0; i < linears.size(); ++i) {
    if (linears[i]->lora) {
      adapters[linear_name(i)] = {{"rank", linears[i]->lora->rank()},
                                  {"alpha", linears[i]->lora->alpha}};
    }
  }
  j["adapters"] = adapters;
  nlohmann::json params = nlohmann::json::object();
  visit_params(model, [&](const std::string& name, const MatrixD& p, ParamKind) {
    params[name] = matrix_to_json(p);
  });
  j["params"] = params;
  write_json(j, path);
}

ToyModel load_checkpoint(const std::filesystem::path& path) {
  const nlohmann::json j = read_json(path);
  if (j.value("format", "") != kFormat || j.value("version", 0) != kVersion) {
    throw IoError("'" + path.string() + "' is not a version-1 TACA checkpoint");
  }
  try {
    Rng scratch(0);
    ToyModel m = init_model(model_config_from_json(j.at("config")), scratch);
    auto linears = linears_with_adapters(m);
    const auto& adapters = j.at("adapters");
    for (std::size_t i = 0; i < linears.size(); ++i) {
      const auto it = adapters.find(linear_name(i));
      if (it == adapters.end()) continue;
      const Index rank = it->at("rank").get<Index>();
      LoraAdapter a;
      a.alpha = it->at("alpha").get<double>();
      a.a = MatrixD::Zero(rank, linears[i]->weight.cols());
      a.b = MatrixD::Zero(linears[i]->weight.rows(), rank);
      linears[i]->lora = a;
    }
    const auto& params = j.at("params");
    visit_params(m, [&](const std::string& name, MatrixD& p, ParamKind) {
      MatrixD loaded = matrix_from_json(params.at(name));
      require_same_shape(loaded, p, name.c_str());
      p = std::move(loaded);
    });
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "': malformed checkpoint: " + e.what());
  }
}

}  // namespace taca
