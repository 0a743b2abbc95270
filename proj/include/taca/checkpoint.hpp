#pragma once

#include <filesystem>

#include <json.hpp>

#include "taca/model.hpp"

namespace taca {

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Versioned JSON checkpoint holding the model configuration and every
/// parameter (base weights, frozen codebook and any attached adapters).
void save_checkpoint(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace taca
