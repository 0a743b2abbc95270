#pragma once

#include <filesystem>

#include <json.hpp>

#include "taca/tensor_math.hpp"

namespace taca {

/// {"rows": r, "cols": c, "data": [row-major values]}. nlohmann/json prints
/// doubles in shortest round-trip form, so the encoding is lossless.
nlohmann::json matrix_to_json(const MatrixD& m);
MatrixD matrix_from_json(const nlohmann::json& j);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace taca
