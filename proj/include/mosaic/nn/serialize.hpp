#pragma once

#include "mosaic/nn/model_spec.hpp"
#include "mosaic/nn/param_set.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace mosaic::nn {

// Binary container layout (all integers little-endian):
//
//   "MOSAICPS"                 8 bytes magic
//   u32 version                currently 1
//   u32 spec_len, spec bytes   JSON text of the ModelSpec, or 0 bytes
//   u32 entry_count
//   entry_count × {
//     u16 name_len, name bytes
//     u8  role                 Role enumerator value
//     u8  ndim                 always 2
//     u64 rows, u64 cols
//     rows·cols × f64          row-major IEEE-754 binary64
//   }

struct DecodedParams {
  ParamSet params;
  std::optional<ModelSpec> spec;
};

std::vector<std::uint8_t> encode_params(const ParamSet& params, const ModelSpec* spec = nullptr);
DecodedParams decode_params(std::span<const std::uint8_t> bytes);

void save_params(const std::filesystem::path& path, const ParamSet& params, const ModelSpec* spec = nullptr);
DecodedParams load_params(const std::filesystem::path& path);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

/// Debug mirror of the binary container; values are written with full
/// round-trip precision.
nlohmann::json params_to_json(const ParamSet& params, const ModelSpec* spec = nullptr);
DecodedParams params_from_json(const nlohmann::json& j);

}  // namespace mosaic::nn
