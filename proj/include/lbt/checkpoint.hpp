#pragma once

#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "lbt/model.hpp"

namespace lbt {

// On-disk checkpoint layout (all integers little-endian):
//   8 bytes   magic "LBTCKPT\n"
//   1 byte    format version (1)
//   u32       config JSON byte length, then that many JSON bytes
//   u32       tensor count
//   per tensor:
//     u16     name length, then the name bytes
//     u8      rank, then rank i64 dimensions
//     f32[*]  payload (IEEE-754 bits)
//   u64       FNV-1a digest of every preceding byte
// Loading verifies magic, version and digest before touching any content, so
// truncation or corruption is always rejected without a partial model.

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// Hex FNV-1a of the canonical config JSON; stamped into metrics reports.
std::string config_digest(const ModelConfig& cfg);

void save_checkpoint(ParamStore& params, const ModelConfig& cfg, const std::string& path);
std::pair<ParamStore, ModelConfig> load_checkpoint(const std::string& path);

// Throws CheckpointError naming every differing field.
void check_compatible(const ModelConfig& have, const ModelConfig& want);

} // namespace lbt
