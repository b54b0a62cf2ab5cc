#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/diffcore/param_set.hpp"
#include "tdce/models/network.hpp"

namespace tdce::pipeline {

inline constexpr int kCheckpointSchemaVersion = 1;

// MMC1 container:
//   "MMC1"
//   u64 metadata length, metadata JSON (UTF-8)
//   u64 parameter count
//   per parameter: u32 name length, name, u32 rank, rank x u64 dims,
//                  u8 trainable, element_count x f64
// All integers and doubles little-endian.
struct ModelCheckpoint {
  nlohmann::json metadata = nlohmann::json::object();
  diff::ParamSet params;

  models::ModelConfig model_config() const;  // metadata["model"]
};

std::vector<unsigned char> serialize(const ModelCheckpoint& c);
ModelCheckpoint deserialize(const std::vector<unsigned char>& bytes);

void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tdce::pipeline
