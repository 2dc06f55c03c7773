#pragma once

#include "cignn/dataset_store.hpp"
#include "cignn/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace cignn {

nlohmann::json model_config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  std::int64_t step = 0;
  std::map<std::string, double> metrics;
  Normalization normalization;
  nlohmann::json run = nlohmann::json::object();  // graph and training options
};

// Checkpoint file: magic "CIGNCKPT", u32 header length, JSON header (config,
// step, metrics, normalization, run, tensor table), then one little-endian
// float32 block per tensor in table order, then u32 CRC32 of all prior bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cignn
