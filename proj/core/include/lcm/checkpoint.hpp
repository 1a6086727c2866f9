#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcm/denoiser.hpp"
#include "lcm/lora.hpp"
#include "lcm/schedule.hpp"

namespace lcm {

inline constexpr int kCheckpointFormatVersion = 1;

/// On-disk layout: <dir>/manifest.json + <dir>/weights.bin. The manifest
/// holds the tensor table {name, shape, dtype, offset, length}, a free-form
/// metadata object and the SHA-256 of weights.bin. Weights are raw
/// little-endian scalars, row-major, in table order.
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
  std::string sha256;  // of weights.bin
};

// Returns the SHA-256 written to the manifest.
std::string save_checkpoint(const std::filesystem::path& dir, std::span<const NamedTensor> tensors,
                            const nlohmann::json& metadata);

// Throws CorruptionError on any size/hash/table inconsistency and
// UnsupportedVersionError for another format version.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseSchedule& schedule);
NoiseSchedule schedule_from_json(const nlohmann::json& j);

struct NetCheckpoint {
  DenoiserNet net;
  NoiseSchedule schedule;
  nlohmann::json metadata;
  std::string sha256;
};

std::string save_net(const std::filesystem::path& dir, const DenoiserNet& net,
                     const NoiseSchedule& schedule,
                     const nlohmann::json& config_echo = nlohmann::json::object());
NetCheckpoint load_net(const std::filesystem::path& dir);

struct AdapterCheckpoint {
  AdapterBundle bundle;
  nlohmann::json metadata;
  std::string sha256;
};

// Tensors are stored as "<layer>.lora_a" / "<layer>.lora_b".
std::string save_adapter(const std::filesystem::path& dir, const AdapterBundle& bundle,
                         const nlohmann::json& config_echo = nlohmann::json::object());
AdapterCheckpoint load_adapter(const std::filesystem::path& dir);

}  // namespace lcm
