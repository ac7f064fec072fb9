#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvnn/model.hpp"
#include "mvnn/train.hpp"

namespace mvnn {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Config <-> JSON text. Missing keys keep their defaults; unknown keys and
/// wrongly typed values are ConfigErrors.
std::string model_config_json(const ModelConfig& c);
ModelConfig parse_model_config(const std::string& json);
std::string train_config_json(const TrainConfig& c);
TrainConfig parse_train_config(const std::string& json);

/// "MVNN", u16 version, u32 header length, JSON header (configs, pixel
/// statistics, seed, variant, tensor names/shapes/offsets), then every
/// parameter and buffer as little-endian float64. No timestamps, so equal
/// models give equal bytes.
std::vector<std::uint8_t> serialize_checkpoint(MvnnModel& model, const TrainConfig& train);

struct LoadedCheckpoint {
  MvnnModel model;
  TrainConfig train;
};

/// Throws IngestError on a bad magic, version or truncated payload, and
/// ConfigError when the stored tensors do not fit the stored config.
LoadedCheckpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, MvnnModel& model,
                     const TrainConfig& train);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvnn
