#pragma once

// Checkpoint file:
//
//   format_version=1
//   config.<key>=<value>        one per Forecaster::config() entry
//   meta.best_val=<double>
//   meta.epoch=<int>
//   param <name> <d0>x<d1>... <byte offset> <byte length>
//   payload_bytes=<n>
//   <n bytes of little-endian float64 values, parameters in manifest order>

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "amplifier/forecaster.hpp"

namespace amp {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  double best_val = 0.0;
  std::size_t epoch = 0;
};

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

struct LoadedCheckpoint {
  std::unique_ptr<Forecaster> model;
  KeyValues config;
  CheckpointMeta meta;
  std::vector<ManifestEntry> manifest;
  std::size_t payload_bytes = 0;
};

void save_checkpoint(Forecaster& model, const CheckpointMeta& meta, const std::filesystem::path& path);
// Throws CheckpointError on version mismatch, truncation, a corrupt manifest,
// or parameters that disagree with the architecture rebuilt from the config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace amp
