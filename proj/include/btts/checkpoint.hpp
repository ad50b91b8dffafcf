#pragma once

#include "btts/corpus.hpp"
#include "btts/model.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace btts {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout (all integers little-endian):
///   "BTTSCKPT"  u32 version
///   u32 n + n bytes      model config as JSON
///   u8 rate_tokens  u32 n_regular  { u32 n + n bytes }*  regular tokens in id order
///   u32 n_tensors  { u32 n + name, u32 rank=2, u32 rows, u32 cols, f32[rows*cols] }*
///   u64 step  u32 n + n bytes   RNG engine state
struct Checkpoint {
  ModelParams<double> params;
  Vocab vocab{{}};
  std::uint64_t step = 0;
  std::string rng_state;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view text);

}  // namespace btts
